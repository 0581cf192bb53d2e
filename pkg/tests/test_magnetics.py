import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sttram_sentinel.magnetics import (
    NO_CURRENT, FieldProfile, InvalidParams, MtjParams, NoFlipInBracket, SpinCurrent,
    StepTooCoarse, ac_disturb_threshold, default_dt, effective_field, first_flip_time,
    initial_magnetization, integrate, llg_rhs, max_stable_dt, onset_time, resolve_bit,
    simulate_exposure, switching_threshold)

from oracles import symbolic_effective_field, symbolic_rhs

P = MtjParams()
HK = P.h_k
X, Y, Z = (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)
F_RES = P.gamma * HK / (2 * math.pi)

# Frozen outputs of tests/oracles.py.  reference_final: scipy DOP853 at
# rtol 1e-12, bit 1 under 2*h_k DC along +x for 1 ns.
REF_FINAL_1NS = np.array([0.9530859149, 0.0041229073, 0.3026718362])
# swept_threshold over hard-plane crossings (first flipping grid amplitude).
SWEPT_DC_THRESHOLD_HK = 1.000        # 20 ns, grid 1e-3*h_k
SWEPT_SENSOR_THRESHOLD_HK = 0.5      # susceptibility 2, 20 ns, grid 5e-4*h_k
SWEPT_SHORT_THRESHOLD_HK = 2.95      # 0.1 ns, grid 1e-2*h_k


def _sym_field(m, ha, p):
    return symbolic_effective_field(m, ha, p.h_k, p.easy_axis, p.h_demag, p.m_s, p.h_exchange)


class TestTypes:
    def test_defaults(self):
        assert (P.alpha, P.gamma, P.h_k) == (0.01, 1.76e11, 0.05)
        assert P.h_demag == (0.0, 0.0, 1.0) and P.h_exchange == (0.0, 0.0, 0.0)

    @pytest.mark.parametrize("kw", [
        {"alpha": 0.0}, {"gamma": -1.0}, {"h_k": 0.0},
        {"easy_axis": (1.0, 1.0, 0.0)}, {"e_p": (0.0, 0.0, 2.0)},
        {"h_demag": (0.5, 0.5, 0.5)}, {"h_demag": (-0.1, 0.1, 1.0)},
        {"susceptibility_factor": 0.5}, {"h_k": float("nan")},
    ])
    def test_invalid_params_rejected(self, kw):
        with pytest.raises(InvalidParams):
            MtjParams(**kw)

    def test_spin_current(self):
        with pytest.raises(InvalidParams):
            SpinCurrent(i_s=-1.0)
        with pytest.raises(InvalidParams):
            SpinCurrent(i_s=1.0, g_psi=0.0)
        assert SpinCurrent(i_s=1e-3).prefactor == 0.0
        j = SpinCurrent(i_s=1e-3, enabled=True)
        assert j.prefactor == pytest.approx(1e-3 * 1.054571817e-34 * 0.5 / (2 * 1.602176634e-19))

    def test_profile_validation(self):
        with pytest.raises(InvalidParams):
            FieldProfile.ac(0.1, 0.0)
        with pytest.raises(InvalidParams):
            FieldProfile.dc(-0.1)
        with pytest.raises(InvalidParams):
            FieldProfile.dc(0.1, (1.0, 1.0, 0.0))

    def test_ramp_field_is_continuous(self):
        prof = FieldProfile.ramp_ac(0.1, 1e9, 5e-9, Y)
        ts = np.linspace(0, 10e-9, 20001)
        vals = np.array([prof.field_at(t)[1] for t in ts])
        # slope bound of a*sin(wt) ramped linearly: a*(w + 1/ramp)
        bound = 0.1 * (2 * math.pi * 1e9 + 1 / 5e-9) * (ts[1] - ts[0])
        assert np.max(np.abs(np.diff(vals))) <= bound
        assert prof.field_at(0.0)[1] == 0.0

    def test_peak_amplitude(self):
        prof = FieldProfile.ramp_ac(0.1, 1e9, 1e-3)
        assert prof.peak_amplitude(0.5e-3) == pytest.approx(0.05)
        assert prof.peak_amplitude(2e-3) == 0.1
        assert FieldProfile.none().peak_amplitude() == 0.0


class TestEffectiveField:
    def test_perpendicular_m_has_no_anisotropy(self):
        p = MtjParams(easy_axis=Z, e_p=Z, h_demag=(1.0, 0.0, 0.0), m_s=0.0)
        np.testing.assert_array_equal(effective_field(X, p, (0, 0, 0)), [0, 0, 0])

    def test_aligned_m_gets_full_anisotropy(self):
        p = MtjParams(easy_axis=Z, e_p=Z, h_demag=(1.0, 0.0, 0.0), m_s=0.0)
        np.testing.assert_allclose(effective_field(Z, p, (0, 0, 0)), [0, 0, HK])

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_symbolic_sum(self, seed):
        rng = np.random.default_rng(seed)
        m = rng.normal(size=3)
        m /= np.linalg.norm(m)
        ha = rng.normal(size=3) * 0.1
        p = MtjParams(h_demag=tuple(rng.dirichlet([1, 1, 1])),
                      h_exchange=tuple(rng.normal(size=3) * 0.01), m_s=0.8)
        np.testing.assert_allclose(effective_field(m, p, ha), _sym_field(m, ha, p),
                                   rtol=1e-12, atol=1e-15)


class TestLlgRhs:
    def test_parallel_is_fixed_point(self):
        np.testing.assert_array_equal(llg_rhs(X, (0.3, 0, 0), NO_CURRENT, P), [0, 0, 0])

    def test_zero_field(self):
        np.testing.assert_array_equal(llg_rhs(Y, (0, 0, 0), NO_CURRENT, P), [0, 0, 0])

    def test_hand_evaluated(self):
        # m=x, H=z: m x H = -y, m x (m x H) = -z
        h = 0.1
        want = [0.0, P.gamma * h, P.alpha * P.gamma * h]
        np.testing.assert_allclose(llg_rhs(X, (0, 0, h), NO_CURRENT, P), want, rtol=1e-12)
        np.testing.assert_allclose(symbolic_rhs(X, (0, 0, h)), want, rtol=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_with_stt_matches_symbolic(self, seed):
        rng = np.random.default_rng(100 + seed)
        m = rng.normal(size=3)
        m /= np.linalg.norm(m)
        h = rng.normal(size=3) * 0.05
        j = SpinCurrent(i_s=2e-3, g_psi=0.7, enabled=True)
        want = symbolic_rhs(m, h, stt=j.prefactor, e_p=P.e_p)
        np.testing.assert_allclose(llg_rhs(m, h, j, P), want, rtol=1e-10, atol=1e-6)

    def test_disabled_current_has_no_torque(self):
        m = np.array([0.6, 0.8, 0.0])
        j = SpinCurrent(i_s=1.0, enabled=False)
        np.testing.assert_array_equal(llg_rhs(m, (0, 0, 0), j, P), [0, 0, 0])


class TestIntegrate:
    SWITCH = FieldProfile.dc(2 * HK, X)

    def test_zero_duration(self):
        m0 = initial_magnetization(1, P)
        tr = integrate(m0, self.SWITCH, NO_CURRENT, P, 0.0)
        assert len(tr) == 1
        np.testing.assert_allclose(tr.final, m0)

    def test_step_too_coarse(self):
        with pytest.raises(StepTooCoarse):
            integrate(X, self.SWITCH, NO_CURRENT, P, 1e-9, dt=2 * max_stable_dt(P, self.SWITCH))
        with pytest.raises(StepTooCoarse):
            integrate(X, self.SWITCH, NO_CURRENT, P, 1e-9, dt=0.0)

    def test_halving_dt_changes_final_by_less_than_1e6(self):
        m0 = initial_magnetization(1, P)
        dt = default_dt(P, self.SWITCH)
        a = integrate(m0, self.SWITCH, NO_CURRENT, P, 1e-9, dt).final
        b = integrate(m0, self.SWITCH, NO_CURRENT, P, 1e-9, dt / 2).final
        assert np.linalg.norm(a - b) < 1e-6

    def test_matches_independent_integrator(self):
        m0 = initial_magnetization(1, P)
        m = integrate(m0, self.SWITCH, NO_CURRENT, P, 1e-9).final
        assert np.linalg.norm(m - REF_FINAL_1NS) < 1e-6

    def test_anti_aligned_switch_ends_near_field(self):
        m0 = initial_magnetization(1, P)
        m = integrate(m0, self.SWITCH, NO_CURRENT, P, 20e-9).final
        angle = math.degrees(math.acos(min(1.0, float(np.dot(m, X)))))
        assert angle < 1.0

    def test_norm_and_determinism(self):
        m0 = initial_magnetization(0, P)
        prof = FieldProfile.ac(2 * HK, F_RES, Y)
        a = integrate(m0, prof, NO_CURRENT, P, 5e-9)
        b = integrate(m0, prof, NO_CURRENT, P, 5e-9)
        assert np.max(np.abs(np.linalg.norm(a.m, axis=1) - 1.0)) < 1e-9
        assert a.m.tobytes() == b.m.tobytes()
        assert a.t[-1] == pytest.approx(5e-9, rel=1e-12)

    @pytest.mark.parametrize("duration", [1e-9, 10e-9])
    def test_fixed_point_with_field_along_axis(self, duration):
        prof = FieldProfile.dc(0.02, X)
        tr = integrate(np.array(X), prof, NO_CURRENT, P, duration)
        assert np.max(np.linalg.norm(tr.m - np.array(X), axis=1)) < 1e-9

    def test_fourth_order_convergence(self):
        m0 = initial_magnetization(1, P)
        dt = max_stable_dt(P, self.SWITCH)
        ref = integrate(m0, self.SWITCH, NO_CURRENT, P, 1e-9, dt / 8).final
        e1 = np.linalg.norm(integrate(m0, self.SWITCH, NO_CURRENT, P, 1e-9, dt).final - ref)
        e2 = np.linalg.norm(integrate(m0, self.SWITCH, NO_CURRENT, P, 1e-9, dt / 2).final - ref)
        assert e1 / e2 >= 8.0


class TestResolveBit:
    def test_polarities(self):
        assert resolve_bit(np.array(X), X) == 0
        assert resolve_bit(-np.array(X), X) == 1
        assert resolve_bit(np.array(Y), X) == 0

    def test_initial_states(self):
        for bit in (0, 1):
            m = initial_magnetization(bit, P)
            assert resolve_bit(m, P.easy_axis) == bit
            assert math.degrees(math.acos(abs(m[0]))) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            initial_magnetization(2, P)


class TestExposure:
    def test_no_field_never_flips(self):
        for bit in (0, 1):
            out = simulate_exposure(bit, P, FieldProfile.none(), 5e-9)
            assert not out.flipped and out.flip_time is None and out.final_bit == bit

    def test_dc_along_easy_axis_is_unipolar(self):
        prof = FieldProfile.dc(2 * HK, X)
        assert simulate_exposure(1, P, prof, 20e-9).flipped
        assert not simulate_exposure(0, P, prof, 20e-9).flipped

    def test_ac_flips_both(self):
        prof = FieldProfile.ac(2 * HK, F_RES, Y)
        outs = [simulate_exposure(b, P, prof, 20 / F_RES) for b in (0, 1)]
        assert all(o.flipped for o in outs)
        assert all(0 < o.flip_time <= 20 / F_RES for o in outs)

    def test_flip_time_consistency(self):
        prof = FieldProfile.dc(1.5 * HK, X)
        out = simulate_exposure(1, P, prof, 5e-9)
        assert out.flipped
        assert first_flip_time(1, P, prof, 5e-9) == out.flip_time
        assert out.max_norm_drift < 1e-9

    @settings(max_examples=30, deadline=None)
    @given(amp=st.floats(min_value=1e-4, max_value=3.0), sign=st.sampled_from([1.0, -1.0]))
    def test_dc_unipolarity_property(self, amp, sign):
        prof = FieldProfile.dc(amp * HK, (sign, 0.0, 0.0))
        flips = [simulate_exposure(b, P, prof, 2e-9).flipped for b in (0, 1)]
        assert not all(flips)


class TestThresholds:
    def test_dc_threshold_near_hk(self):
        thr = switching_threshold(P, X, 20e-9)
        assert abs(thr / HK - 1.0) < 0.05
        assert thr / HK == pytest.approx(SWEPT_DC_THRESHOLD_HK, abs=2e-3)

    def test_sensor_threshold_is_half(self):
        s = switching_threshold(P.with_susceptibility(2.0), X, 20e-9)
        assert s / HK == pytest.approx(SWEPT_SENSOR_THRESHOLD_HK, abs=2e-3)
        assert s < switching_threshold(P, X, 20e-9)

    def test_short_exposure_needs_more_field(self):
        short = switching_threshold(P, X, 0.1e-9)
        assert short > switching_threshold(P, X, 20e-9)
        assert short / HK == pytest.approx(SWEPT_SHORT_THRESHOLD_HK, abs=0.02)

    def test_no_flip_in_bracket(self):
        with pytest.raises(NoFlipInBracket):
            switching_threshold(P, X, 1e-12)

    def test_ac_threshold_scales_with_susceptibility(self):
        base = ac_disturb_threshold(P, Y, F_RES, 0)
        sens = ac_disturb_threshold(P.with_susceptibility(2.0), Y, F_RES, 0)
        assert base < 2 * HK
        assert sens == pytest.approx(base / 2, rel=2e-3)


class TestOnset:
    def test_none_profile(self):
        assert onset_time(0, P, FieldProfile.none(), 1e-3) is None

    def test_weak_field_never_upsets(self):
        assert onset_time(1, P, FieldProfile.dc(0.5 * HK, X), 1e-3) is None

    def test_long_ramp_orders_sensor_before_data(self):
        prof = FieldProfile.ramp_ac(2 * HK, F_RES, 1e-3, Y)
        data = onset_time(0, P, prof, 2e-3)
        sensor = onset_time(0, P.with_susceptibility(2.0), prof, 2e-3)
        assert sensor == pytest.approx(data / 2, rel=1e-12)
        assert 0 < sensor < data < 1e-3

    def test_short_ramp_integrated_directly(self):
        prof = FieldProfile.ramp_ac(2 * HK, F_RES, 5e-9, Y)
        t = onset_time(0, P, prof, 20e-9)
        assert t == first_flip_time(0, P, prof, 20e-9)

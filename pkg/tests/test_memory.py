import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sttram_sentinel.magnetics import FieldProfile, MtjParams
from sttram_sentinel.memory import (
    DATA, FNV_OFFSET, SENSOR, CapacityExceeded, EpromLayout, ExecutionState, Exhaustive,
    FirmwareImage, InvalidGeometry, Op, ProgramMemory, Statistical, SUPPORT_ASSIST_ROUTINE,
    SUPPORT_REQUEST_ROUTINE, apply_attack, check_integrity, firmware_bytes, firmware_digest,
    fnv1a64, format_digest, new_array, program_firmware, read_data, reset_sensors,
    sensor_pattern, synthetic_identity, write_data)

HK = MtjParams().h_k
F_RES = MtjParams().gamma * HK / (2 * math.pi)


def small_array(rows=4, cols=8, interval=2):
    return new_array(rows, cols, interval)


class TestFnv:
    # published FNV-1a 64-bit test vectors
    @pytest.mark.parametrize("data, want", [
        (b"", 0xCBF29CE484222325),
        (b"a", 0xAF63DC4C8601EC8C),
        (b"foobar", 0x85944171F73967E8),
    ])
    def test_vectors(self, data, want):
        assert fnv1a64(data) == want

    def test_format(self):
        assert format_digest(FNV_OFFSET) == "cbf29ce484222325"
        assert len(format_digest(1)) == 16

    def test_synthetic_identity_depends_on_size_and_seed(self):
        a = synthetic_identity(100, 1)
        assert a == synthetic_identity(100, 1)
        assert a != synthetic_identity(101, 1) and a != synthetic_identity(100, 2)


class TestGeometry:
    def test_sensor_rows_every_1024(self):
        a = new_array(4096, 64)
        assert list(a.sensor_rows) == [0, 1024, 2048, 3072]
        assert a.data_capacity == (4096 - 4) * 8

    def test_single_sensor_row(self):
        assert list(new_array(1024, 64).sensor_rows) == [0]

    @pytest.mark.parametrize("rows, cols", [(1023, 64), (1024, 4), (1024, 12)])
    def test_invalid_geometry(self, rows, cols):
        with pytest.raises(InvalidGeometry):
            new_array(rows, cols)

    def test_sensor_must_be_more_susceptible(self):
        with pytest.raises(InvalidGeometry):
            new_array(1024, 64, sensor_params=MtjParams())

    def test_pristine_layout(self):
        a = new_array(2048, 16)
        np.testing.assert_array_equal(a.bits[0], [1, 0] * 8)
        assert not a.bits[a.data_rows].any()
        assert sensor_pattern(4).tolist() == [1, 0, 1, 0]
        assert (a.class_mask(SENSOR) == ~a.class_mask(DATA)).all()

    def test_params_for(self):
        a = new_array(1024, 8)
        assert a.params_for(DATA) is a.data_params
        assert a.params_for(SENSOR).susceptibility_factor == 2.0
        assert a.params_for(SENSOR, powered=False).susceptibility_factor == 1.5


class TestFirmware:
    def test_digest_mismatch_rejected(self):
        with pytest.raises(ValueError):
            FirmwareImage(b"a", b"b", digest=1)

    def test_empty_image(self):
        a = new_array(1024, 64)
        before = a.bits.copy()
        program_firmware(a, FirmwareImage())
        assert (a.bits == before).all()
        assert firmware_digest(a) == FNV_OFFSET

    def test_exact_capacity_fits(self):
        a = small_array()
        blob = bytes(range(a.data_capacity))
        program_firmware(a, FirmwareImage.from_bytes(blob, 1))
        assert firmware_bytes(a) == blob
        assert a.bits[a.data_rows[-1]].tolist() == np.unpackbits(
            np.frombuffer(blob[-1:], np.uint8)).tolist()
        with pytest.raises(CapacityExceeded):
            program_firmware(a, FirmwareImage(program=blob + b"x"))

    def test_round_trip_1kib(self):
        a = new_array(1024, 64)
        blob = np.random.default_rng(1).integers(0, 256, 1024, dtype=np.uint8).tobytes()
        img = FirmwareImage.from_bytes(blob, 100)
        program_firmware(a, img)
        assert firmware_bytes(a) == blob
        assert firmware_digest(a) == img.digest == fnv1a64(blob)

    def test_same_image_same_digest_and_bit_flip_changes_it(self):
        img = FirmwareImage(b"boot", b"program bytes")
        a, b = new_array(1024, 64), new_array(1024, 64)
        program_firmware(a, img)
        program_firmware(b, img)
        assert firmware_digest(a) == firmware_digest(b)
        b.bits[1, 3] ^= 1
        assert firmware_digest(a) != firmware_digest(b)

    def test_from_file(self, tmp_path):
        p = tmp_path / "fw.bin"
        p.write_bytes(b"\x01\x02\x03\x04")
        img = FirmwareImage.from_file(p, bootloader_size=1)
        assert img.bootloader == b"\x01" and img.program == b"\x02\x03\x04"

    @settings(max_examples=50, deadline=None)
    @given(offset=st.integers(0, 200), data=st.binary(max_size=100))
    def test_write_read_property(self, offset, data):
        a = new_array(64, 32, 16)
        write_data(a, offset, data)
        assert read_data(a, offset, len(data)) == data
        assert check_integrity(a).passed


class TestIntegrity:
    def test_pristine(self):
        r = check_integrity(new_array(2048, 64))
        assert r.passed and r.corrupted_sensor_rows == [] and r.corrupted_sensor_bits == 0

    def test_one_flipped_bit(self):
        a = new_array(2048, 64)
        a.bits[1024, 5] ^= 1
        r = check_integrity(a)
        assert not r.passed and r.corrupted_sensor_rows == [1024] and r.corrupted_sensor_bits == 1

    def test_reset_restores_and_keeps_data(self):
        a = new_array(2048, 64)
        program_firmware(a, FirmwareImage(program=bytes(range(200))))
        digest = firmware_digest(a)
        a.bits[a.sensor_rows] ^= 1
        data_before = a.bits[a.data_rows].copy()
        reset_sensors(a)
        assert check_integrity(a).passed
        assert (a.bits[a.data_rows] == data_before).all()
        assert firmware_digest(a) == digest
        reset_sensors(a)
        assert (a.bits[a.data_rows] == data_before).all()


class TestApplyAttack:
    def test_none_profile(self):
        a = small_array()
        eff = apply_attack(a, FieldProfile.none(), 1e-9)
        assert (eff.data_bits_flipped, eff.sensor_bits_flipped) == (0, 0)
        assert check_integrity(a).passed

    def test_dc_flips_only_ones(self):
        a = small_array()
        write_data(a, 0, b"\xf0\x0f")
        ones = int(a.bits[a.data_rows].sum())
        eff = apply_attack(a, FieldProfile.dc(2 * HK), 20e-9)
        assert eff.data_bits_flipped == ones
        assert eff.sensor_bits_flipped == a.cols // 2 * len(a.sensor_rows)
        assert not a.bits[a.data_rows].any()

    def test_ac_flips_everything_and_modes_agree(self):
        prof = FieldProfile.ac(2 * HK, F_RES, (0.0, 1.0, 0.0))
        dur = 20 / F_RES
        a, b = new_array(2, 8, 2), new_array(2, 8, 2)
        for arr in (a, b):
            write_data(arr, 0, b"\xa5")
        ea = apply_attack(a, prof, dur, Exhaustive())
        eb = apply_attack(b, prof, dur, Statistical(sample_size=4, seed=9))
        assert (ea.data_bits_flipped, ea.sensor_bits_flipped) == (8, 8)
        assert (eb.data_bits_flipped, eb.sensor_bits_flipped) == (8, 8)
        assert (a.bits == b.bits).all()
        r = check_integrity(a)
        assert not r.passed and r.corrupted_sensor_rows == [0]
        assert len(eb.sample) == 4

    def test_duration_must_be_positive(self):
        with pytest.raises(ValueError):
            apply_attack(small_array(), FieldProfile.dc(0.1), 0.0)


class TestProgramMemory:
    def test_virtual_image(self):
        mem = ProgramMemory(new_array(1024, 64), virtual_size=10**8, virtual_identity=42)
        assert mem.digest() == 42 and mem.size == 10**8
        assert mem.read(10**8 - 10, 100) == bytes(10)
        mem.corrupt(mem.array.class_mask(DATA))
        assert mem.digest() != 42
        mem.begin_rewrite()
        mem.write(0, bytes(10**8 // 2))
        assert not mem.commit(10**8, 42)
        mem.write(10**8 // 2, bytes(10**8 // 2))
        assert mem.commit(10**8, 42) and mem.digest() == 42

    def test_materialized_rewrite(self):
        img = FirmwareImage(b"bl", b"firmware body")
        src = ProgramMemory(new_array(1024, 64), img)
        dst = ProgramMemory(new_array(1024, 64), img)
        dst.corrupt(dst.array.class_mask(DATA))
        assert dst.digest() != src.digest()
        dst.begin_rewrite()
        dst.write(0, src.read(0, 8))
        dst.write(8, src.read(8, 100))
        assert dst.commit(len(img), src.digest())
        assert dst.digest() == src.digest() == img.digest


class TestEprom:
    def test_routine_sizes(self):
        e = EpromLayout()
        assert len(e.support_request) == 5 and len(e.support_assist) == 4
        assert e.routine_overhead == 9 < 10
        assert SUPPORT_REQUEST_ROUTINE[0] == Op.SEND_REQUEST
        assert SUPPORT_ASSIST_ROUTINE[-1] == Op.REBOOT

    def test_wrong_routine_size_rejected(self):
        with pytest.raises(ValueError):
            EpromLayout(support_request=bytes(6))

    def test_bootrom_is_read_only(self):
        e = EpromLayout(bootrom=b"rom")
        with pytest.raises(AttributeError):
            e.bootrom = b"other"
        e.save_state(ExecutionState(5))
        e.erase_state()
        assert e.bootrom == b"rom"

    def test_state_round_trip(self):
        e = EpromLayout()
        assert e.load_state() is None
        s1, s2 = ExecutionState(10, b"regs"), ExecutionState(20, b"more")
        e.save_state(s1)
        assert e.load_state() == s1
        e.save_state(s2)
        assert e.load_state() == s2
        e.erase_state()
        assert e.load_state() is None

    def test_invalid_or_oversized_state(self):
        e = EpromLayout(persistent_size=16)
        with pytest.raises(ValueError):
            e.save_state(ExecutionState(1, valid=False))
        with pytest.raises(CapacityExceeded):
            e.save_state(ExecutionState(1, bytes(64)))

"""Independent reference computations used to derive the frozen test values.

Nothing here imports the package's integrator: the trajectory oracle uses
scipy's adaptive DOP853 on the same equation of motion, the torque oracle
evaluates the cross products symbolically with sympy.
"""

import math

import numpy as np
import sympy as sp
from scipy.integrate import solve_ivp

GAMMA = 1.76e11
ALPHA = 0.01
H_K = 0.05
M_S = 1.0
DEMAG = (0.0, 0.0, 1.0)
EASY = (1.0, 0.0, 0.0)


def start_vector(bit, tilt_deg=1.0):
    th = math.radians(tilt_deg)
    sign = 1.0 if bit == 0 else -1.0
    return np.array([sign * math.cos(th), math.sin(th), 0.0])


def symbolic_effective_field(m, h_applied, h_k=H_K, easy=EASY, demag=DEMAG, m_s=M_S,
                             h_ex=(0, 0, 0)):
    M = sp.Matrix([sp.nsimplify(v) for v in m])
    E = sp.Matrix([sp.nsimplify(v) for v in easy])
    Ha = sp.Matrix([sp.nsimplify(v) for v in h_applied])
    Hx = sp.Matrix([sp.nsimplify(v) for v in h_ex])
    D = sp.diag(*[sp.nsimplify(v) for v in demag])
    h = Ha + sp.nsimplify(h_k) * M.dot(E) * E - sp.nsimplify(m_s) * D * M + Hx
    return np.array([float(v) for v in h])


def symbolic_rhs(m, h_eff, gamma=GAMMA, alpha=ALPHA, stt=0.0, e_p=EASY):
    M = sp.Matrix([sp.nsimplify(v) for v in m])
    H = sp.Matrix([sp.nsimplify(v) for v in h_eff])
    P = sp.Matrix([sp.nsimplify(v) for v in e_p])
    g, a, s = sp.nsimplify(gamma), sp.nsimplify(alpha), sp.nsimplify(stt)
    out = -g * M.cross(H) - a * g * M.cross(M.cross(H)) + s * M.cross(M.cross(P))
    return np.array([float(v) for v in out])


def _ode(amp, direction, kind="DC", freq=0.0, susc=1.0):
    d = np.asarray(direction, float)
    e = np.asarray(EASY)
    dm = np.asarray(DEMAG)

    def f(t, m):
        a = amp if kind == "DC" else amp * math.sin(2 * math.pi * freq * t)
        h = susc * a * d + H_K * np.dot(m, e) * e - M_S * dm * m
        c = np.cross(m, h)
        return -GAMMA * c - ALPHA * GAMMA * np.cross(m, c)
    return f


def reference_final(bit, amp, direction, duration, kind="DC", freq=0.0, susc=1.0):
    sol = solve_ivp(_ode(amp, direction, kind, freq, susc), (0.0, duration),
                    start_vector(bit), method="DOP853", rtol=1e-12, atol=1e-14,
                    max_step=1e-12)
    m = sol.y[:, -1]
    return m / np.linalg.norm(m)


def reference_crosses(bit, amp, direction, duration, kind="DC", freq=0.0, susc=1.0):
    """Whether the free layer ever crosses the hard plane (event detection)."""
    def plane(t, m):
        return m[0]
    plane.terminal = True
    sol = solve_ivp(_ode(amp, direction, kind, freq, susc), (0.0, duration),
                    start_vector(bit), method="DOP853", rtol=1e-10, atol=1e-12, max_step=1e-12,
                    events=plane)
    return len(sol.t_events[0]) > 0


def swept_threshold(flips, lo, hi, step):
    """Smallest amplitude on a uniform grid that flips."""
    n = int(round((hi - lo) / step))
    for i in range(n + 1):
        a = lo + i * step
        if flips(a):
            return a
    return None

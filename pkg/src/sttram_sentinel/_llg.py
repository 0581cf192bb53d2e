"""Compiled RK4 kernels for the macrospin equation of motion.

Everything here works on plain floats and float64 arrays so numba can
compile it; the public, validated surface lives in :mod:`magnetics`.
"""

import math

import numba as nb
import numpy as np

KIND_NONE = 0
KIND_DC = 1
KIND_AC = 2
KIND_RAMP_AC = 3

TWO_PI = 2.0 * math.pi


@nb.njit(cache=True)
def field_magnitude(kind, amplitude, frequency, ramp_time, t):
    """Signed scalar amplitude of the applied field at time t."""
    if kind == KIND_NONE:
        return 0.0
    if kind == KIND_DC:
        return amplitude
    s = math.sin(TWO_PI * frequency * t)
    if kind == KIND_AC:
        return amplitude * s
    if ramp_time <= 0.0 or t >= ramp_time:
        return amplitude * s
    return amplitude * (t / ramp_time) * s


@nb.njit(cache=True)
def effective_field(m, h_applied, h_k, easy, demag, m_s, h_ex, out):
    proj = m[0] * easy[0] + m[1] * easy[1] + m[2] * easy[2]
    for i in range(3):
        out[i] = h_applied[i] + h_k * proj * easy[i] - demag[i] * m[i] * m_s + h_ex[i]


@nb.njit(cache=True)
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@nb.njit(cache=True)
def rhs(m, h_eff, gamma, alpha, stt, e_p, out):
    # -g m x H - a g m x (m x H) + stt m x (m x e_p)
    c = np.empty(3)
    cc = np.empty(3)
    _cross(m, h_eff, c)
    _cross(m, c, cc)
    for i in range(3):
        out[i] = -gamma * c[i] - alpha * gamma * cc[i]
    if stt != 0.0:
        _cross(m, e_p, c)
        _cross(m, c, cc)
        for i in range(3):
            out[i] += stt * cc[i]


@nb.njit(cache=True)
def _torque(mx, my, mz, t, kind, amp, direction, freq, ramp, susc,
            gamma, alpha, h_k, easy, demag, m_s, h_ex, stt, e_p):
    # scalar form of effective_field + rhs; avoids temporaries in the hot loop
    a = susc * field_magnitude(kind, amp, freq, ramp, t)
    proj = mx * easy[0] + my * easy[1] + mz * easy[2]
    hx = a * direction[0] + h_k * proj * easy[0] - demag[0] * mx * m_s + h_ex[0]
    hy = a * direction[1] + h_k * proj * easy[1] - demag[1] * my * m_s + h_ex[1]
    hz = a * direction[2] + h_k * proj * easy[2] - demag[2] * mz * m_s + h_ex[2]
    cx = my * hz - mz * hy
    cy = mz * hx - mx * hz
    cz = mx * hy - my * hx
    ox = -gamma * cx - alpha * gamma * (my * cz - mz * cy)
    oy = -gamma * cy - alpha * gamma * (mz * cx - mx * cz)
    oz = -gamma * cz - alpha * gamma * (mx * cy - my * cx)
    if stt != 0.0:
        px = my * e_p[2] - mz * e_p[1]
        py = mz * e_p[0] - mx * e_p[2]
        pz = mx * e_p[1] - my * e_p[0]
        ox += stt * (my * pz - mz * py)
        oy += stt * (mz * px - mx * pz)
        oz += stt * (mx * py - my * px)
    return ox, oy, oz


@nb.njit(cache=True)
def _step(mx, my, mz, t, dt, kind, amp, direction, freq, ramp, susc,
          gamma, alpha, h_k, easy, demag, m_s, h_ex, stt, e_p):
    h = 0.5 * dt
    ax, ay, az = _torque(mx, my, mz, t, kind, amp, direction, freq, ramp, susc,
                         gamma, alpha, h_k, easy, demag, m_s, h_ex, stt, e_p)
    bx, by, bz = _torque(mx + h * ax, my + h * ay, mz + h * az, t + h, kind, amp, direction,
                         freq, ramp, susc, gamma, alpha, h_k, easy, demag, m_s, h_ex, stt, e_p)
    cx, cy, cz = _torque(mx + h * bx, my + h * by, mz + h * bz, t + h, kind, amp, direction,
                         freq, ramp, susc, gamma, alpha, h_k, easy, demag, m_s, h_ex, stt, e_p)
    dx, dy, dz = _torque(mx + dt * cx, my + dt * cy, mz + dt * cz, t + dt, kind, amp, direction,
                         freq, ramp, susc, gamma, alpha, h_k, easy, demag, m_s, h_ex, stt, e_p)
    w = dt / 6.0
    nx = mx + w * (ax + 2.0 * bx + 2.0 * cx + dx)
    ny = my + w * (ay + 2.0 * by + 2.0 * cy + dy)
    nz = mz + w * (az + 2.0 * bz + 2.0 * cz + dz)
    norm = math.sqrt(nx * nx + ny * ny + nz * nz)
    return nx / norm, ny / norm, nz / norm


@nb.njit(cache=True)
def rk4_step(m, t, dt, kind, amp, direction, freq, ramp, susc,
             gamma, alpha, h_k, easy, demag, m_s, h_ex, stt, e_p):
    new = np.empty(3)
    new[0], new[1], new[2] = _step(m[0], m[1], m[2], t, dt, kind, amp, direction, freq, ramp,
                                   susc, gamma, alpha, h_k, easy, demag, m_s, h_ex, stt, e_p)
    return new


@nb.njit(cache=True)
def trajectory(m0, n_steps, dt, kind, amp, direction, freq, ramp, susc,
               gamma, alpha, h_k, easy, demag, m_s, h_ex, stt, e_p):
    out = np.empty((n_steps + 1, 3))
    mx, my, mz = m0[0], m0[1], m0[2]
    out[0] = m0
    for k in range(n_steps):
        mx, my, mz = _step(mx, my, mz, k * dt, dt, kind, amp, direction, freq, ramp, susc,
                           gamma, alpha, h_k, easy, demag, m_s, h_ex, stt, e_p)
        out[k + 1, 0] = mx
        out[k + 1, 1] = my
        out[k + 1, 2] = mz
    return out


@nb.njit(cache=True)
def exposure(m0, n_steps, dt, kind, amp, direction, freq, ramp, susc,
             gamma, alpha, h_k, easy, demag, m_s, h_ex, stt, e_p, stop_at_first=False):
    """Integrate without storing the path.

    Returns (final m, first step index at which the stored polarity changed
    or -1, step index of the last polarity change or -1, max norm drift).
    With ``stop_at_first`` the loop ends at the first change.
    """
    mx, my, mz = m0[0], m0[1], m0[2]
    bit = 1 if (mx * easy[0] + my * easy[1] + mz * easy[2]) < 0.0 else 0
    first = -1
    last = -1
    drift = 0.0
    for k in range(n_steps):
        mx, my, mz = _step(mx, my, mz, k * dt, dt, kind, amp, direction, freq, ramp, susc,
                           gamma, alpha, h_k, easy, demag, m_s, h_ex, stt, e_p)
        d = abs(math.sqrt(mx * mx + my * my + mz * mz) - 1.0)
        if d > drift:
            drift = d
        b = 1 if (mx * easy[0] + my * easy[1] + mz * easy[2]) < 0.0 else 0
        if b != bit:
            if first < 0:
                first = k + 1
                if stop_at_first:
                    break
            last = k + 1
            bit = b
    m = np.empty(3)
    m[0], m[1], m[2] = mx, my, mz
    return m, first, last, drift

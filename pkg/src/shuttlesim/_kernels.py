"""Compiled inner loops shared by the master-equation and Monte Carlo solvers.

The model is flattened into a float64 vector ``theta`` (see :func:`pack`)
so that numba functions can evaluate rates without Python objects.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .constants import E_CHARGE, K_B
from .params import DeviceParams, DriveConfig

# theta layout
CSIGMA, KT, QSTATIC, CBL, CBR, VL, VR, OMEGA = 0, 1, 2, 3, 4, 5, 6, 7
MEAN_BL, HAMP_BL, PHASE_BL, MEAN_BR, HAMP_BR, PHASE_BR = 8, 9, 10, 11, 12, 13
R0_L, VREF_L, VSLOPE_L, RFLOOR_L = 14, 15, 16, 17
R0_R, VREF_R, VSLOPE_R, RFLOOR_R = 18, 19, 20, 21
THETA_SIZE = 22

# event order used by every kernel
IN_L, OUT_L, IN_R, OUT_R = 0, 1, 2, 3

ECH = E_CHARGE


def pack(p: DeviceParams, d: DriveConfig) -> np.ndarray:
    v_l, v_r = p.lead_potentials(d.v_sd)
    th = np.empty(THETA_SIZE)
    th[CSIGMA] = p.c_sigma
    th[KT] = K_B * p.temperature
    th[QSTATIC] = p.c_l * v_l + p.c_r * v_r + p.c_top * d.v_top + p.c_pl * d.v_pl + p.offset_charge
    th[CBL] = p.c_bl
    th[CBR] = p.c_br
    th[VL] = v_l
    th[VR] = v_r
    th[OMEGA] = 2.0 * math.pi * d.f_p
    th[MEAN_BL], th[HAMP_BL], th[PHASE_BL] = d.mean_bl, 0.5 * d.amp_bl, d.phase_bl
    th[MEAN_BR], th[HAMP_BR], th[PHASE_BR] = d.mean_br, 0.5 * d.amp_br, d.phase_br
    for base, law in ((R0_L, p.barrier_left), (R0_R, p.barrier_right)):
        th[base], th[base + 1], th[base + 2], th[base + 3] = law.r0, law.v_ref, law.v_slope, law.r_floor
    return th


@njit(cache=True)
def _thermal(x):
    if abs(x) < 1e-4:
        return 1.0 - 0.5 * x + x * x / 12.0
    if x > 0.0:
        return x * math.exp(-x) / -math.expm1(-x)
    return x / math.expm1(x)


@njit(cache=True)
def _resistance(v, r0, v_ref, v_slope, r_floor):
    r = r0 * math.exp(-(v - v_ref) / v_slope)
    return r if r > r_floor else r_floor


@njit(cache=True)
def rates(theta, n_min, N, t, out):
    """Fill ``out[4, N]`` with event rates at time ``t``.

    Transitions leaving the window ``[n_min, n_min + N - 1]`` get rate 0.
    """
    v_bl = theta[MEAN_BL] + theta[HAMP_BL] * math.sin(theta[OMEGA] * t + theta[PHASE_BL])
    v_br = theta[MEAN_BR] + theta[HAMP_BR] * math.sin(theta[OMEGA] * t + theta[PHASE_BR])
    qp = theta[QSTATIC] + theta[CBL] * v_bl + theta[CBR] * v_br
    kT = theta[KT]
    g_l = kT / (ECH * ECH * _resistance(v_bl, theta[R0_L], theta[VREF_L], theta[VSLOPE_L], theta[RFLOOR_L]))
    g_r = kT / (ECH * ECH * _resistance(v_br, theta[R0_R], theta[VREF_R], theta[VSLOPE_R], theta[RFLOOR_R]))
    ev_l = ECH * theta[VL]
    ev_r = ECH * theta[VR]
    scale = ECH / theta[CSIGMA]
    for i in range(N):
        n = n_min + i
        add = scale * (ECH * (n + 0.5) - qp)  # U(n+1) - U(n)
        rem = -scale * (ECH * (n - 0.5) - qp)  # U(n-1) - U(n)
        if i < N - 1:
            out[IN_L, i] = g_l * _thermal((add + ev_l) / kT)
            out[IN_R, i] = g_r * _thermal((add + ev_r) / kT)
        else:
            out[IN_L, i] = 0.0
            out[IN_R, i] = 0.0
        if i > 0:
            out[OUT_L, i] = g_l * _thermal((rem - ev_l) / kT)
            out[OUT_R, i] = g_r * _thermal((rem - ev_r) / kT)
        else:
            out[OUT_L, i] = 0.0
            out[OUT_R, i] = 0.0


@njit(cache=True)
def generator(theta, n_min, N, t, M, J, r):
    """Master-equation generator ``M`` (N x N, columns sum to zero) and the
    junction flux operator ``J`` (row 0 right junction, row 1 left junction,
    electrons per second, positive for source-to-drain conventional current).
    """
    rates(theta, n_min, N, t, r)
    for i in range(N):
        for j in range(N):
            M[i, j] = 0.0
    for i in range(N):
        up = r[IN_L, i] + r[IN_R, i]
        down = r[OUT_L, i] + r[OUT_R, i]
        M[i, i] = -(up + down)
        if i < N - 1:
            M[i + 1, i] = up
        if i > 0:
            M[i - 1, i] = down
        J[0, i] = r[IN_R, i] - r[OUT_R, i]
        J[1, i] = r[OUT_L, i] - r[IN_L, i]


_S6 = 6.0**0.5
ERR_DIVISOR = 7.0  # 2**3 - 1: assumes stage order 3 (stiff order reduction)
ERR_EXPONENT = 0.2

_C = np.array([(4.0 - _S6) / 10.0, (4.0 + _S6) / 10.0, 1.0])
_A = np.array(
    [
        [(88.0 - 7.0 * _S6) / 360.0, (296.0 - 169.0 * _S6) / 1800.0, (-2.0 + 3.0 * _S6) / 225.0],
        [(296.0 + 169.0 * _S6) / 1800.0, (88.0 + 7.0 * _S6) / 360.0, (-2.0 - 3.0 * _S6) / 225.0],
        [(16.0 - _S6) / 36.0, (16.0 + _S6) / 36.0, 1.0 / 9.0],
    ]
)


@njit(cache=True)
def _solve3(a, b, ncol):
    """In-place solve of the 3x3 system ``a x = b[:, :ncol]`` with partial
    pivoting; the solution overwrites ``b``."""
    for c in range(3):
        piv = c
        for rr in range(c + 1, 3):
            if abs(a[rr, c]) > abs(a[piv, c]):
                piv = rr
        if piv != c:
            for j in range(3):
                tmp = a[c, j]
                a[c, j] = a[piv, j]
                a[piv, j] = tmp
            for k in range(ncol):
                tmp = b[c, k]
                b[c, k] = b[piv, k]
                b[piv, k] = tmp
        for rr in range(c + 1, 3):
            f = a[rr, c] / a[c, c]
            for j in range(c, 3):
                a[rr, j] -= f * a[c, j]
            for k in range(ncol):
                b[rr, k] -= f * b[c, k]
    for c in range(2, -1, -1):
        for k in range(ncol):
            acc = b[c, k]
            for j in range(c + 1, 3):
                acc -= a[c, j] * b[j, k]
            b[c, k] = acc / a[c, c]


@njit(cache=True)
def stage_solve(h, Ms, rhs, work, Z):
    """Solve the Radau stage equations ``Z_s - h sum_t a_st M_t Z_t = rhs_s``.

    ``Ms`` holds the three tridiagonal generators; ``rhs`` and ``Z`` have
    shape ``(N, 3, K)`` (state-major), ``work`` shape ``(N, 3, 3 + K)``.
    The system is block tridiagonal in the state index with 3 x 3 blocks
    and is solved by block elimination.
    """
    N = rhs.shape[0]
    K = rhs.shape[2]
    D = np.empty((3, 3))
    L = np.empty((3, 3))
    for i in range(N):
        for a_ in range(3):
            for b_ in range(3):
                c = -h * _A[a_, b_]
                D[a_, b_] = c * Ms[b_, i, i]
                L[a_, b_] = c * Ms[b_, i, i - 1] if i > 0 else 0.0
                # right-hand block [U | rhs]
                work[i, a_, b_] = c * Ms[b_, i, i + 1] if i < N - 1 else 0.0
            D[a_, a_] += 1.0
            for k in range(K):
                work[i, a_, 3 + k] = rhs[i, a_, k]
        if i > 0:
            # D -= L Cp[i-1];  rhs_i -= L Rp[i-1]
            for a_ in range(3):
                for b_ in range(3):
                    acc = 0.0
                    for c_ in range(3):
                        acc += L[a_, c_] * work[i - 1, c_, b_]
                    D[a_, b_] -= acc
                for k in range(K):
                    acc = 0.0
                    for c_ in range(3):
                        acc += L[a_, c_] * work[i - 1, c_, 3 + k]
                    work[i, a_, 3 + k] -= acc
        _solve3(D, work[i], 3 + K)
    for a_ in range(3):
        for k in range(K):
            Z[N - 1, a_, k] = work[N - 1, a_, 3 + k]
    for i in range(N - 2, -1, -1):
        for a_ in range(3):
            for k in range(K):
                acc = work[i, a_, 3 + k]
                for c_ in range(3):
                    acc -= work[i, a_, c_] * Z[i + 1, c_, k]
                Z[i, a_, k] = acc


@njit(cache=True)
def _stage_step(theta, n_min, N, t, h, P, Ms, Js, r, rhs, work, Z, P_out, dQ):
    """One Radau IIA step for ``P' = M(t) P`` plus the exact stage
    quadrature of the junction fluxes, written to ``P_out`` and ``dQ``."""
    K = P.shape[1]
    for s in range(3):
        generator(theta, n_min, N, t + _C[s] * h, Ms[s], Js[s], r)
    rhs[:, :, :] = 0.0
    for s in range(3):
        for i in range(N):
            lo = i - 1 if i > 0 else 0
            hi = i + 2 if i < N - 1 else N
            for k in range(K):
                mp = 0.0
                for j in range(lo, hi):
                    mp += Ms[s, i, j] * P[j, k]
                for bi in range(3):
                    rhs[i, bi, k] += h * _A[bi, s] * mp
    stage_solve(h, Ms, rhs, work, Z)
    for k in range(K):
        dQ[0, k] = 0.0
        dQ[1, k] = 0.0
        for i in range(N):
            P_out[i, k] = P[i, k] + Z[i, 2, k]
            for s in range(3):
                y = P[i, k] + Z[i, s, k]
                w = h * _A[2, s]
                dQ[0, k] += w * Js[s, 0, i] * y
                dQ[1, k] += w * Js[s, 1, i] * y


@njit(cache=True)
def _err_norm(d, y, y_new, rtol, atol):
    # max over columns of the RMS-scaled error
    m, K = d.shape
    worst = 0.0
    for k in range(K):
        s = 0.0
        for i in range(m):
            sc = atol + rtol * max(abs(y[i, k]), abs(y_new[i, k]))
            s += (d[i, k] / sc) ** 2
        s = math.sqrt(s / m)
        if s > worst:
            worst = s
    return worst


@njit(cache=True)
def radau(theta, n_min, N, P0, t0, t1, rtol, atol, h0, stops, slots, n_samples, max_steps):
    """Integrate ``P' = M(t) P`` and the junction charges from ``t0`` to ``t1``.

    Radau IIA (order 5) with step-doubling error control. ``P0`` has shape
    ``(N, K)``. Steps are clipped so that every time in the sorted array
    ``stops`` is hit exactly (sampling times and the kinks of the clamped
    resistances); the state at ``stops[i]`` is stored in
    ``samples[slots[i]]`` unless ``slots[i] < 0``.

    Returns ``(P1, Q1, samples, stats)``: ``Q1[0]``/``Q1[1]`` are electrons
    transferred through the right/left junction, ``stats`` is
    ``[accepted, rejected, rate_evaluations, status]`` with ``status`` 1 when
    ``max_steps`` was exceeded.
    """
    K = P0.shape[1]
    P = P0.copy()
    Q = np.zeros((2, K))
    n_stops = stops.shape[0]
    samples = np.zeros((n_samples, N, K))
    gi = 0
    while gi < n_stops and stops[gi] <= t0:
        if slots[gi] >= 0:
            samples[slots[gi]] = P
        gi += 1

    r = np.empty((4, N))
    Ms = np.empty((3, N, N))
    Js = np.empty((3, 2, N))
    rhs = np.empty((N, 3, K))
    work = np.empty((N, 3, 3 + K))
    Z = np.empty((N, 3, K))
    P1 = np.empty((N, K))
    Ph = np.empty((N, K))
    P2 = np.empty((N, K))
    dQ1 = np.empty((2, K))
    dQh = np.empty((2, K))
    dQ2 = np.empty((2, K))
    y_old = np.empty((N + 2, K))
    y_new = np.empty((N + 2, K))
    diff = np.empty((N + 2, K))
    n_eval = 0
    accepted = 0
    rejected = 0
    status = 0
    t = t0
    h = h0
    while t < t1:
        if accepted + rejected >= max_steps:
            status = 1
            break
        target = t1
        if gi < n_stops and stops[gi] < target:
            target = stops[gi]
        hit = False
        if t + h >= target or target - (t + h) < 1e-3 * h:
            h = target - t
            hit = True
        _stage_step(theta, n_min, N, t, h, P, Ms, Js, r, rhs, work, Z, P1, dQ1)
        _stage_step(theta, n_min, N, t, 0.5 * h, P, Ms, Js, r, rhs, work, Z, Ph, dQh)
        _stage_step(theta, n_min, N, t + 0.5 * h, 0.5 * h, Ph, Ms, Js, r, rhs, work, Z, P2, dQ2)
        n_eval += 9
        y_old[:N] = P
        y_old[N:] = Q
        y_new[:N] = P2
        y_new[N:] = Q + dQh + dQ2
        diff[:N] = (P2 - P1) / ERR_DIVISOR
        diff[N:] = (dQh + dQ2 - dQ1) / ERR_DIVISOR
        en = _err_norm(diff, y_old, y_new, rtol, atol)
        if en > 1.0:
            rejected += 1
            fac = 0.9 * en ** -ERR_EXPONENT
            h = h * (fac if fac > 0.2 else 0.2)
            continue
        accepted += 1
        t = target if hit else t + h
        P[:, :] = P2
        Q[:, :] = y_new[N:]
        while hit and gi < n_stops and stops[gi] <= t:
            if slots[gi] >= 0:
                samples[slots[gi]] = P
            gi += 1
        fac = 5.0 if en == 0.0 else min(5.0, 0.9 * en ** -ERR_EXPONENT)
        h = h * fac
    stats = np.array([accepted, rejected, n_eval, status])
    return P, Q, samples, stats

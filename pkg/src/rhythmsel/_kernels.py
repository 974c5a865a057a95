"""Compiled forward/backward loops for the recurrent cells.

Activation codes: 0 relu, 1 tanh, 2 sigmoid. All kernels are elementwise per
hidden unit, so they work for float32 and float64 inputs alike.
"""

import math

import numpy as np
from numba import njit

ACT_CODES = {"relu": 0, "tanh": 1, "sigmoid": 2}


@njit(cache=True, inline="always")
def _sig(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True, inline="always")
def _act(code, a):
    if code == 0:
        return a if a > 0 else 0.0
    if code == 1:
        return math.tanh(a)
    return _sig(a)


@njit(cache=True, inline="always")
def _dact(code, a, y):
    if code == 0:
        return 1.0 if a > 0 else 0.0
    if code == 1:
        return 1.0 - y * y
    return y * (1.0 - y)


@njit(cache=True)
def indrnn_forward(P, u, code):
    T, H = P.shape
    A = np.empty_like(P)
    Y = np.empty_like(P)
    for j in range(H):
        h = 0.0
        for t in range(T):
            a = P[t, j] + u[j] * h
            A[t, j] = a
            Y[t, j] = _act(code, a)
            h = Y[t, j]
    return A, Y


@njit(cache=True)
def indrnn_backward(G, A, Y, u, code):
    T, H = A.shape
    dP = np.empty_like(A)
    du = np.zeros_like(u)
    for j in range(H):
        carry = 0.0
        acc = 0.0
        for t in range(T - 1, -1, -1):
            da = (G[t, j] + carry) * _dact(code, A[t, j], Y[t, j])
            dP[t, j] = da
            if t > 0:
                acc += da * Y[t - 1, j]
            carry = da * u[j]
        du[j] = acc
    return dP, du


@njit(cache=True)
def skip_forward(P, u, wp, bp, code, frozen, F_dec, F_ref):
    """Returns (A, C, Hs, G, Dl, Ut, Un, Bin, pick, ok); ok=False if u-tilde left [0,1]."""
    T, H = P.shape
    A = np.empty_like(P)
    C = np.empty_like(P)
    Hs = np.empty_like(P)
    G = np.empty_like(P)
    Dl = np.empty_like(P)
    Ut = np.empty_like(P)
    Un = np.empty_like(P)
    Bin = np.empty_like(P)
    pick = np.empty(P.shape, dtype=np.bool_)
    ok = True
    for j in range(H):
        h = 0.0
        ut = 1.0
        for t in range(T):
            a = P[t, j] + u[j] * h
            cand = _act(code, a)
            if frozen:
                b = F_dec[t, j]
                g = b + (ut - F_ref[t, j])
            else:
                if ut < 0.0 or ut > 1.0:
                    ok = False
                b = 1.0 if ut >= 0.5 else 0.0
                g = b
            h_new = g * cand + (1.0 - g) * h
            delta = _sig(wp[j] * h_new + bp[j])
            room = 1.0 - ut
            pk = delta <= room
            m = delta if pk else room
            u_next = g * delta + (1.0 - g) * (ut + m)
            A[t, j] = a
            C[t, j] = cand
            Hs[t, j] = h_new
            G[t, j] = g
            Dl[t, j] = delta
            Ut[t, j] = ut
            Un[t, j] = u_next
            Bin[t, j] = b
            pick[t, j] = pk
            h = Hs[t, j]
            ut = Un[t, j]
    return A, C, Hs, G, Dl, Ut, Un, Bin, pick, ok


@njit(cache=True)
def skip_backward(Gout, A, C, Hs, G, Dl, Ut, pick, u, wp, code):
    T, H = A.shape
    dP = np.empty_like(A)
    du = np.zeros_like(u)
    dwp = np.zeros_like(wp)
    dbp = np.zeros_like(wp)
    for j in range(H):
        dh_carry = 0.0
        dut_carry = 0.0
        acc_u = 0.0
        acc_wp = 0.0
        acc_bp = 0.0
        for t in range(T - 1, -1, -1):
            g = G[t, j]
            delta = Dl[t, j]
            utt = Ut[t, j]
            pk = 1.0 if pick[t, j] else 0.0
            h_prev = Hs[t - 1, j] if t > 0 else 0.0
            m = delta if pick[t, j] else 1.0 - utt
            dg = dut_carry * (delta - utt - m)
            ddelta = dut_carry * (g + (1.0 - g) * pk)
            dut = dut_carry * (1.0 - g) * pk
            ds = ddelta * delta * (1.0 - delta)
            acc_wp += ds * Hs[t, j]
            acc_bp += ds
            dh = Gout[t, j] + dh_carry + ds * wp[j]
            dcand = dh * g
            dh_prev = dh * (1.0 - g)
            dg += dh * (C[t, j] - h_prev)
            dut += dg
            da = dcand * _dact(code, A[t, j], C[t, j])
            dP[t, j] = da
            acc_u += da * h_prev
            dh_prev += da * u[j]
            dh_carry = dh_prev
            dut_carry = dut
        du[j] = acc_u
        dwp[j] = acc_wp
        dbp[j] = acc_bp
    return dP, du, dwp, dbp


@njit(cache=True)
def gru_forward(GX, U):
    T = GX.shape[0]
    H = U.shape[1]
    Z = np.empty((T, H), GX.dtype)
    R = np.empty((T, H), GX.dtype)
    N = np.empty((T, H), GX.dtype)
    Hs = np.empty((T, H), GX.dtype)
    Hprev = np.empty((T, H), GX.dtype)
    h = np.zeros(H, GX.dtype)
    rh = np.empty(H, GX.dtype)
    for t in range(T):
        for j in range(H):
            Hprev[t, j] = h[j]
        for j in range(H):
            sz = GX[t, j]
            sr = GX[t, H + j]
            for k in range(H):
                sz += U[j, k] * h[k]
                sr += U[H + j, k] * h[k]
            Z[t, j] = _sig(sz)
            R[t, j] = _sig(sr)
        for k in range(H):
            rh[k] = R[t, k] * h[k]
        for j in range(H):
            sn = GX[t, 2 * H + j]
            for k in range(H):
                sn += U[2 * H + j, k] * rh[k]
            N[t, j] = math.tanh(sn)
        for j in range(H):
            Hs[t, j] = (1.0 - Z[t, j]) * h[j] + Z[t, j] * N[t, j]
        for j in range(H):
            h[j] = Hs[t, j]
    return Z, R, N, Hs, Hprev


@njit(cache=True)
def gru_backward(Gout, Z, R, N, Hprev, U):
    T, H = Z.shape
    dGX = np.empty((T, 3 * H), Z.dtype)
    carry = np.zeros(H, Z.dtype)
    dh = np.empty(H, Z.dtype)
    drh = np.empty(H, Z.dtype)
    for t in range(T - 1, -1, -1):
        for j in range(H):
            dh[j] = Gout[t, j] + carry[j]
            z = Z[t, j]
            n = N[t, j]
            dGX[t, 2 * H + j] = dh[j] * z * (1.0 - n * n)
            dGX[t, j] = dh[j] * (n - Hprev[t, j]) * z * (1.0 - z)
        for k in range(H):
            s = 0.0
            for j in range(H):
                s += U[2 * H + j, k] * dGX[t, 2 * H + j]
            drh[k] = s
        for k in range(H):
            r = R[t, k]
            dGX[t, H + k] = drh[k] * Hprev[t, k] * r * (1.0 - r)
        for k in range(H):
            s = dh[k] * (1.0 - Z[t, k]) + drh[k] * R[t, k]
            for j in range(2 * H):
                s += U[j, k] * dGX[t, j]
            carry[k] = s
    return dGX

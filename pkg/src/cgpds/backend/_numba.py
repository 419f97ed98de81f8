"""Jit-compiled implementation of the expectation kernels.

Mirrors _numpy exactly (same signatures, same math); explicit loops avoid the
(N, Ma, Mb, Q) temporaries so the per-iteration sweep stays cache-friendly.
Serial on purpose: fixed summation order keeps results reproducible run to
run regardless of thread count.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def psi1_fwd(sig2, ell2, Z, mu, s):
    N, Q = mu.shape
    M = Z.shape[0]
    out = np.empty((N, M))
    for n in range(N):
        det = 1.0
        for q in range(Q):
            det *= np.sqrt(ell2[q] / (ell2[q] + s[n, q]))
        for m in range(M):
            expo = 0.0
            for q in range(Q):
                d = mu[n, q] - Z[m, q]
                expo -= 0.5 * d * d / (ell2[q] + s[n, q])
            out[n, m] = sig2 * det * np.exp(expo)
    return out


@njit(cache=True)
def psi1_bwd(adj, sig2, ell2, Z, mu, s):
    N, Q = mu.shape
    M = Z.shape[0]
    g_sig2 = 0.0
    g_ell2 = np.zeros(Q)
    g_z = np.zeros((M, Q))
    g_mu = np.zeros((N, Q))
    g_s = np.zeros((N, Q))
    for n in range(N):
        det = 1.0
        for q in range(Q):
            det *= np.sqrt(ell2[q] / (ell2[q] + s[n, q]))
        for m in range(M):
            expo = 0.0
            for q in range(Q):
                d = mu[n, q] - Z[m, q]
                expo -= 0.5 * d * d / (ell2[q] + s[n, q])
            w = adj[n, m] * sig2 * det * np.exp(expo)
            if w == 0.0:
                continue
            g_sig2 += w / sig2
            for q in range(Q):
                t = ell2[q] + s[n, q]
                d = mu[n, q] - Z[m, q]
                dot = d / t
                half = 0.5 * (d * d / (t * t) - 1.0 / t)
                g_mu[n, q] -= w * dot
                g_z[m, q] += w * dot
                g_s[n, q] += w * half
                g_ell2[q] += w * (half + 0.5 / ell2[q])
    return g_sig2, g_ell2, g_z, g_mu, g_s


@njit(cache=True)
def omega_point(sig2a, ell2a, Za, sig2b, ell2b, Zb, mu, s):
    N, Q = mu.shape
    Ma = Za.shape[0]
    Mb = Zb.shape[0]
    ab = ell2a + ell2b
    gam = ell2a * ell2b / ab
    out = np.empty((N, Ma, Mb))
    for n in range(N):
        det = 1.0
        for q in range(Q):
            det *= np.sqrt(gam[q] / (gam[q] + s[n, q]))
        for i in range(Ma):
            for k in range(Mb):
                expo = 0.0
                for q in range(Q):
                    dz = Za[i, q] - Zb[k, q]
                    c = (ell2b[q] * Za[i, q] + ell2a[q] * Zb[k, q]) / ab[q]
                    e = mu[n, q] - c
                    expo -= 0.5 * dz * dz / ab[q] + 0.5 * e * e / (gam[q] + s[n, q])
                out[n, i, k] = sig2a * sig2b * det * np.exp(expo)
    return out


@njit(cache=True)
def omega_fwd(sig2a, ell2a, Za, sig2b, ell2b, Zb, mu, s, w):
    N, Q = mu.shape
    Ma = Za.shape[0]
    Mb = Zb.shape[0]
    ab = ell2a + ell2b
    gam = ell2a * ell2b / ab
    out = np.zeros((Ma, Mb))
    for n in range(N):
        if w[n] == 0.0:
            continue
        det = 1.0
        for q in range(Q):
            det *= np.sqrt(gam[q] / (gam[q] + s[n, q]))
        for i in range(Ma):
            for k in range(Mb):
                expo = 0.0
                for q in range(Q):
                    dz = Za[i, q] - Zb[k, q]
                    c = (ell2b[q] * Za[i, q] + ell2a[q] * Zb[k, q]) / ab[q]
                    e = mu[n, q] - c
                    expo -= 0.5 * dz * dz / ab[q] + 0.5 * e * e / (gam[q] + s[n, q])
                out[i, k] += w[n] * sig2a * sig2b * det * np.exp(expo)
    return out


@njit(cache=True)
def omega_bwd(adj, sig2a, ell2a, Za, sig2b, ell2b, Zb, mu, s, w):
    N, Q = mu.shape
    Ma = Za.shape[0]
    Mb = Zb.shape[0]
    ab = ell2a + ell2b
    gam = ell2a * ell2b / ab
    g_sig2a = 0.0
    g_sig2b = 0.0
    g_ell2a = np.zeros(Q)
    g_ell2b = np.zeros(Q)
    g_za = np.zeros((Ma, Q))
    g_zb = np.zeros((Mb, Q))
    g_mu = np.zeros((N, Q))
    g_s = np.zeros((N, Q))
    for n in range(N):
        if w[n] == 0.0:
            continue
        det = 1.0
        for q in range(Q):
            det *= np.sqrt(gam[q] / (gam[q] + s[n, q]))
        for i in range(Ma):
            for k in range(Mb):
                expo = 0.0
                for q in range(Q):
                    dz = Za[i, q] - Zb[k, q]
                    c = (ell2b[q] * Za[i, q] + ell2a[q] * Zb[k, q]) / ab[q]
                    e = mu[n, q] - c
                    expo -= 0.5 * dz * dz / ab[q] + 0.5 * e * e / (gam[q] + s[n, q])
                base = w[n] * adj[i, k] * sig2a * sig2b * det * np.exp(expo)
                if base == 0.0:
                    continue
                g_sig2a += base / sig2a
                g_sig2b += base / sig2b
                for q in range(Q):
                    dz = Za[i, q] - Zb[k, q]
                    c = (ell2b[q] * Za[i, q] + ell2a[q] * Zb[k, q]) / ab[q]
                    e = mu[n, q] - c
                    ts = gam[q] + s[n, q]
                    einv = e / ts
                    ia = 1.0 / ab[q]
                    g_mu[n, q] -= base * einv
                    g_s[n, q] += base * (0.5 * einv * einv - 0.5 / ts)
                    g_za[i, q] += base * (-dz * ia + einv * ell2b[q] * ia)
                    g_zb[k, q] += base * (dz * ia + einv * ell2a[q] * ia)
                    aux = 0.5 / gam[q] - 0.5 / ts + 0.5 * einv * einv
                    ia2 = ia * ia
                    lead2 = 0.5 * dz * dz * ia2
                    g_ell2a[q] += base * (lead2 + aux * ell2b[q] * ell2b[q] * ia2 - einv * ell2b[q] * dz * ia2)
                    g_ell2b[q] += base * (lead2 + aux * ell2a[q] * ell2a[q] * ia2 + einv * ell2a[q] * dz * ia2)
    return g_sig2a, g_sig2b, g_ell2a, g_ell2b, g_za, g_zb, g_mu, g_s

"""Vectorized numpy implementation of the expectation kernels.

Reference path for the jit backend: same signatures, same formulas, broadcast
over (N, Ma, Mb, Q) temporaries instead of explicit loops.  All expectations
are over independent Gaussians x_n ~ N(mu[n], diag(s[n])) and anisotropic
squared-exponential kernels k(x, z) = s2 * exp(-0.5 sum_q (x_q-z_q)^2/ell2_q),
with ell2 the squared lengthscales.

psi1_fwd    E[k(x_n, z_m)]                              -> (N, M)
omega_fwd   sum_n w_n E[ka(za_i, x_n) kb(x_n, zb_k)]    -> (Ma, Mb)
omega_point per-point version of omega_fwd, no weights  -> (N, Ma, Mb)
*_bwd       gradients of <adj, forward> w.r.t. every input
"""

import numpy as np


def psi1_fwd(sig2, ell2, Z, mu, s):
    t = ell2[None, :] + s                                        # N x Q
    d = mu[:, None, :] - Z[None, :, :]                           # N x M x Q
    det = -0.5 * np.sum(np.log1p(s / ell2[None, :]), axis=1)     # N
    quad = -0.5 * np.sum(d**2 / t[:, None, :], axis=2)           # N x M
    return sig2 * np.exp(det[:, None] + quad)


def psi1_bwd(adj, sig2, ell2, Z, mu, s):
    t = ell2[None, :] + s
    d = mu[:, None, :] - Z[None, :, :]
    W = adj * psi1_fwd(sig2, ell2, Z, mu, s)                     # N x M
    tb = t[:, None, :]
    dot = d / tb
    half = 0.5 * (d**2 / tb**2 - 1.0 / tb)                       # N x M x Q
    WB = W[:, :, None]
    g_sig2 = W.sum() / sig2
    g_mu = -(WB * dot).sum(axis=1)
    g_z = (WB * dot).sum(axis=0)
    g_s = (WB * half).sum(axis=1)
    g_ell2 = (WB * half).sum(axis=(0, 1)) + 0.5 * W.sum() / ell2
    return g_sig2, g_ell2, g_z, g_mu, g_s


def _omega_pieces(ell2a, Za, ell2b, Zb, mu, s):
    ab = ell2a + ell2b                                           # Q
    gam = ell2a * ell2b / ab                                     # Q
    dz = Za[:, None, :] - Zb[None, :, :]                         # Ma x Mb x Q
    c = (ell2b * Za[:, None, :] + ell2a * Zb[None, :, :]) / ab   # Ma x Mb x Q
    ts = gam[None, :] + s                                        # N x Q
    lead = -0.5 * np.sum(dz**2 / ab, axis=2)                     # Ma x Mb
    det = -0.5 * np.sum(np.log1p(s / gam[None, :]), axis=1)      # N
    e = mu[:, None, None, :] - c[None, :, :, :]                  # N x Ma x Mb x Q
    quad = -0.5 * np.sum(e**2 / ts[:, None, None, :], axis=3)    # N x Ma x Mb
    return ab, gam, dz, ts, lead, det, e, quad


def omega_point(sig2a, ell2a, Za, sig2b, ell2b, Zb, mu, s):
    _, _, _, _, lead, det, _, quad = _omega_pieces(ell2a, Za, ell2b, Zb, mu, s)
    return sig2a * sig2b * np.exp(lead[None, :, :] + det[:, None, None] + quad)


def omega_fwd(sig2a, ell2a, Za, sig2b, ell2b, Zb, mu, s, w):
    om = omega_point(sig2a, ell2a, Za, sig2b, ell2b, Zb, mu, s)
    return np.tensordot(w, om, axes=(0, 0))


def omega_bwd(adj, sig2a, ell2a, Za, sig2b, ell2b, Zb, mu, s, w):
    ab, gam, dz, ts, lead, det, e, quad = _omega_pieces(ell2a, Za, ell2b, Zb, mu, s)
    om = sig2a * sig2b * np.exp(lead[None, :, :] + det[:, None, None] + quad)
    base = om * w[:, None, None] * adj[None, :, :]               # N x Ma x Mb
    tsb = ts[:, None, None, :]
    einv = e / tsb                                               # N x Ma x Mb x Q
    BB = base[:, :, :, None]
    tot = base.sum()
    g_sig2a = tot / sig2a
    g_sig2b = tot / sig2b
    g_mu = -(BB * einv).sum(axis=(1, 2))
    g_s = (BB * (0.5 * einv**2 - 0.5 / tsb)).sum(axis=(1, 2))
    ia = 1.0 / ab
    g_za = (BB * (-dz * ia + einv * (ell2b * ia))).sum(axis=(0, 2))
    g_zb = (BB * (dz * ia + einv * (ell2a * ia))).sum(axis=(0, 1))
    aux = 0.5 / gam - 0.5 / tsb + 0.5 * einv**2                  # N x Ma x Mb x Q
    ia2 = ia**2
    lead2 = 0.5 * dz**2 * ia2                                    # Ma x Mb x Q
    g_ell2a = (BB * (lead2 + aux * (ell2b**2 * ia2) - einv * (ell2b * ia2) * dz)).sum(axis=(0, 1, 2))
    g_ell2b = (BB * (lead2 + aux * (ell2a**2 * ia2) + einv * (ell2a * ia2) * dz)).sum(axis=(0, 1, 2))
    return g_sig2a, g_sig2b, g_ell2a, g_ell2b, g_za, g_zb, g_mu, g_s

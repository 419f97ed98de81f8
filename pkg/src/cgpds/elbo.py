"""Evidence lower bound: value, per-dimension decomposition, dimension
minibatches, closed-form gradients, and the jointly-optimal Gaussian over
inducing values.

Per process a (local processes first, the shared process last) write
A_a = K_a^{-1}, r_a = A_a m_a, Lambda_a = A_a S_a A_a - A_a.  One output
dimension's expected log-likelihood then depends on q only through shared
statistics:

  L_d = (N/2) log(beta / 2 pi)
        - (beta/2) [ y_d'y_d - 2 c_d' p_d + c_d' (G + diag H) c_d ]

with c_d = (w_d1, .., w_dJ, 1), p_d[a] = y_d' Psi1^a r_a,
G_ab = r_a' Omega^{ab} r_b and H_a = tr(Lambda_a Omega^{aa}) + psi0^a.
Everything in this module is assembled from that one set of statistics, so
the per-dimension terms, the minibatch estimate, and the gradients all agree
by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import backend
from .errors import ConfigurationError, DataError, NumericalError
from .kernels import kernel_gradients, zero_lag_variance
from .latent_prior import (JITTER, gaussian_prior_kl, gaussian_prior_kl_grads,
                           temporal_gram)
from .model import ModelState, parameter_blocks
from .numerics import logdet_from_chol, spd_inverse, cholesky_lower
from .sparse_layer import kl_inducing, prior_gram, psi_statistics


@dataclass
class ElboBreakdown:
    """The bound split into its three ingredients.

    total is assembled as sum(per_dim_terms) - kl_inducing - kl_latent, the
    same expression the minibatch estimator reduces to at full batch.
    """

    per_dim_terms: np.ndarray
    kl_inducing: float
    kl_latent: float

    @property
    def total(self) -> float:
        return float(np.sum(self.per_dim_terms)) - self.kl_inducing - self.kl_latent


@dataclass
class _Shared:
    """Quantities computed once per evaluation and reused everywhere."""

    procs: list
    priors: list
    A: list
    r: list
    S: list
    Lam: list
    psi: object
    U: np.ndarray        # N x (J+1), columns Psi1^a r_a
    G: np.ndarray        # (J+1) x (J+1)
    H: np.ndarray        # (J+1,)
    C: np.ndarray        # D x (J+1), rows (w_d, 1)


def _numeric_dump(state: ModelState) -> str:
    sig = ", ".join(f"{zero_lag_variance(sp, pa):.4g}"
                    for sp, pa in state.latent_processes())
    return (f"N={state.n} D={state.d} Q={state.q} J={state.j} M={state.m} "
            f"beta={state.beta:.6g} signal_variances=[{sig}]")


def _shared(state: ModelState) -> _Shared:
    procs = state.latent_processes()
    priors = [prior_gram(spec, par, ind)
              for (spec, par), ind in zip(procs, state.inducing)]
    A = [spd_inverse(p.L) for p in priors]
    r = [A[a] @ state.qu[a].mean for a in range(len(procs))]
    S = [qu.cov() for qu in state.qu]
    Lam = [A[a] @ S[a] @ A[a] - A[a] for a in range(len(procs))]
    psi = psi_statistics(procs, state.inducing, state.qx)
    na = len(procs)
    U = np.column_stack([psi.psi1[a] @ r[a] for a in range(na)])
    G = np.empty((na, na))
    H = np.empty(na)
    for a in range(na):
        for b in range(a, na):
            G[a, b] = G[b, a] = r[a] @ psi.omega(a, b) @ r[b]
        H[a] = np.sum(Lam[a] * psi.omega(a, a)) + psi.psi0[a]
    C = np.column_stack([state.W, np.ones(state.d)])
    return _Shared(procs, priors, A, r, S, Lam, psi, U, G, H, C)


def _dim_values(state: ModelState, sh: _Shared, Y: np.ndarray, dims: np.ndarray):
    """(L_d, bracket_d) for the requested dimensions; every entry is computed
    from dimension-d data alone, so values do not depend on the batch."""
    Yb = Y[:, dims]
    Cb = sh.C[dims]
    P = Yb.T @ sh.U
    yy = np.einsum("nd,nd->d", Yb, Yb)
    quad = np.einsum("bi,bi->b", Cb @ (sh.G + np.diag(sh.H)), Cb)
    bracket = yy - 2.0 * np.einsum("bi,bi->b", Cb, P) + quad
    terms = (0.5 * state.n * np.log(state.beta / (2.0 * np.pi))
             - 0.5 * state.beta * bracket)
    return terms, bracket


def _check_data(state: ModelState, Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (state.n, state.d):
        raise DataError(f"data must be N x D = {state.n} x {state.d}, got {Y.shape}")
    if not np.all(np.isfinite(Y)):
        raise DataError("data contains non-finite values")
    return Y


def _check_batch(dims, dcount: int) -> np.ndarray:
    batch = np.asarray(dims, dtype=int)
    if batch.ndim != 1 or batch.size == 0:
        raise ConfigurationError("dimension batch must be a nonempty 1-d index set")
    if np.unique(batch).size != batch.size:
        raise ConfigurationError("dimension batch must not repeat indices")
    if batch.min() < 0 or batch.max() >= dcount:
        raise ConfigurationError(f"dimension batch indices must lie in [0, {dcount})")
    return batch


def elbo(state: ModelState, Y) -> ElboBreakdown:
    """Full evidence lower bound, decomposed."""
    Y = _check_data(state, Y)
    sh = _shared(state)
    terms, _ = _dim_values(state, sh, Y, np.arange(state.d))
    if not np.all(np.isfinite(terms)):
        raise NumericalError("non-finite likelihood term; " + _numeric_dump(state))
    klu = kl_inducing(state.qu, sh.priors)
    klx = _latent_kl(state)
    if not (np.isfinite(klu) and np.isfinite(klx)):
        raise NumericalError("non-finite KL term; " + _numeric_dump(state))
    return ElboBreakdown(terms, klu, klx)


def _latent_kl(state: ModelState) -> float:
    Kx, Lx = temporal_gram(state.grid, *state.kernel_x)
    Ax = spd_inverse(Lx)
    return gaussian_prior_kl(state.qx.means, state.qx.variances, Ax,
                             logdet_from_chol(Lx))


def elbo_dim_term(state: ModelState, Y, d: int) -> float:
    """One dimension's expected log-likelihood under q."""
    Y = _check_data(state, Y)
    if not 0 <= d < state.d:
        raise ConfigurationError(f"dimension index {d} out of range")
    sh = _shared(state)
    terms, _ = _dim_values(state, sh, Y, np.array([d]))
    if not np.isfinite(terms[0]):
        raise NumericalError("non-finite likelihood term; " + _numeric_dump(state))
    return float(terms[0])


def elbo_minibatch(state: ModelState, Y, dims) -> float:
    """Unbiased bound estimate from a subset of output dimensions: the
    likelihood terms are rescaled by D/|B|, the KL terms appear once."""
    Y = _check_data(state, Y)
    batch = _check_batch(dims, state.d)
    sh = _shared(state)
    terms, _ = _dim_values(state, sh, Y, batch)
    scale = state.d / batch.size
    klu = kl_inducing(state.qu, sh.priors)
    klx = _latent_kl(state)
    return float(scale * np.sum(terms)) - klu - klx


# ---------------------------------------------------------------------------
# gradients


def _gram_input_grads(spec, params, Z: np.ndarray, Kbar: np.ndarray) -> np.ndarray:
    """d <Kbar, kappa(Z, Z)> / dZ; Z appears on both sides of the gram."""
    grads = kernel_gradients(spec, params, Z, Z, with_inputs=True)
    return np.einsum("ij,ijq->iq", Kbar + Kbar.T, grads["inputs_a"])


def _kernel_block_grad(spec, params, Kbar: np.ndarray, psi_sig2=0.0,
                       psi_ell2=None, inputs=None, jitter_mult=JITTER):
    """Packed log-parameter gradient for one kernel whose gram is
    kappa(inputs, inputs) + jitter_mult * zero_lag * I, plus optional psi-side
    contributions (which differentiate the rbf family through sig2 and the
    squared lengthscales)."""
    kg = kernel_gradients(spec, params, inputs, inputs)
    tr = float(np.trace(Kbar))

    def atomic(prefix, pp):
        gs2 = np.sum(Kbar * kg[prefix + "signal_variance"]) + jitter_mult * tr
        gell = np.einsum("qij,ij->q", kg[prefix + "lengthscales"], Kbar)
        ell = np.asarray(pp.lengthscales, dtype=float)
        part = [pp.signal_variance * gs2]
        part.extend(ell * gell)
        if pp.period is not None:
            part.append(pp.period * np.sum(Kbar * kg[prefix + "period"]))
        return part

    if spec.family == "rbf+periodic":
        return np.array(atomic("rbf.", params[0]) + atomic("periodic.", params[1]))
    out = np.array(atomic("", params))
    if psi_ell2 is not None:
        ell = np.asarray(params.lengthscales, dtype=float)
        out[0] += params.signal_variance * psi_sig2
        out[1:1 + ell.size] += 2.0 * ell**2 * psi_ell2
    return out


def elbo_gradients(state: ModelState, Y, dims=None):
    """(value, gradient) of the bound, or of its minibatch estimate.

    The gradient is taken in the unconstrained parameterization and laid out
    exactly like model.pack_state; positives arrive as d/d log.
    """
    Y = _check_data(state, Y)
    n, dcount, jj, mm = state.n, state.d, state.j, state.m
    na = jj + 1
    if dims is None:
        batch = np.arange(dcount)
    else:
        batch = _check_batch(dims, dcount)
    scale = dcount / batch.size
    beta = state.beta
    mu = np.ascontiguousarray(state.qx.means)
    s = np.ascontiguousarray(state.qx.variances)

    sh = _shared(state)
    terms, bracket = _dim_values(state, sh, Y, batch)
    klu = kl_inducing(state.qu, sh.priors)
    Kx, Lx = temporal_gram(state.grid, *state.kernel_x)
    Ax = spd_inverse(Lx)
    klx = gaussian_prior_kl(mu, s, Ax, logdet_from_chol(Lx))
    value = float(scale * np.sum(terms)) - klu - klx

    # data-weighted aggregates over the batch
    Yb = Y[:, batch]
    Cb = sh.C[batch]
    ytil = scale * (Yb @ Cb)                  # N x na
    Ct = scale * (Cb.T @ Cb)                  # na x na

    q_vec = [sh.psi.psi1[a].T @ ytil[:, a] for a in range(na)]
    o_vec = [sum(Ct[a, b] * (sh.psi.omega(a, b) @ sh.r[b]) for b in range(na))
             for a in range(na)]

    # backward through the kernel expectations
    g_mu = np.zeros((n, state.q))
    g_s = np.zeros((n, state.q))
    g_sig2 = np.zeros(na)
    g_ell2 = [np.zeros(state.q) for _ in range(na)]
    g_Z = [np.zeros((mm, state.q)) for _ in range(na)]
    sig2 = [pa.signal_variance for _, pa in sh.procs]
    ell2 = [np.ascontiguousarray(np.asarray(pa.lengthscales, float) ** 2)
            for _, pa in sh.procs]
    zs = [np.ascontiguousarray(ind.Z) for ind in state.inducing]

    for a in range(na):
        adj1 = np.ascontiguousarray(beta * np.outer(ytil[:, a], sh.r[a]))
        gs2, ge2, gz, gm, gss = backend.psi1_bwd(adj1, sig2[a], ell2[a], zs[a], mu, s)
        g_sig2[a] += gs2
        g_ell2[a] += ge2
        g_Z[a] += gz
        g_mu += gm
        g_s += gss
        g_sig2[a] += -0.5 * beta * Ct[a, a] * n          # psi0 = N sig2
    for a in range(na):
        for b in range(a, na):
            if a == b:
                adjo = -0.5 * beta * Ct[a, a] * (np.outer(sh.r[a], sh.r[a]) + sh.Lam[a])
            else:
                adjo = -beta * Ct[a, b] * np.outer(sh.r[a], sh.r[b])
            out = backend.omega_bwd(np.ascontiguousarray(adjo), sig2[a], ell2[a],
                                    zs[a], sig2[b], ell2[b], zs[b], mu, s,
                                    np.ones(n))
            gsa, gsb, gea, geb, gza, gzb, gm, gss = out
            g_sig2[a] += gsa
            g_sig2[b] += gsb
            g_ell2[a] += gea
            g_ell2[b] += geb
            g_Z[a] += gza
            g_Z[b] += gzb
            g_mu += gm
            g_s += gss

    # q(u, v) blocks and the gram adjoints
    g_m = []
    g_L = []
    kern_blocks = []
    eye = np.eye(mm)
    for a in range(na):
        A = sh.A[a]
        r = sh.r[a]
        S = sh.S[a]
        mean = state.qu[a].mean
        Lq = state.qu[a].cov_factor
        Om = sh.psi.omega(a, a)
        g_m.append(beta * (A @ (q_vec[a] - o_vec[a])) - r)
        GS_lik = -0.5 * beta * Ct[a, a] * (A @ Om @ A)
        Linv_t = scipy.linalg.solve_triangular(Lq, eye, lower=True, trans="T")
        g_L.append(np.tril(2.0 * GS_lik @ Lq - (A @ Lq - Linv_t)))

        SAOm = S @ A @ Om
        GA = (beta * np.outer(q_vec[a], mean)
              - 0.5 * beta * (np.outer(mean, o_vec[a]) + np.outer(o_vec[a], mean))
              - 0.5 * beta * Ct[a, a] * (SAOm + SAOm.T - Om))
        Kbar = -A @ GA @ A
        Kbar -= 0.5 * (A - A @ (S + np.outer(mean, mean)) @ A)

        spec, par = sh.procs[a]
        jit_mult = sh.priors[a].jitter / par.signal_variance
        kern_blocks.append(_kernel_block_grad(
            spec, par, Kbar, psi_sig2=g_sig2[a], psi_ell2=g_ell2[a],
            inputs=zs[a], jitter_mult=jit_mult))
        g_Z[a] += _gram_input_grads(spec, par, zs[a], Kbar)

    # latent prior KL and the temporal kernel
    gmu_kl, gs_kl, gK_kl = gaussian_prior_kl_grads(mu, s, Ax)
    block_x = _kernel_block_grad(state.kernel_x[0], state.kernel_x[1], -gK_kl,
                                 inputs=state.grid.column())
    dmu = g_mu - gmu_kl
    dlogs = s * (g_s - gs_kl)

    # weights and noise precision
    P = Yb.T @ sh.U
    gW = np.zeros((dcount, jj))
    gW[batch] = scale * beta * (P - Cb @ (sh.G + np.diag(sh.H)))[:, :jj]
    g_logbeta = scale * batch.size * n / 2.0 - 0.5 * beta * scale * np.sum(bracket)

    parts = [block_x, kern_blocks[na - 1]]
    parts.extend(kern_blocks[a] for a in range(jj))
    parts.append(gW.ravel())
    parts.append(np.array([g_logbeta]))
    parts.append(dmu.ravel())
    parts.append(dlogs.ravel())
    parts.extend(g_Z[a].ravel() for a in range(na))
    diag_idx = np.diag_indices(mm)
    tril_idx = np.tril_indices(mm)
    for a in range(na):
        parts.append(g_m[a])
        gl = g_L[a].copy()
        gl[diag_idx] *= np.diag(state.qu[a].cov_factor)
        parts.append(gl[tril_idx])
    grad = np.concatenate(parts)

    pos = 0
    for name, size in parameter_blocks(state):
        if not np.all(np.isfinite(grad[pos:pos + size])):
            raise NumericalError(f"non-finite gradient in block {name}; "
                                 + _numeric_dump(state))
        pos += size
    return value, grad


# ---------------------------------------------------------------------------
# jointly-optimal q over the stacked inducing values


def _joint_pieces(state: ModelState, sh: _Shared, Y: np.ndarray):
    beta = state.beta
    ytil = Y @ sh.C
    Ct = sh.C.T @ sh.C
    mm = state.m
    na = state.j + 1
    eta = np.zeros(na * mm)
    Lam = np.zeros((na * mm, na * mm))
    for a in range(na):
        sla = slice(a * mm, (a + 1) * mm)
        eta[sla] = beta * (sh.A[a] @ (sh.psi.psi1[a].T @ ytil[:, a]))
        for b in range(a, na):
            slb = slice(b * mm, (b + 1) * mm)
            blk = beta * Ct[a, b] * (sh.A[a] @ sh.psi.omega(a, b) @ sh.A[b])
            if a == b:
                Lam[sla, sla] = 0.5 * (blk + blk.T)
            else:
                Lam[sla, slb] = blk
                Lam[slb, sla] = blk.T
    const = (state.d * state.n / 2.0 * np.log(beta / (2.0 * np.pi))
             - 0.5 * beta * np.sum(Y * Y)
             - 0.5 * beta * sum(Ct[a, a] * (sh.psi.psi0[a]
                                            - np.sum(sh.A[a] * sh.psi.omega(a, a)))
                                for a in range(na)))
    return eta, Lam, const


def optimal_joint_inducing(state: ModelState, Y):
    """Mean and covariance of the best jointly-Gaussian posterior over the
    stacked inducing values of all processes, everything else held fixed.

    The training family factorizes across processes; this coupled optimum
    exists to give the tightest inducing-level bound for diagnostics, via
    elbo_joint.
    """
    Y = _check_data(state, Y)
    sh = _shared(state)
    eta, Lam, _ = _joint_pieces(state, sh, Y)
    mm = state.m
    prec = Lam.copy()
    for a in range(state.j + 1):
        sla = slice(a * mm, (a + 1) * mm)
        prec[sla, sla] += sh.A[a]
    prec = 0.5 * (prec + prec.T)
    Lp = cholesky_lower(prec, "joint inducing precision")
    cov = spd_inverse(Lp)
    return cov @ eta, cov


def elbo_joint(state: ModelState, Y, mean, cov) -> float:
    """Likelihood plus inducing-KL parts of the bound for an arbitrary
    jointly-Gaussian q over the stacked inducing values.

    The latent-prior KL is excluded; subtract kl_latent_prior for the full
    bound.  With (mean, cov) from optimal_joint_inducing this is the tightest
    bound any Gaussian over the inducing values can achieve at the current
    remaining parameters.
    """
    Y = _check_data(state, Y)
    sh = _shared(state)
    eta, Lam, const = _joint_pieces(state, sh, Y)
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    mm = state.m
    na = state.j + 1
    if mean.shape != (na * mm,) or cov.shape != (na * mm, na * mm):
        raise ConfigurationError("joint q moments must cover all processes' "
                                 "inducing values")
    lik = (const + eta @ mean - 0.5 * np.sum(Lam * cov)
           - 0.5 * mean @ Lam @ mean)
    trace = 0.0
    quad = 0.0
    logdet_k = 0.0
    for a in range(na):
        sla = slice(a * mm, (a + 1) * mm)
        trace += np.sum(sh.A[a] * cov[sla, sla])
        quad += mean[sla] @ sh.A[a] @ mean[sla]
        logdet_k += logdet_from_chol(sh.priors[a].L)
    Lc = cholesky_lower(cov, "joint q covariance")
    kl = 0.5 * (trace + quad - na * mm + logdet_k - logdet_from_chol(Lc))
    return float(lik - kl)

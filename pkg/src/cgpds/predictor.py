"""Generation of new sequences from time stamps alone, and reconstruction of
missing output dimensions from partial observations at test times.

Both paths push a Gaussian latent posterior through the sparse process
layer: per process a, E(f_a) = Psi1* A_a m_a and
V(f_a) = sig2_a + tr(omega*_n (Lambda_a + r_a r_a')) - E(f_a)^2, then combine
per output dimension with mean = sum_j w_dj E(g_j) + E(h) and
var = sum_j w_dj^2 V(g_j) + V(h) + 1/beta.  Cross-process covariances
induced by the shared latent input are deliberately not included; the
variance rule is the factorized one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ConfigurationError, DataError, NumericalError
from .latent_prior import (TemporalGrid, VariationalLatentX, conditional_latent,
                           gaussian_prior_kl, gaussian_prior_kl_grads,
                           temporal_gram)
from .model import ModelState
from .numerics import logdet_from_chol, spd_inverse
from .sparse_layer import prior_gram
from .trainer import AdaptiveStep, TrainConfig


@dataclass
class PredictionRequest:
    t_star: TemporalGrid


@dataclass
class PredictionMoments:
    """Per-point, per-dimension predictive mean and variance."""

    mean: np.ndarray         # N* x D
    variance: np.ndarray     # N* x D


@dataclass
class ReconstructionTask:
    """Partial observations at test times; NaN marks a missing entry."""

    t_star: TemporalGrid
    observations: np.ndarray     # N* x D, NaN where missing

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim != 2 or obs.shape[0] != self.t_star.n:
            raise DataError("observations must be N* x D with one row per test time")
        if np.any(np.isinf(obs)):
            raise DataError("observations must be finite or NaN")
        self.observations = obs

    def missing(self) -> np.ndarray:
        return np.isnan(self.observations)


@dataclass
class Metrics:
    rmse: float
    standardized_mse: np.ndarray     # per dimension; NaN where nothing masked


class _ProcessCore:
    """Frozen per-process quantities shared by prediction and reconstruction."""

    def __init__(self, state: ModelState):
        self.procs = state.latent_processes()
        self.priors = [prior_gram(spec, par, ind)
                       for (spec, par), ind in zip(self.procs, state.inducing)]
        self.A = [spd_inverse(p.L) for p in self.priors]
        self.r = [self.A[a] @ state.qu[a].mean for a in range(len(self.procs))]
        self.Lam = [self.A[a] @ state.qu[a].cov() @ self.A[a] - self.A[a]
                    for a in range(len(self.procs))]
        self.sig2 = [pa.signal_variance for _, pa in self.procs]
        self.ell2 = [np.ascontiguousarray(np.asarray(pa.lengthscales, float) ** 2)
                     for _, pa in self.procs]
        self.zs = [np.ascontiguousarray(ind.Z) for ind in state.inducing]


def _process_moments(core: _ProcessCore, qstar: VariationalLatentX):
    """Mean and variance of every process at every test point."""
    mu = np.ascontiguousarray(qstar.means)
    s = np.ascontiguousarray(qstar.variances)
    na = len(core.procs)
    E = np.empty((qstar.n, na))
    V = np.empty((qstar.n, na))
    for a in range(na):
        psi1 = backend.psi1_fwd(core.sig2[a], core.ell2[a], core.zs[a], mu, s)
        E[:, a] = psi1 @ core.r[a]
        om = backend.omega_point(core.sig2[a], core.ell2[a], core.zs[a],
                                 core.sig2[a], core.ell2[a], core.zs[a], mu, s)
        inner = core.Lam[a] + np.outer(core.r[a], core.r[a])
        V[:, a] = core.sig2[a] + np.einsum("nij,ij->n", om, inner) - E[:, a] ** 2
    return E, np.maximum(V, 0.0)


def _combine(state: ModelState, E: np.ndarray, V: np.ndarray) -> PredictionMoments:
    C = np.column_stack([state.W, np.ones(state.d)])
    mean = E @ C.T
    var = V @ (C ** 2).T + 1.0 / state.beta
    return PredictionMoments(mean, var)


def generate(state: ModelState, request: PredictionRequest) -> PredictionMoments:
    """Predictive moments at new time stamps, no observations involved."""
    qstar = conditional_latent(request.t_star, state.grid, state.qx,
                               *state.kernel_x)
    core = _ProcessCore(state)
    E, V = _process_moments(core, qstar)
    return _combine(state, E, V)


# ---------------------------------------------------------------------------
# reconstruction


def _merge_grids(grid: TemporalGrid, t_star: TemporalGrid):
    times = np.concatenate([grid.times, t_star.times])
    order = np.argsort(times, kind="stable")
    if np.any(np.diff(times[order]) == 0):
        raise DataError("test times must be distinct from training times")
    return TemporalGrid(times[order]), order


def _masked_likelihood_grads(state: ModelState, core: _ProcessCore,
                             qxm: VariationalLatentX, Ym: np.ndarray,
                             mask: np.ndarray):
    """Expected log-likelihood of the observed entries and its gradients
    w.r.t. the merged latent means and variances."""
    beta = state.beta
    na = state.j + 1
    mu = np.ascontiguousarray(qxm.means)
    s = np.ascontiguousarray(qxm.variances)
    C = np.column_stack([state.W, np.ones(state.d)])
    Wt = mask.astype(float)
    ytil = (np.nan_to_num(Ym) * Wt) @ C                      # NN x na
    wpair = np.einsum("nd,da,db->nab", Wt, C, C)             # NN x na x na

    count = float(Wt.sum())
    value = 0.5 * count * np.log(beta / (2.0 * np.pi))
    value -= 0.5 * beta * float(np.nansum(Wt * np.nan_to_num(Ym) ** 2))
    g_mu = np.zeros_like(mu)
    g_s = np.zeros_like(s)

    for a in range(na):
        psi1 = backend.psi1_fwd(core.sig2[a], core.ell2[a], core.zs[a], mu, s)
        value += beta * float(ytil[:, a] @ (psi1 @ core.r[a]))
        adj1 = np.ascontiguousarray(beta * np.outer(ytil[:, a], core.r[a]))
        _, _, _, gm, gs = backend.psi1_bwd(adj1, core.sig2[a], core.ell2[a],
                                           core.zs[a], mu, s)
        g_mu += gm
        g_s += gs
        for b in range(a, na):
            w = np.ascontiguousarray(wpair[:, a, b])
            om = backend.omega_fwd(core.sig2[a], core.ell2[a], core.zs[a],
                                   core.sig2[b], core.ell2[b], core.zs[b],
                                   mu, s, w)
            if a == b:
                inner = np.outer(core.r[a], core.r[a]) + core.Lam[a]
                value -= 0.5 * beta * (float(np.sum(inner * om))
                                       + core.sig2[a] * float(w.sum()))
                adjo = -0.5 * beta * inner
            else:
                value -= beta * float(core.r[a] @ om @ core.r[b])
                adjo = -beta * np.outer(core.r[a], core.r[b])
            out = backend.omega_bwd(np.ascontiguousarray(adjo), core.sig2[a],
                                    core.ell2[a], core.zs[a], core.sig2[b],
                                    core.ell2[b], core.zs[b], mu, s, w)
            g_mu += out[6]
            g_s += out[7]
    return value, g_mu, g_s


def reconstruct(state: ModelState, Y, task: ReconstructionTask,
                opt: TrainConfig | None = None):
    """Fill in the missing entries at the test times.

    Extends the latent posterior over the merged time grid and maximizes the
    observed-entry likelihood minus the joint latent prior KL over that
    posterior alone; model parameters, W, beta, and q(u, v) stay fixed.
    Returns (PredictionMoments over the full test block, missing mask); only
    the masked entries are meaningful to the caller.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (state.n, state.d):
        raise DataError(f"training data must be N x D = {state.n} x {state.d}")
    if task.observations.shape[1] != state.d:
        raise DataError("observation columns must match the trained D")
    missing = task.missing()
    if not missing.any():
        raise DataError("nothing to reconstruct: no missing entries")
    if opt is None:
        opt = TrainConfig()
    if missing.all():
        return generate(state, PredictionRequest(task.t_star)), missing

    work = state.copy()
    core = _ProcessCore(work)
    grid_m, order = _merge_grids(work.grid, task.t_star)
    inverse = np.argsort(order, kind="stable")
    train_rows = inverse[:work.n]
    star_rows = inverse[work.n:]

    qstar0 = conditional_latent(task.t_star, work.grid, work.qx, *work.kernel_x)
    nn, q = grid_m.n, work.q
    means = np.empty((nn, q))
    svars = np.empty((nn, q))
    means[train_rows] = work.qx.means
    svars[train_rows] = work.qx.variances
    means[star_rows] = qstar0.means
    svars[star_rows] = qstar0.variances

    Ym = np.zeros((nn, state.d))
    mask = np.zeros((nn, state.d), dtype=bool)
    Ym[train_rows] = Y
    mask[train_rows] = True
    Ym[star_rows] = np.nan_to_num(task.observations)
    mask[star_rows] = ~missing

    # the temporal prior over the merged grid is fixed throughout
    _, Lm = temporal_gram(grid_m, *work.kernel_x)
    Am = spd_inverse(Lm)
    logdet_m = logdet_from_chol(Lm)

    def objective(theta):
        half = nn * q
        mu = theta[:half].reshape(nn, q)
        # overflow to inf is fine here; the caller treats it as divergence
        with np.errstate(over="ignore"):
            s = np.exp(theta[half:]).reshape(nn, q)
        qxm = VariationalLatentX(mu, s)
        value, g_mu, g_s = _masked_likelihood_grads(work, core, qxm, Ym, mask)
        value -= gaussian_prior_kl(mu, s, Am, logdet_m)
        gmu_kl, gs_kl, _ = gaussian_prior_kl_grads(mu, s, Am)
        grad = np.concatenate([(g_mu - gmu_kl).ravel(),
                               (s * (g_s - gs_kl)).ravel()])
        return value, grad

    theta = np.concatenate([means.ravel(), np.log(svars).ravel()])
    stepper = AdaptiveStep(theta.size, opt.step_size)
    best_value, grad = objective(theta)
    if not np.isfinite(best_value):
        raise NumericalError("reconstruction objective non-finite at start")
    best_theta = theta.copy()
    for it in range(1, opt.iterations + 1):
        theta = theta + stepper.update(grad)
        try:
            value, grad = objective(theta)
        except ConfigurationError:
            # overflowing exp() in the variance coordinates lands here
            value, grad = np.nan, grad
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise NumericalError(
                f"reconstruction optimization diverged at iteration {it}; "
                f"best objective so far {best_value:.6g}")
        if value > best_value:
            best_value = value
            best_theta = theta.copy()

    half = nn * q
    mu = best_theta[:half].reshape(nn, q)
    s = np.exp(best_theta[half:]).reshape(nn, q)
    qstar = VariationalLatentX(mu[star_rows].copy(), s[star_rows].copy())
    E, V = _process_moments(core, qstar)
    return _combine(work, E, V), missing


def metrics(pred: PredictionMoments, truth, mask, train_variance) -> Metrics:
    """RMSE over the masked entries plus per-dimension MSE standardized by
    the training variance of each dimension."""
    truth = np.asarray(truth, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if truth.shape != pred.mean.shape or mask.shape != pred.mean.shape:
        raise DataError("prediction, truth, and mask shapes must agree")
    if not mask.any():
        raise DataError("empty mask")
    err = pred.mean - truth
    rmse = float(np.sqrt(np.mean(err[mask] ** 2)))
    train_variance = np.asarray(train_variance, dtype=float)
    dcount = truth.shape[1]
    std_mse = np.full(dcount, np.nan)
    for d in range(dcount):
        sel = mask[:, d]
        if sel.any():
            std_mse[d] = float(np.mean(err[sel, d] ** 2) / train_variance[d])
    return Metrics(rmse, std_mse)

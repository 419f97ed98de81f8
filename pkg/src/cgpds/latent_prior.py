"""Temporal GP prior over latent coordinates and the variational q(X).

Each latent dimension q carries an independent GP prior x_q ~ N(0, K_x) over
the training times and a diagonal-Gaussian variational posterior
q(x_q) = N(mu_q, diag(s_q)).  This module provides the KL term of the bound,
the prior-conditional extension of q(X) to unseen times, and the joint-grid
KL used by reconstruction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import kernels
from .errors import ConfigurationError
from .numerics import JITTER, cholesky_lower, logdet_from_chol, spd_inverse

# Floor applied to conditional variances; the closed form can dip a hair
# negative at reproduced training inputs.
VAR_FLOOR = 1e-12


@dataclass
class TemporalGrid:
    """Strictly increasing, finite time stamps (N >= 2)."""

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        if t.size < 2:
            raise ConfigurationError("temporal grid needs at least two time points")
        if not np.all(np.isfinite(t)):
            raise ConfigurationError("temporal grid contains non-finite times")
        if not np.all(np.diff(t) > 0):
            raise ConfigurationError("temporal grid must be strictly increasing (duplicates rejected)")
        self.times = t

    @property
    def n(self) -> int:
        return self.times.size

    def column(self) -> np.ndarray:
        # n x 1 view for kernel evaluation over the time axis
        return self.times[:, None]


@dataclass
class VariationalLatentX:
    """Diagonal Gaussian q(x_q) per latent dimension.

    Stored time-major: means and variances are (N, Q) arrays; serialization
    transposes to the documented Q x N layout.
    """

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.means, dtype=float)
        s = np.asarray(self.variances, dtype=float)
        if mu.ndim != 2 or mu.shape != s.shape:
            raise ConfigurationError("latent means and variances must share an (N, Q) shape")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(s))):
            raise ConfigurationError("latent variational moments must be finite")
        if np.any(s <= 0):
            raise ConfigurationError("latent variances must be strictly positive")
        self.means = mu
        self.variances = s

    @property
    def n(self) -> int:
        return self.means.shape[0]

    @property
    def q(self) -> int:
        return self.means.shape[1]

    def copy(self) -> "VariationalLatentX":
        return VariationalLatentX(self.means.copy(), self.variances.copy())

    def warn_if_wide(self, d: int) -> None:
        if self.q > d:
            warnings.warn(f"latent dimension Q={self.q} exceeds output dimension D={d}")


def temporal_gram(grid: TemporalGrid, spec_x: kernels.KernelSpec, params_x) -> tuple:
    """K_x = kappa_x(t, t) + jitter and its lower Cholesky factor."""
    T = grid.column()
    K = kernels.kernel_matrix(spec_x, params_x, T, T)
    K = K + JITTER * kernels.zero_lag_variance(spec_x, params_x) * np.eye(grid.n)
    L = cholesky_lower(K, "temporal kernel kappa_x")
    return K, L


def gaussian_prior_kl(mu: np.ndarray, s: np.ndarray, Kinv: np.ndarray, logdet: float) -> float:
    """sum_q KL[N(mu_q, diag(s_q)) || N(0, K)] with K^{-1} and log|K| given.

    mu, s are (N, Q); the same prior Gram serves every latent dimension.
    """
    n, nq = mu.shape
    diag_kinv = np.diag(Kinv)
    trace = float(diag_kinv @ s.sum(axis=1))
    quad = float(np.sum(mu * (Kinv @ mu)))
    logs = float(np.sum(np.log(s)))
    return 0.5 * (trace + quad - n * nq + nq * logdet - logs)


def gaussian_prior_kl_grads(mu: np.ndarray, s: np.ndarray, Kinv: np.ndarray):
    """Gradients of gaussian_prior_kl w.r.t. mu, s (natural), and K.

    dKL/dK = 0.5 * sum_q (K^{-1} - K^{-1}(diag(s_q) + mu_q mu_qᵀ)K^{-1}).
    """
    nq = mu.shape[1]
    B = Kinv @ mu                                     # N x Q
    g_mu = B
    g_s = 0.5 * (np.diag(Kinv)[:, None] - 1.0 / s)
    inner = B @ B.T + (Kinv * s.sum(axis=1)[None, :]) @ Kinv
    g_K = 0.5 * (nq * Kinv - inner)
    return g_mu, g_s, g_K


def kl_latent_prior(qx: VariationalLatentX, grid: TemporalGrid, spec_x, params_x) -> float:
    """Sum over latent dimensions of KL[q(x_q) || GP prior at the grid times]."""
    if qx.n != grid.n:
        raise ConfigurationError("latent posterior and grid disagree on N")
    _, L = temporal_gram(grid, spec_x, params_x)
    Kinv = spd_inverse(L)
    return gaussian_prior_kl(qx.means, qx.variances, Kinv, logdet_from_chol(L))


def joint_prior_kl(qx_joint: VariationalLatentX, grid_joint: TemporalGrid, spec_x, params_x) -> float:
    """KL of the factorized Gaussian against the joint prior over [t; t_*].

    Same formula as kl_latent_prior on the merged grid; the caller merges and
    deduplicates (TemporalGrid itself rejects duplicated time stamps).
    """
    return kl_latent_prior(qx_joint, grid_joint, spec_x, params_x)


def conditional_latent(t_star: TemporalGrid, grid: TemporalGrid, qx: VariationalLatentX,
                       spec_x, params_x) -> VariationalLatentX:
    """Marginals of int p(x_* | x) q(x) dx per latent dimension.

    mean = K_*t K_tt^{-1} mu_q
    var  = diag(K_** - K_*t K_tt^{-1} (K_tt - diag(s_q)) K_tt^{-1} K_t*)
    """
    if qx.n != grid.n:
        raise ConfigurationError("latent posterior and grid disagree on N")
    K, L = temporal_gram(grid, spec_x, params_x)
    Kst = kernels.kernel_matrix(spec_x, params_x, t_star.column(), grid.column())  # N* x N
    B = scipy.linalg.cho_solve((L, True), Kst.T)       # N x N*, equals K^{-1} K_t*
    mean = B.T @ qx.means                              # N* x Q
    k0 = kernels.zero_lag_variance(spec_x, params_x)
    base = k0 - np.sum(B * (K @ B), axis=0)            # N*, the s=0 conditional variance
    var = base[:, None] + (B**2).T @ qx.variances      # N* x Q
    return VariationalLatentX(mean, np.maximum(var, VAR_FLOOR))

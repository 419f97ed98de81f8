"""Sampling from the generative model itself: temporal GP latents, local and
global GP layers evaluated at those latents, weighted combination, Gaussian
noise.  Used for demos and end-to-end checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .kernels import KernelParams, KernelSpec, kernel_matrix
from .numerics import cholesky_lower

JITTER = 1e-10


@dataclass
class SyntheticDataset:
    times: np.ndarray        # N
    Y: np.ndarray            # N x D, noisy observations
    clean: np.ndarray        # N x D, noiseless mixture
    latents: np.ndarray      # N x Q
    locals_: np.ndarray      # N x J, the g_j draws
    global_: np.ndarray      # N, the h draw
    W: np.ndarray            # D x J
    beta: float


def _gp_draw(K: np.ndarray, rng: np.random.Generator, count: int) -> np.ndarray:
    L = cholesky_lower(K + JITTER * np.eye(K.shape[0]), "synthetic gram")
    return L @ rng.standard_normal((K.shape[0], count))


def sample_dataset(n: int = 30, d: int = 50, q: int = 2, j: int = 2,
                   seed: int = 0, t_span: float = 6.0, beta: float = 100.0,
                   temporal_lengthscale: float = 1.0,
                   latent_lengthscale: float = 1.0) -> SyntheticDataset:
    """One multivariate sequence drawn from the model.

    Latent curves come from a unit-variance temporal RBF prior, each local
    and global process from a unit-variance RBF over the latent coordinates,
    and y_d = sum_j w_dj g_j + h + noise with noise precision beta.
    """
    if n < 2 or d < 1 or q < 1 or j < 1:
        raise ConfigurationError("need n >= 2 and positive d, q, j")
    rng = np.random.default_rng(seed)
    times = np.linspace(0.0, t_span, n)

    spec_t = KernelSpec("rbf", 1)
    par_t = KernelParams(1.0, np.array([temporal_lengthscale]))
    Kt = kernel_matrix(spec_t, par_t, times[:, None], times[:, None])
    X = _gp_draw(Kt, rng, q)

    spec_l = KernelSpec("rbf", q)
    par_l = KernelParams(1.0, np.full(q, latent_lengthscale))
    Kl = kernel_matrix(spec_l, par_l, X, X)
    G = _gp_draw(Kl, rng, j)
    h = _gp_draw(Kl, rng, 1)[:, 0]

    W = rng.standard_normal((d, j)) / np.sqrt(j)
    clean = G @ W.T + h[:, None]
    Y = clean + rng.standard_normal((n, d)) / np.sqrt(beta)
    return SyntheticDataset(times=times, Y=Y, clean=clean, latents=X,
                            locals_=G, global_=h, W=W, beta=beta)

"""Inducing-point machinery for the global process h and local processes g_j.

Each of the J+1 latent processes owns inducing inputs Z (M x Q), a prior Gram
K = kappa(Z, Z) + jitter, and a free Gaussian q with Cholesky-parameterized
covariance.  Processes are indexed a = 0..J with the locals first and the
global process h last; weights elsewhere follow the same ordering.

The psi statistics are the Gaussian expectations of kernel quantities under
the diagonal q(X):

  psi0^a       = sum_n E[kappa_a(x_n, x_n)] = N * signal_variance_a
  Psi1^a[n,m]  = E[kappa_a(x_n, z_m)]
  Omega^{ab}   = sum_n E[kappa_a(Z_a, x_n) kappa_b(x_n, Z_b)]

computed in closed form by the backend kernels (the per-iteration hot path).
Cross pairs a != b are required: g_j(x_n) and h(x_n) share the random input
x_n, so their product expectations do not factorize.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import backend, kernels
from .errors import ConditioningError, ConfigurationError
from .latent_prior import VariationalLatentX
from .numerics import JITTER, JITTER_MAX, logdet_from_chol

DUPLICATE_ROW_TOL = 1e-12


@dataclass
class InducingSet:
    """Inducing inputs Z, one M x Q matrix per latent process."""

    Z: np.ndarray

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim != 2 or Z.shape[0] < 1:
            raise ConfigurationError("inducing inputs must form an M x Q matrix with M >= 1")
        if not np.all(np.isfinite(Z)):
            raise ConfigurationError("inducing inputs must be finite")
        for i in range(Z.shape[0] - 1):
            d = np.abs(Z[i + 1:] - Z[i]).max(axis=1)
            if np.any(d <= DUPLICATE_ROW_TOL):
                raise ConfigurationError("inducing inputs contain duplicate rows")
        self.Z = Z

    @property
    def m(self) -> int:
        return self.Z.shape[0]


@dataclass
class GaussianVariational:
    """Free Gaussian moments: mean m and lower Cholesky factor of the covariance."""

    mean: np.ndarray
    cov_factor: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=float).ravel()
        L = np.asarray(self.cov_factor, dtype=float)
        if L.shape != (m.size, m.size):
            raise ConfigurationError("cov_factor must be square and match the mean length")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(L))):
            raise ConfigurationError("variational moments must be finite")
        if np.any(np.triu(L, 1) != 0):
            raise ConfigurationError("cov_factor must be lower triangular")
        if np.any(np.diag(L) <= 0):
            raise ConfigurationError("cov_factor needs a strictly positive diagonal")
        self.mean = m
        self.cov_factor = L

    def cov(self) -> np.ndarray:
        return self.cov_factor @ self.cov_factor.T

    def copy(self) -> "GaussianVariational":
        return GaussianVariational(self.mean.copy(), self.cov_factor.copy())


@dataclass
class PriorGram:
    """kappa(Z, Z) + jitter with its lower Cholesky factor."""

    K: np.ndarray
    L: np.ndarray
    jitter: float


@dataclass
class PsiStats:
    """Psi statistics for all processes; omega stored once per unordered pair."""

    psi0: np.ndarray                      # (J+1,)
    psi1: list                            # per process, (N, M_a)
    omega_map: dict = field(default_factory=dict)   # (a, b) with a <= b -> (M_a, M_b)

    def omega(self, a: int, b: int) -> np.ndarray:
        if a <= b:
            return self.omega_map[(a, b)]
        return self.omega_map[(b, a)].T


def prior_gram(spec: kernels.KernelSpec, params, Z: InducingSet) -> PriorGram:
    """Factorized prior Gram, escalating jitter up to 1e-4 * signal variance."""
    Kraw = kernels.kernel_matrix(spec, params, Z.Z, Z.Z)
    scale = kernels.zero_lag_variance(spec, params)
    eye = np.eye(Z.m)
    jit = JITTER
    while True:
        K = Kraw + jit * scale * eye
        try:
            L = scipy.linalg.cholesky(K, lower=True)
            return PriorGram(K, L, jit * scale)
        except scipy.linalg.LinAlgError:
            if jit >= JITTER_MAX:
                raise ConditioningError(
                    f"prior Gram for {spec.family} kernel stayed indefinite at jitter {jit:g}"
                ) from None
            jit *= 10.0


def _require_rbf(spec: kernels.KernelSpec) -> None:
    if spec.family != "rbf":
        raise ConfigurationError(
            f"latent-layer expectations need the rbf family, got {spec.family!r}"
        )


def _ell2(params: kernels.KernelParams) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(params.lengthscales, dtype=float) ** 2)


def psi_statistics(specs_params: list, inducing: list, qx: VariationalLatentX,
                   weights: np.ndarray | None = None) -> PsiStats:
    """Closed-form psi statistics for every process and process pair.

    specs_params : list of (KernelSpec, KernelParams), locals first, h last.
    inducing     : matching list of InducingSet.
    weights      : optional per-point weights for the omega sums (defaults to
                   ones; reconstruction weighs test points by their observed
                   dimension counts).
    """
    if len(specs_params) != len(inducing):
        raise ConfigurationError("one inducing set per latent process required")
    mu = np.ascontiguousarray(qx.means)
    s = np.ascontiguousarray(qx.variances)
    n = qx.n
    w = np.ones(n) if weights is None else np.ascontiguousarray(np.asarray(weights, dtype=float))
    if w.shape != (n,):
        raise ConfigurationError("omega weights must have one entry per time point")
    nproc = len(specs_params)
    sig2, ell2, zs = [], [], []
    for (spec, params), ind in zip(specs_params, inducing):
        _require_rbf(spec)
        kernels.validate_params(spec, params)
        if spec.input_dim != qx.q:
            raise ConfigurationError("latent kernel input_dim must equal Q")
        if ind.Z.shape[1] != qx.q:
            raise ConfigurationError("inducing inputs must live in the Q-dim latent space")
        sig2.append(float(params.signal_variance))
        ell2.append(_ell2(params))
        zs.append(np.ascontiguousarray(ind.Z))
    psi0 = np.array([w.sum() * s2 for s2 in sig2])
    psi1 = [backend.psi1_fwd(sig2[a], ell2[a], zs[a], mu, s) for a in range(nproc)]
    omega_map = {}
    for a in range(nproc):
        for b in range(a, nproc):
            omega_map[(a, b)] = backend.omega_fwd(
                sig2[a], ell2[a], zs[a], sig2[b], ell2[b], zs[b], mu, s, w
            )
    return PsiStats(psi0, psi1, omega_map)


def kl_inducing(qu: list, priors: list) -> float:
    """sum_a KL[N(m_a, S_a) || N(0, K_a)] over the J+1 processes."""
    if len(qu) != len(priors):
        raise ConfigurationError("one prior Gram per variational block required")
    total = 0.0
    for q, pg in zip(qu, priors):
        m = q.mean
        if m.size != pg.K.shape[0]:
            raise ConfigurationError("variational block and prior Gram disagree on M")
        a = scipy.linalg.solve_triangular(pg.L, q.cov_factor, lower=True)
        b = scipy.linalg.solve_triangular(pg.L, m, lower=True)
        logdet_s = 2.0 * float(np.sum(np.log(np.diag(q.cov_factor))))
        total += 0.5 * (
            float(np.sum(a**2)) + float(np.sum(b**2)) - m.size
            + logdet_from_chol(pg.L) - logdet_s
        )
    return total


def conditional_moments(spec, params, Z: InducingSet, qu: GaussianVariational,
                        X: np.ndarray) -> tuple:
    """Marginal mean/variance of one latent process at deterministic inputs X.

    mean = kappa(X,Z) K^{-1} m
    var  = diag kappa(X,X) - diag( kappa(X,Z) K^{-1} (K - S) K^{-1} kappa(Z,X) )
    """
    pg = prior_gram(spec, params, Z)
    X = np.asarray(X, dtype=float)
    Kxz = kernels.kernel_matrix(spec, params, X, Z.Z)
    B = scipy.linalg.cho_solve((pg.L, True), Kxz.T)          # M x n, K^{-1} kappa(Z,X)
    mean = B.T @ qu.mean
    U = qu.cov_factor.T @ B                                  # M x n
    var = kernels.kernel_diag(spec, params, X) - np.sum(Kxz.T * B, axis=0) + np.sum(U**2, axis=0)
    return mean, var

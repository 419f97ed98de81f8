"""Model state: every free parameter of the generative model and its
variational posterior, plus the packing to one flat unconstrained vector.

Process ordering everywhere: local processes g_0..g_{J-1} first, the global
process h last (index J).  Column j of the weight matrix W multiplies g_j;
the global process enters every dimension with coefficient 1.

Flat parameter vector (fixed, documented order; positives are optimized as
logs):

  1. temporal kernel kappa_x: [log sig2, log ell] (+ [log period] for the
     periodic family; for the sum family the rbf block then the periodic one)
  2. kappa_h: [log sig2, log ell_1..Q]
  3. kappa_g^j for j = 0..J-1: same layout as kappa_h
  4. W, row-major (D*J)
  5. log beta
  6. latent means, (N, Q) row-major
  7. log latent variances, (N, Q) row-major
  8. inducing inputs Z_a, (M, Q) row-major, a = 0..J
  9. per process a = 0..J: mean m_a (M), then the lower triangle of the
     covariance factor L_a row-major with the diagonal stored as logs

Gradient vectors returned by the ELBO module follow the same layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .kernels import KernelParams, KernelSpec
from .latent_prior import TemporalGrid, VariationalLatentX
from .sparse_layer import GaussianVariational, InducingSet


@dataclass
class ModelState:
    """All free parameters; shape constants are derived properties."""

    grid: TemporalGrid
    qx: VariationalLatentX
    kernel_x: tuple                 # (KernelSpec, KernelParams | (rbf, periodic) pair)
    kernel_h: tuple                 # (KernelSpec, KernelParams)
    kernels_g: list                 # J tuples like kernel_h
    W: np.ndarray                   # D x J
    beta: float
    inducing: list                  # J+1 InducingSet, locals then h
    qu: list                        # J+1 GaussianVariational, locals then h

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        if self.W.ndim != 2:
            raise ConfigurationError("W must be a D x J matrix")
        if not np.all(np.isfinite(self.W)):
            raise ConfigurationError("W must be finite")
        if not np.isfinite(self.beta) or self.beta <= 0:
            raise ConfigurationError("noise precision beta must be positive")
        if len(self.kernels_g) != self.j:
            raise ConfigurationError("need one local kernel per column of W")
        if len(self.inducing) != self.j + 1 or len(self.qu) != self.j + 1:
            raise ConfigurationError("need J+1 inducing sets and variational blocks")
        if self.qx.n != self.grid.n:
            raise ConfigurationError("latent posterior and grid disagree on N")
        m = self.inducing[0].m
        for ind, q in zip(self.inducing, self.qu):
            if ind.m != m or q.mean.size != m:
                raise ConfigurationError("all processes must share the same M")
            if ind.Z.shape[1] != self.q:
                raise ConfigurationError("inducing inputs must be M x Q")
        spec_x = self.kernel_x[0]
        if spec_x.input_dim != 1:
            raise ConfigurationError("temporal kernel must have input_dim 1")
        for spec, _ in [self.kernel_h] + list(self.kernels_g):
            if spec.family != "rbf":
                raise ConfigurationError("latent-layer kernels must be rbf")
            if spec.input_dim != self.q:
                raise ConfigurationError("latent-layer kernels must have input_dim Q")

    # shape constants
    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def q(self) -> int:
        return self.qx.q

    @property
    def j(self) -> int:
        return self.W.shape[1]

    @property
    def m(self) -> int:
        return self.inducing[0].m

    def latent_processes(self) -> list:
        """[(spec, params), ...] in process order, locals then h."""
        return list(self.kernels_g) + [self.kernel_h]

    def coefficients(self, d: int) -> np.ndarray:
        """c_a for dimension d: (w_d1..w_dJ, 1)."""
        return np.append(self.W[d], 1.0)

    def copy(self) -> "ModelState":
        kx_spec, kx_params = self.kernel_x
        if isinstance(kx_params, tuple):
            kx = (kx_spec, tuple(p.copy() for p in kx_params))
        else:
            kx = (kx_spec, kx_params.copy())
        return ModelState(
            grid=TemporalGrid(self.grid.times.copy()),
            qx=self.qx.copy(),
            kernel_x=kx,
            kernel_h=(self.kernel_h[0], self.kernel_h[1].copy()),
            kernels_g=[(sp, pa.copy()) for sp, pa in self.kernels_g],
            W=self.W.copy(),
            beta=float(self.beta),
            inducing=[InducingSet(ind.Z.copy()) for ind in self.inducing],
            qu=[q.copy() for q in self.qu],
        )


# ---------------------------------------------------------------------------
# kernel parameter blocks


def _atomic_param_vector(spec: KernelSpec, params: KernelParams) -> np.ndarray:
    v = [np.log(params.signal_variance)]
    v.extend(np.log(np.asarray(params.lengthscales, dtype=float)))
    if spec.family == "periodic":
        v.append(np.log(params.period))
    return np.array(v)


def _atomic_param_unvector(spec: KernelSpec, vec: np.ndarray) -> KernelParams:
    sig2 = float(np.exp(vec[0]))
    ell = np.exp(vec[1:1 + spec.input_dim])
    period = float(np.exp(vec[1 + spec.input_dim])) if spec.family == "periodic" else None
    return KernelParams(sig2, ell, period)


def kernel_block_size(spec: KernelSpec) -> int:
    if spec.family == "rbf":
        return 1 + spec.input_dim
    if spec.family == "periodic":
        return 2 + spec.input_dim
    return 3 + 2 * spec.input_dim        # rbf block + periodic block


def kernel_param_vector(spec: KernelSpec, params) -> np.ndarray:
    if spec.family == "rbf+periodic":
        return np.concatenate([
            _atomic_param_vector(KernelSpec("rbf", spec.input_dim), params[0]),
            _atomic_param_vector(KernelSpec("periodic", spec.input_dim), params[1]),
        ])
    return _atomic_param_vector(spec, params)


def kernel_param_unvector(spec: KernelSpec, vec: np.ndarray):
    if spec.family == "rbf+periodic":
        nr = 1 + spec.input_dim
        return (
            _atomic_param_unvector(KernelSpec("rbf", spec.input_dim), vec[:nr]),
            _atomic_param_unvector(KernelSpec("periodic", spec.input_dim), vec[nr:]),
        )
    return _atomic_param_unvector(spec, vec)


# ---------------------------------------------------------------------------
# whole-state packing


def _tril_indices(m: int):
    return np.tril_indices(m)


def pack_chol(L: np.ndarray) -> np.ndarray:
    """Lower triangle row-major, diagonal as logs."""
    m = L.shape[0]
    work = L.copy()
    work[np.diag_indices(m)] = np.log(np.diag(L))
    return work[_tril_indices(m)]


def unpack_chol(vec: np.ndarray, m: int) -> np.ndarray:
    L = np.zeros((m, m))
    L[_tril_indices(m)] = vec
    L[np.diag_indices(m)] = np.exp(np.diag(L))
    return L


def parameter_blocks(state: ModelState) -> list:
    """(name, size) pairs in flat-vector order."""
    blocks = [("kernel_x", kernel_block_size(state.kernel_x[0])),
              ("kernel_h", kernel_block_size(state.kernel_h[0]))]
    for jj in range(state.j):
        blocks.append((f"kernel_g[{jj}]", kernel_block_size(state.kernels_g[jj][0])))
    blocks.append(("W", state.d * state.j))
    blocks.append(("log_beta", 1))
    blocks.append(("qx_means", state.n * state.q))
    blocks.append(("qx_log_variances", state.n * state.q))
    names = [f"g[{jj}]" for jj in range(state.j)] + ["h"]
    for a, name in enumerate(names):
        blocks.append((f"Z[{name}]", state.m * state.q))
    tri = state.m * (state.m + 1) // 2
    for a, name in enumerate(names):
        blocks.append((f"m[{name}]", state.m))
        blocks.append((f"L[{name}]", tri))
    return blocks


def pack_state(state: ModelState) -> np.ndarray:
    parts = [kernel_param_vector(*state.kernel_x),
             kernel_param_vector(*state.kernel_h)]
    parts.extend(kernel_param_vector(sp, pa) for sp, pa in state.kernels_g)
    parts.append(state.W.ravel())
    parts.append(np.array([np.log(state.beta)]))
    parts.append(state.qx.means.ravel())
    parts.append(np.log(state.qx.variances).ravel())
    parts.extend(ind.Z.ravel() for ind in state.inducing)
    for q in state.qu:
        parts.append(q.mean)
        parts.append(pack_chol(q.cov_factor))
    return np.concatenate(parts)


def unpack_state(theta: np.ndarray, template: ModelState) -> ModelState:
    """Rebuild a state from the flat vector, shapes taken from the template."""
    n, d, q, jj, m = template.n, template.d, template.q, template.j, template.m
    pos = 0

    def take(k):
        nonlocal pos
        seg = theta[pos:pos + k]
        pos += k
        return seg

    spec_x = template.kernel_x[0]
    kx = (spec_x, kernel_param_unvector(spec_x, take(kernel_block_size(spec_x))))
    spec_h = template.kernel_h[0]
    kh = (spec_h, kernel_param_unvector(spec_h, take(kernel_block_size(spec_h))))
    kg = []
    for sp, _ in template.kernels_g:
        kg.append((sp, kernel_param_unvector(sp, take(kernel_block_size(sp)))))
    W = take(d * jj).reshape(d, jj).copy()
    beta = float(np.exp(take(1)[0]))
    means = take(n * q).reshape(n, q).copy()
    variances = np.exp(take(n * q).reshape(n, q))
    inducing = [InducingSet(take(m * q).reshape(m, q).copy()) for _ in range(jj + 1)]
    qu = []
    tri = m * (m + 1) // 2
    for _ in range(jj + 1):
        mean = take(m).copy()
        qu.append(GaussianVariational(mean, unpack_chol(take(tri), m)))
    if pos != theta.size:
        raise ConfigurationError("flat parameter vector has the wrong length")
    return ModelState(
        grid=TemporalGrid(template.grid.times.copy()),
        qx=VariationalLatentX(means, variances),
        kernel_x=kx, kernel_h=kh, kernels_g=kg,
        W=W, beta=beta, inducing=inducing, qu=qu,
    )

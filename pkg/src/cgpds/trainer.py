"""Initialization and the stochastic gradient ascent loop.

The optimizer scales each coordinate by exponentially accumulated squared
gradients and smooths the ascent direction with a first-moment average
(both bias-corrected), so one step_size serves parameters of wildly
different curvature.  Dimension minibatches make the ELBO estimate noisy,
so the loop tracks the best state seen under periodic full-batch
evaluations and returns that.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .elbo import elbo, elbo_gradients
from .errors import (ConditioningError, ConfigurationError, DataError,
                     NumericalError)
from .kernels import FAMILIES, KernelParams, KernelSpec
from .latent_prior import TemporalGrid, VariationalLatentX
from .model import ModelState, pack_state, parameter_blocks, unpack_state
from .sparse_layer import GaussianVariational, InducingSet

FULL_EVAL_EVERY = 25
CONVERGENCE_WINDOW = 50

# Divergent steps can underflow squared lengthscales to exactly zero, which
# the compiled backend reports as a bare arithmetic error rather than a nan.
ABORT_ERRORS = (NumericalError, ConditioningError, ConfigurationError,
                ZeroDivisionError, FloatingPointError)


@dataclass
class TrainConfig:
    iterations: int = 500
    step_size: float = 0.05
    batch_dims: int | None = None      # None: full batch
    seed: int = 0
    freeze_inducing: bool = False
    convergence_tol: float = 0.0       # 0 disables the convergence stop

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigurationError("iterations must be at least 1")
        if not self.step_size > 0:
            raise ConfigurationError("step_size must be positive")
        if self.batch_dims is not None and self.batch_dims < 1:
            raise ConfigurationError("batch_dims must be at least 1")
        if self.convergence_tol < 0:
            raise ConfigurationError("convergence_tol must be nonnegative")


@dataclass
class TrainTrace:
    """One record per completed iteration, plus the periodic full-batch
    evaluations used for best-state tracking."""

    records: list = field(default_factory=list)    # (iter, elbo, grad_norm, seconds)
    full_evaluations: list = field(default_factory=list)   # (iter, full elbo)
    aborted: bool = False
    converged: bool = False


class AdaptiveStep:
    """Per-parameter scaling from exponentially accumulated squared
    gradients plus first-moment smoothing, both bias-corrected."""

    DECAY1 = 0.9
    DECAY2 = 0.999

    def __init__(self, size: int, step_size: float):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.step = step_size
        self.count = 0

    def update(self, grad: np.ndarray) -> np.ndarray:
        self.count += 1
        self.m = self.DECAY1 * self.m + (1.0 - self.DECAY1) * grad
        self.v = self.DECAY2 * self.v + (1.0 - self.DECAY2) * grad * grad
        mean = self.m / (1.0 - self.DECAY1 ** self.count)
        scale = self.v / (1.0 - self.DECAY2 ** self.count)
        return self.step * mean / (np.sqrt(scale) + 1e-8)


def _median_pairwise(col: np.ndarray) -> float:
    diff = np.abs(col[:, None] - col[None, :])
    med = float(np.median(diff[np.triu_indices(col.size, k=1)]))
    return med if med > 0 else 1.0


def _init_temporal_kernel(family: str, times: np.ndarray):
    if family not in FAMILIES:
        raise ConfigurationError(f"unknown temporal kernel family {family!r}")
    spec = KernelSpec(family, 1)
    ell = np.array([_median_pairwise(times)])
    period = (times.max() - times.min()) / 2.0
    if family == "rbf":
        return spec, KernelParams(1.0, ell)
    if family == "periodic":
        return spec, KernelParams(1.0, np.array([1.0]), period)
    return spec, (KernelParams(1.0, ell), KernelParams(1.0, np.array([1.0]), period))


def initialize(times, Y, latent_dim: int = 2, num_local: int = 2,
               num_inducing: int | None = None, kernel_x: str = "rbf",
               seed: int = 0) -> ModelState:
    """Deterministic starting state.

    Latent means are the top-Q principal component scores of the
    standardized data, rescaled to unit variance per latent dimension;
    inducing inputs are subsampled latent means; lengthscales come from the
    median pairwise distance heuristic.
    """
    times = np.asarray(times, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise DataError("data must be an N x D matrix")
    n, d = Y.shape
    if times.shape != (n,):
        raise DataError("need one time stamp per data row")
    q, jj = latent_dim, num_local
    if q < 1 or jj < 1:
        raise ConfigurationError("latent_dim and num_local must be at least 1")
    if q >= n or q > d:
        raise ConfigurationError(
            f"latent_dim {q} is rank-deficient for N={n}, D={d} data")
    m = min(20, n) if num_inducing is None else num_inducing
    if not 1 <= m <= n:
        raise ConfigurationError(f"need 1 <= inducing points <= N, got {m}")

    rng = np.random.default_rng(seed)
    grid = TemporalGrid(times)

    std = Y.std(axis=0)
    std[std == 0] = 1.0
    Yc = (Y - Y.mean(axis=0)) / std
    _, _, vt = np.linalg.svd(Yc, full_matrices=False)
    scores = Yc @ vt[:q].T
    scale = scores.std(axis=0)
    scale[scale == 0] = 1.0
    means = scores / scale
    qx = VariationalLatentX(means, np.full((n, q), 0.1))

    spec_x, params_x = _init_temporal_kernel(kernel_x, times)
    ell_latent = np.array([_median_pairwise(means[:, k]) for k in range(q)])
    latent_spec = KernelSpec("rbf", q)

    inducing = []
    qu = []
    for _ in range(jj + 1):
        rows = np.sort(rng.choice(n, size=m, replace=False))
        inducing.append(InducingSet(means[rows].copy()))
        qu.append(GaussianVariational(np.zeros(m), 0.1 * np.eye(m)))

    return ModelState(
        grid=grid, qx=qx,
        kernel_x=(spec_x, params_x),
        kernel_h=(latent_spec, KernelParams(1.0, ell_latent.copy())),
        kernels_g=[(latent_spec, KernelParams(1.0, ell_latent.copy()))
                   for _ in range(jj)],
        W=rng.normal(size=(d, jj)) / np.sqrt(jj),
        beta=100.0 / float(np.var(Y)),
        inducing=inducing, qu=qu,
    )


def _z_block_slices(state: ModelState) -> list:
    slices = []
    pos = 0
    for name, size in parameter_blocks(state):
        if name.startswith("Z["):
            slices.append(slice(pos, pos + size))
        pos += size
    return slices


def fit(state: ModelState, Y, config: TrainConfig) -> tuple:
    """Maximize the bound; returns (best-seen state, trace).

    A numerical failure mid-run stops the loop and returns the best finite
    state observed so far, with the trace flagged aborted.
    """
    Y = np.asarray(Y, dtype=float)
    dcount = state.d
    batch_dims = config.batch_dims if config.batch_dims is not None else dcount
    if batch_dims > dcount:
        raise ConfigurationError(f"batch_dims {batch_dims} exceeds D={dcount}")

    rng = np.random.default_rng(config.seed)
    theta = pack_state(state)
    stepper = AdaptiveStep(theta.size, config.step_size)
    frozen = _z_block_slices(state) if config.freeze_inducing else []
    trace = TrainTrace()

    best_value = elbo(state, Y).total
    best_theta = theta.copy()
    trace.full_evaluations.append((0, best_value))

    start = time.perf_counter()
    for it in range(1, config.iterations + 1):
        batch = np.sort(rng.choice(dcount, size=batch_dims, replace=False))
        try:
            current = unpack_state(theta, state)
            value, grad = elbo_gradients(current, Y, batch)
        except ABORT_ERRORS:
            trace.aborted = True
            break
        for sl in frozen:
            grad[sl] = 0.0
        theta = theta + stepper.update(grad)
        trace.records.append((it, value, float(np.linalg.norm(grad)),
                              time.perf_counter() - start))
        if not np.all(np.isfinite(theta)):
            trace.aborted = True
            break

        if it % FULL_EVAL_EVERY == 0 or it == config.iterations:
            try:
                full = elbo(unpack_state(theta, state), Y).total
            except ABORT_ERRORS:
                trace.aborted = True
                break
            trace.full_evaluations.append((it, full))
            if full > best_value:
                best_value = full
                best_theta = theta.copy()
            if config.convergence_tol > 0:
                past = [v for i, v in trace.full_evaluations
                        if i <= it - CONVERGENCE_WINDOW]
                if past:
                    ref = past[-1]
                    if full - ref < config.convergence_tol * max(1.0, abs(ref)):
                        trace.converged = True
                        break

    return unpack_state(best_theta, state), trace

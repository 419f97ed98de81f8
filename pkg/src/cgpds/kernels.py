"""Stationary covariance functions and their analytic gradients.

Three families are supported:

``rbf``
    Anisotropic squared exponential over ``input_dim`` coordinates,
    k(a, b) = s2 * exp(-0.5 * sum_q (a_q - b_q)^2 / ell_q^2).
``periodic``
    One-dimensional periodic kernel,
    k(a, b) = s2 * exp(-2 * sin^2(pi * (a - b) / period) / ell^2).
``rbf+periodic``
    Sum of the two above; only meaningful for one-dimensional inputs
    (the temporal axis), and parameterized by a pair of component params.

The two latent-layer covariances must be ``rbf`` (their expectations under a
Gaussian have closed forms only in that family); the temporal covariance may
be any of the three.

Parameter gradients are with respect to the natural parameters as stored
(signal variance, lengthscales, period).  Input gradients are provided for
``rbf`` only: that is the single place the model differentiates a kernel
through its inputs (inducing locations live in latent space).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

FAMILIES = ("rbf", "periodic", "rbf+periodic")


@dataclass(frozen=True)
class KernelSpec:
    """Covariance family plus input dimensionality."""

    family: str
    input_dim: int

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown kernel family {self.family!r}")
        if self.input_dim < 1:
            raise ConfigurationError("kernel input_dim must be >= 1")
        if self.family in ("periodic", "rbf+periodic") and self.input_dim != 1:
            raise ConfigurationError(f"{self.family} kernel requires input_dim == 1")


@dataclass
class KernelParams:
    """Parameters of one atomic kernel.

    signal_variance : positive scalar, the zero-lag variance.
    lengthscales    : positive vector of length input_dim.
    period          : positive scalar, periodic family only.
    """

    signal_variance: float
    lengthscales: np.ndarray
    period: float | None = None

    def copy(self) -> "KernelParams":
        return KernelParams(
            float(self.signal_variance),
            np.array(self.lengthscales, dtype=float),
            None if self.period is None else float(self.period),
        )


# A "sum" kernel carries a (rbf_params, periodic_params) pair.
ParamsLike = KernelParams | tuple


def validate_params(spec: KernelSpec, params: ParamsLike) -> None:
    """Raise ConfigurationError unless params are positive and well shaped."""
    if spec.family == "rbf+periodic":
        if not (isinstance(params, tuple) and len(params) == 2):
            raise ConfigurationError("sum kernel expects a (rbf, periodic) params pair")
        validate_params(KernelSpec("rbf", spec.input_dim), params[0])
        validate_params(KernelSpec("periodic", spec.input_dim), params[1])
        return
    if not isinstance(params, KernelParams):
        raise ConfigurationError("atomic kernel expects a single KernelParams")
    ell = np.asarray(params.lengthscales, dtype=float)
    if ell.shape != (spec.input_dim,):
        raise ConfigurationError(
            f"lengthscales shape {ell.shape} does not match input_dim {spec.input_dim}"
        )
    if not np.all(np.isfinite(ell)) or np.any(ell <= 0):
        raise ConfigurationError("lengthscales must be finite and positive")
    if not np.isfinite(params.signal_variance) or params.signal_variance <= 0:
        raise ConfigurationError("signal_variance must be finite and positive")
    if spec.family == "periodic":
        if params.period is None or not np.isfinite(params.period) or params.period <= 0:
            raise ConfigurationError("periodic kernel needs a finite positive period")


def zero_lag_variance(spec: KernelSpec, params: ParamsLike) -> float:
    """k(x, x) for any x; the jitter scale and the diagonal value."""
    if spec.family == "rbf+periodic":
        return float(params[0].signal_variance) + float(params[1].signal_variance)
    return float(params.signal_variance)


def _as_2d(X: np.ndarray, input_dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] != input_dim:
        raise ConfigurationError(f"input of shape {X.shape} does not match input_dim {input_dim}")
    return X


def _rbf_matrix(params: KernelParams, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    diff = A[:, None, :] - B[None, :, :]              # na x nb x Q
    ell2 = np.asarray(params.lengthscales, dtype=float) ** 2
    return params.signal_variance * np.exp(-0.5 * np.sum(diff**2 / ell2, axis=2))


def _periodic_matrix(params: KernelParams, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    lag = A[:, 0][:, None] - B[:, 0][None, :]
    u = np.sin(np.pi * lag / params.period)
    ell2 = float(params.lengthscales[0]) ** 2
    return params.signal_variance * np.exp(-2.0 * u**2 / ell2)


def kernel_matrix(spec: KernelSpec, params: ParamsLike, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Cross-covariance matrix k(A, B), shape (len(A), len(B)).

    >>> spec = KernelSpec("rbf", 2)
    >>> p = KernelParams(1.0, np.ones(2))
    >>> float(kernel_matrix(spec, p, np.zeros((1, 2)), np.array([[1.0, 1.0]]))[0, 0])
    0.36787944117144233
    """
    validate_params(spec, params)
    A = _as_2d(A, spec.input_dim)
    B = _as_2d(B, spec.input_dim)
    if spec.family == "rbf":
        return _rbf_matrix(params, A, B)
    if spec.family == "periodic":
        return _periodic_matrix(params, A, B)
    return _rbf_matrix(params[0], A, B) + _periodic_matrix(params[1], A, B)


def kernel_diag(spec: KernelSpec, params: ParamsLike, A: np.ndarray) -> np.ndarray:
    """diag k(A, A) without forming the matrix; constant for stationary kernels."""
    validate_params(spec, params)
    A = _as_2d(A, spec.input_dim)
    return np.full(A.shape[0], zero_lag_variance(spec, params))


def _rbf_gradients(params: KernelParams, A: np.ndarray, B: np.ndarray,
                   with_inputs: bool) -> dict:
    ell = np.asarray(params.lengthscales, dtype=float)
    diff = A[:, None, :] - B[None, :, :]
    K = params.signal_variance * np.exp(-0.5 * np.sum(diff**2 / ell**2, axis=2))
    out = {
        "signal_variance": K / params.signal_variance,
        # dK/d ell_q = K * diff_q^2 / ell_q^3, stacked as (Q, na, nb)
        "lengthscales": np.transpose(K[:, :, None] * diff**2 / ell**3, (2, 0, 1)),
    }
    if with_inputs:
        # dK[i, k] / dA[i, q] = -K * diff_q / ell_q^2, shape (na, nb, Q)
        out["inputs_a"] = -K[:, :, None] * diff / ell**2
    return out


def _periodic_gradients(params: KernelParams, A: np.ndarray, B: np.ndarray) -> dict:
    ell = float(params.lengthscales[0])
    p = float(params.period)
    lag = A[:, 0][:, None] - B[:, 0][None, :]
    ang = np.pi * lag / p
    u = np.sin(ang)
    K = params.signal_variance * np.exp(-2.0 * u**2 / ell**2)
    return {
        "signal_variance": K / params.signal_variance,
        "lengthscales": (K * 4.0 * u**2 / ell**3)[None, :, :],
        "period": K * 4.0 * u * np.cos(ang) * np.pi * lag / (ell**2 * p**2),
    }


def kernel_gradients(spec: KernelSpec, params: ParamsLike, A: np.ndarray, B: np.ndarray,
                     with_inputs: bool = False) -> dict:
    """Entrywise derivatives of k(A, B) with respect to each parameter.

    Returns a dict keyed by parameter name: "signal_variance" (na, nb),
    "lengthscales" (Q, na, nb), "period" (na, nb).  For the sum family the
    component keys are prefixed "rbf." / "periodic.".  With ``with_inputs``
    the key "inputs_a" holds dk(A,B)/dA of shape (na, nb, Q); only the rbf
    family supports it (the model never differentiates the other families
    through their inputs).
    """
    validate_params(spec, params)
    A = _as_2d(A, spec.input_dim)
    B = _as_2d(B, spec.input_dim)
    if spec.family == "rbf":
        return _rbf_gradients(params, A, B, with_inputs)
    if with_inputs:
        raise ConfigurationError(f"input gradients are not provided for {spec.family}")
    if spec.family == "periodic":
        return _periodic_gradients(params, A, B)
    out = {}
    for name, g in _rbf_gradients(params[0], A, B, False).items():
        out["rbf." + name] = g
    for name, g in _periodic_gradients(params[1], A, B).items():
        out["periodic." + name] = g
    return out

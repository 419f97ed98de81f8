"""Small shared linear-algebra helpers (Cholesky with jitter, SPD inverses)."""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import ConditioningError

# Base jitter relative to the kernel's zero-lag variance.
JITTER = 1e-8
# prior_gram may escalate up to this relative level before giving up.
JITTER_MAX = 1e-4


def cholesky_lower(K: np.ndarray, name: str) -> np.ndarray:
    """Lower Cholesky factor of K, or a ConditioningError naming the kernel."""
    try:
        return scipy.linalg.cholesky(K, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise ConditioningError(f"Cholesky factorization failed for {name}: {exc}") from exc


def spd_inverse(L: np.ndarray) -> np.ndarray:
    """Inverse of K = L Lᵀ from its lower Cholesky factor."""
    eye = np.eye(L.shape[0])
    Linv = scipy.linalg.solve_triangular(L, eye, lower=True)
    return Linv.T @ Linv


def logdet_from_chol(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))

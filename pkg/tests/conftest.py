"""Shared builders for the test suite.

Most tests need a structurally valid model in some random but
well-conditioned configuration.  ``random_state`` centralizes that so
individual tests only state what they vary.
"""

import numpy as np

from cgpds.kernels import KernelParams, KernelSpec
from cgpds.latent_prior import TemporalGrid, VariationalLatentX
from cgpds.model import ModelState
from cgpds.sparse_layer import GaussianVariational, InducingSet


def random_state(rng, n=6, d=4, q=2, j=2, m=4, kx="rbf"):
    """Build a valid random model state with moderate parameter scales."""
    times = np.sort(rng.uniform(0.0, 3.0, size=n))
    grid = TemporalGrid(times)
    qx = VariationalLatentX(rng.normal(size=(n, q)) * 0.8,
                            rng.uniform(0.05, 0.4, size=(n, q)))
    if kx == "rbf":
        kernel_x = (KernelSpec("rbf", 1),
                    KernelParams(rng.uniform(0.5, 1.5),
                                 np.array([rng.uniform(0.4, 1.2)])))
    else:
        kernel_x = (KernelSpec("rbf+periodic", 1),
                    (KernelParams(rng.uniform(0.5, 1.0),
                                  np.array([rng.uniform(0.5, 1.2)])),
                     KernelParams(rng.uniform(0.3, 0.8),
                                  np.array([rng.uniform(0.5, 1.2)]),
                                  period=rng.uniform(1.0, 2.0))))

    def latent_kernel():
        return (KernelSpec("rbf", q),
                KernelParams(rng.uniform(0.5, 1.5),
                             rng.uniform(0.5, 1.5, size=q)))

    kernels_g = [latent_kernel() for _ in range(j)]
    kernel_h = latent_kernel()
    W = rng.normal(size=(d, j)) / np.sqrt(j)
    inducing = [InducingSet(rng.normal(size=(m, q)) * 1.2) for _ in range(j + 1)]
    qu = []
    for _ in range(j + 1):
        F = rng.normal(size=(m, m)) * 0.2
        # strictly positive diagonal keeps the covariance factor valid
        L = np.tril(F, -1) + np.eye(m) * rng.uniform(0.3, 0.8)
        qu.append(GaussianVariational(rng.normal(size=m) * 0.7, L))
    return ModelState(grid=grid, qx=qx, kernel_x=kernel_x, kernel_h=kernel_h,
                      kernels_g=kernels_g, W=W, beta=rng.uniform(2.0, 8.0),
                      inducing=inducing, qu=qu)


def sample_data(rng, state, scale=1.0):
    return rng.normal(size=(state.n, state.d)) * scale

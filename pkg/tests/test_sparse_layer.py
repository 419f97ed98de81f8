"""Inducing-point layer: prior Grams, closed-form expectations of kernel
products under the latent posterior, inducing KL terms, and conditional
moments. Expectations are cross-checked against Gauss-Hermite quadrature,
which shares no code with the production path."""

import numpy as np
import pytest

from cgpds.errors import ConditioningError, ConfigurationError
from cgpds.kernels import KernelParams, KernelSpec, kernel_matrix
from cgpds.latent_prior import VariationalLatentX
from cgpds.numerics import cholesky_lower
from cgpds.sparse_layer import (
    GaussianVariational,
    InducingSet,
    PriorGram,
    conditional_moments,
    kl_inducing,
    prior_gram,
    psi_statistics,
)


def _layer(rng, nproc=3, m=4, q=2):
    specs = []
    inducing = []
    for _ in range(nproc):
        specs.append((KernelSpec("rbf", q),
                      KernelParams(rng.uniform(0.5, 1.8), rng.uniform(0.5, 1.6, size=q))))
        inducing.append(InducingSet(rng.normal(size=(m, q))))
    return specs, inducing


def _gauss_hermite_psi1(params, Z, mu, s, nodes=60):
    """E[kappa(x, z)] for x ~ N(mu, diag s) via per-dimension quadrature.

    The rbf kernel factorizes over input dimensions, so a product of 1-D
    quadratures is exact up to quadrature error.
    """
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    ell2 = np.asarray(params.lengthscales, dtype=float) ** 2
    n, q = mu.shape
    out = np.ones((n, Z.shape[0]))
    for qi in range(q):
        pts = mu[:, [qi]] + np.sqrt(s[:, [qi]]) * x[None, :]          # n x nodes
        f = np.exp(-0.5 * (pts[:, None, :] - Z[:, qi][None, :, None]) ** 2 / ell2[qi])
        out *= (f @ w) / np.sqrt(2 * np.pi)
    return params.signal_variance * out


def _gauss_hermite_omega(pa, Za, pb, Zb, mu, s, weights, nodes=60):
    """sum_n w_n E[kappa_a(x_n, Za)^T kappa_b(x_n, Zb)], same quadrature idea."""
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    la2 = np.asarray(pa.lengthscales, dtype=float) ** 2
    lb2 = np.asarray(pb.lengthscales, dtype=float) ** 2
    n, q = mu.shape
    out = np.ones((n, Za.shape[0], Zb.shape[0]))
    for qi in range(q):
        pts = mu[:, [qi]] + np.sqrt(s[:, [qi]]) * x[None, :]          # n x nodes
        fa = np.exp(-0.5 * (pts[:, None, :] - Za[:, qi][None, :, None]) ** 2 / la2[qi])
        fb = np.exp(-0.5 * (pts[:, None, :] - Zb[:, qi][None, :, None]) ** 2 / lb2[qi])
        out *= np.einsum("nat,nbt,t->nab", fa, fb, w) / np.sqrt(2 * np.pi)
    out *= pa.signal_variance * pb.signal_variance
    return np.einsum("n,nab->ab", weights, out)


class TestContainers:
    def test_inducing_rows_must_be_distinct(self):
        with pytest.raises(ConfigurationError):
            InducingSet(np.array([[0.0, 1.0], [0.0, 1.0]]))
        with pytest.raises(ConfigurationError):
            InducingSet(np.zeros((0, 2)))
        with pytest.raises(ConfigurationError):
            InducingSet(np.array([[np.nan, 0.0]]))

    def test_variational_factor_must_be_lower_with_positive_diagonal(self):
        with pytest.raises(ConfigurationError):
            GaussianVariational(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
        with pytest.raises(ConfigurationError):
            GaussianVariational(np.zeros(2), np.array([[1.0, 0.0], [0.5, -1.0]]))

    def test_cov_is_factor_times_transpose(self):
        L = np.array([[0.7, 0.0], [0.3, 1.2]])
        qv = GaussianVariational(np.zeros(2), L)
        np.testing.assert_array_equal(qv.cov(), L @ L.T)


class TestPriorGram:
    def test_single_point_gram_is_jittered_signal_variance(self):
        spec = KernelSpec("rbf", 2)
        params = KernelParams(1.3, np.array([1.0, 1.0]))
        pg = prior_gram(spec, params, InducingSet(np.zeros((1, 2))))
        np.testing.assert_allclose(pg.K, [[1.3 * (1 + 1e-8)]], rtol=1e-14)
        assert pg.jitter == pytest.approx(1.3e-8)

    def test_distant_points_give_near_diagonal_gram(self):
        spec = KernelSpec("rbf", 1)
        params = KernelParams(2.0, np.array([0.1]))
        Z = InducingSet(np.arange(5, dtype=float)[:, None])
        pg = prior_gram(spec, params, Z)
        off = pg.K - np.diag(np.diag(pg.K))
        assert np.abs(off).max() < 1e-10
        np.testing.assert_allclose(np.diag(pg.K), 2.0 * (1 + 1e-8), rtol=1e-13)

    def test_factor_reproduces_gram(self):
        rng = np.random.default_rng(0)
        specs, inducing = _layer(rng, nproc=4, m=6)
        for (spec, params), ind in zip(specs, inducing):
            pg = prior_gram(spec, params, ind)
            assert np.max(np.abs(pg.L @ pg.L.T - pg.K)) <= 1e-10

    def test_indefinite_matrix_raises_conditioning_error(self):
        with pytest.raises(ConditioningError):
            cholesky_lower(np.array([[1.0, 2.0], [2.0, 1.0]]), "test matrix")


class TestPsiStatistics:
    def test_tight_posterior_recovers_plain_kernel_values(self):
        """As the latent posterior collapses, the expectations reduce to
        kernel evaluations at the posterior means."""
        rng = np.random.default_rng(1)
        specs, inducing = _layer(rng)
        mu = rng.normal(size=(5, 2))
        qx = VariationalLatentX(mu, np.full((5, 2), 1e-14))
        psi = psi_statistics(specs, inducing, qx)
        for a, (spec, params) in enumerate(specs):
            Ka = kernel_matrix(spec, params, mu, inducing[a].Z)
            np.testing.assert_allclose(psi.psi1[a], Ka, atol=1e-6, rtol=1e-6)
            for b in range(a, len(specs)):
                spec_b, params_b = specs[b]
                Kb = kernel_matrix(spec_b, params_b, mu, inducing[b].Z)
                np.testing.assert_allclose(psi.omega(a, b), Ka.T @ Kb,
                                           atol=1e-6, rtol=1e-6)

    def test_unit_scalar_case_closed_form(self):
        """Q=1 with unit variance, lengthscale, and posterior variance and the
        mean sitting on the inducing point: E[kappa] = (1 + s/l^2)^(-1/2)."""
        spec = KernelSpec("rbf", 1)
        params = KernelParams(1.0, np.array([1.0]))
        qx = VariationalLatentX(np.array([[0.3]]), np.array([[1.0]]))
        psi = psi_statistics([(spec, params)], [InducingSet(np.array([[0.3]]))], qx)
        np.testing.assert_allclose(psi.psi1[0][0, 0], 1.0 / np.sqrt(2.0), rtol=1e-12)

    def test_psi0_is_weighted_signal_variance_sum(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            specs, inducing = _layer(rng, nproc=2, m=3)
            n = int(rng.integers(1, 7))
            qx = VariationalLatentX(rng.normal(size=(n, 2)),
                                    rng.uniform(0.05, 1.0, size=(n, 2)))
            w = rng.uniform(0.0, 2.0, size=n)
            psi = psi_statistics(specs, inducing, qx, weights=w)
            for a, (spec, params) in enumerate(specs):
                assert psi.psi0[a] == pytest.approx(w.sum() * params.signal_variance,
                                                    rel=1e-13)

    def test_matches_quadrature(self):
        """Expectation values agree with an independent Gauss-Hermite
        evaluation to near machine precision."""
        rng = np.random.default_rng(3)
        specs, inducing = _layer(rng, nproc=3, m=4)
        qx = VariationalLatentX(rng.normal(size=(6, 2)),
                                rng.uniform(0.05, 0.9, size=(6, 2)))
        w = rng.uniform(0.2, 1.5, size=6)
        psi = psi_statistics(specs, inducing, qx, weights=w)
        for a, (spec, params) in enumerate(specs):
            ref1 = _gauss_hermite_psi1(params, inducing[a].Z, qx.means, qx.variances)
            np.testing.assert_allclose(psi.psi1[a], ref1, rtol=1e-9, atol=1e-12)
            for b in range(a, len(specs)):
                ref2 = _gauss_hermite_omega(params, inducing[a].Z,
                                            specs[b][1], inducing[b].Z,
                                            qx.means, qx.variances, w)
                np.testing.assert_allclose(psi.omega(a, b), ref2,
                                           rtol=1e-9, atol=1e-12)

    def test_omega_transpose_pairing_is_exact(self):
        rng = np.random.default_rng(4)
        specs, inducing = _layer(rng, nproc=3, m=4)
        qx = VariationalLatentX(rng.normal(size=(5, 2)),
                                rng.uniform(0.05, 0.9, size=(5, 2)))
        psi = psi_statistics(specs, inducing, qx)
        for a in range(3):
            for b in range(3):
                np.testing.assert_array_equal(psi.omega(a, b), psi.omega(b, a).T)

    def test_omega_diagonal_blocks_are_positive_semidefinite(self):
        rng = np.random.default_rng(5)
        specs, inducing = _layer(rng, nproc=2, m=5)
        qx = VariationalLatentX(rng.normal(size=(7, 2)),
                                rng.uniform(0.05, 0.9, size=(7, 2)))
        psi = psi_statistics(specs, inducing, qx)
        for a in range(2):
            assert np.linalg.eigvalsh(psi.omega(a, a)).min() >= -1e-10

    def test_validation(self):
        rng = np.random.default_rng(6)
        specs, inducing = _layer(rng, nproc=2)
        qx = VariationalLatentX(rng.normal(size=(4, 2)),
                                rng.uniform(0.1, 0.5, size=(4, 2)))
        with pytest.raises(ConfigurationError):
            psi_statistics(specs, inducing[:1], qx)
        with pytest.raises(ConfigurationError):
            psi_statistics(specs, inducing, qx, weights=np.ones(3))
        bad = [(KernelSpec("periodic", 1),
                KernelParams(1.0, np.array([1.0]), period=1.0))] + specs[1:]
        with pytest.raises(ConfigurationError):
            psi_statistics(bad, inducing, qx)
        narrow = [(KernelSpec("rbf", 1), KernelParams(1.0, np.array([1.0])))] + specs[1:]
        with pytest.raises(ConfigurationError):
            psi_statistics(narrow, inducing, qx)


class TestInducingKl:
    def test_prior_matching_posterior_has_zero_kl(self):
        rng = np.random.default_rng(7)
        specs, inducing = _layer(rng, nproc=2, m=4)
        priors = [prior_gram(spec, params, ind)
                  for (spec, params), ind in zip(specs, inducing)]
        qu = [GaussianVariational(np.zeros(4), pg.L) for pg in priors]
        assert abs(kl_inducing(qu, priors)) <= 1e-12

    def test_scalar_unit_shift_costs_half(self):
        pg = PriorGram(np.eye(1), np.eye(1), 0.0)
        qu = GaussianVariational(np.array([1.0]), np.eye(1))
        assert kl_inducing([qu], [pg]) == pytest.approx(0.5, rel=1e-15)

    def test_nonnegative_on_random_draws(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            m = int(rng.integers(1, 6))
            specs, inducing = _layer(rng, nproc=1, m=m)
            pg = prior_gram(*specs[0], inducing[0])
            F = rng.normal(size=(m, m)) * 0.4
            qu = GaussianVariational(rng.normal(size=m),
                                     np.tril(F, -1) + np.eye(m) * rng.uniform(0.3, 1.2))
            assert kl_inducing([qu], [pg]) >= -1e-10

    def test_block_size_mismatch_rejected(self):
        pg = PriorGram(np.eye(2), np.eye(2), 0.0)
        qu = GaussianVariational(np.zeros(3), np.eye(3))
        with pytest.raises(ConfigurationError):
            kl_inducing([qu], [pg])


class TestConditionalMoments:
    def test_collapsed_posterior_at_inducing_inputs(self):
        """With S -> 0 the process mean at Z reproduces m and the variance
        collapses toward zero."""
        rng = np.random.default_rng(9)
        spec = KernelSpec("rbf", 2)
        params = KernelParams(1.0, np.array([1.0, 1.3]))
        Z = InducingSet(rng.normal(size=(4, 2)) * 1.5)
        m = rng.normal(size=4)
        qu = GaussianVariational(m, np.eye(4) * 1e-9)
        mean, var = conditional_moments(spec, params, Z, qu, Z.Z)
        np.testing.assert_allclose(mean, m, atol=1e-5)
        assert np.abs(var).max() <= 1e-5

    def test_prior_posterior_recovers_prior_marginals(self):
        rng = np.random.default_rng(10)
        spec = KernelSpec("rbf", 2)
        params = KernelParams(1.4, np.array([0.9, 1.1]))
        Z = InducingSet(rng.normal(size=(5, 2)))
        pg = prior_gram(spec, params, Z)
        qu = GaussianVariational(np.zeros(5), pg.L)
        X = rng.normal(size=(7, 2))
        mean, var = conditional_moments(spec, params, Z, qu, X)
        np.testing.assert_allclose(mean, 0.0, atol=1e-12)
        np.testing.assert_allclose(var, 1.4, rtol=1e-6)

    def test_variance_never_meaningfully_negative(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            spec = KernelSpec("rbf", 2)
            params = KernelParams(rng.uniform(0.5, 2.0), rng.uniform(0.4, 1.5, size=2))
            Z = InducingSet(rng.normal(size=(4, 2)))
            F = rng.normal(size=(4, 4)) * 0.3
            qu = GaussianVariational(rng.normal(size=4),
                                     np.tril(F, -1) + np.eye(4) * rng.uniform(0.2, 0.9))
            _, var = conditional_moments(spec, params, Z, qu, rng.normal(size=(6, 2)))
            assert var.min() >= -1e-10

    def test_matches_sampling_through_the_conditional(self):
        rng = np.random.default_rng(12)
        spec = KernelSpec("rbf", 2)
        params = KernelParams(1.2, np.array([0.8, 1.2]))
        Z = InducingSet(rng.normal(size=(3, 2)))
        F = rng.normal(size=(3, 3)) * 0.3
        qu = GaussianVariational(rng.normal(size=3),
                                 np.tril(F, -1) + np.eye(3) * 0.6)
        X = rng.normal(size=(4, 2))
        mean, var = conditional_moments(spec, params, Z, qu, X)

        pg = prior_gram(spec, params, Z)
        Kxz = kernel_matrix(spec, params, X, Z.Z)
        B = np.linalg.solve(pg.K, Kxz.T)
        base = 1.2 - np.sum(Kxz.T * B, axis=0)

        draws = 200000
        us = qu.mean + rng.normal(size=(draws, 3)) @ qu.cov_factor.T
        fs = us @ B + rng.normal(size=(draws, 4)) * np.sqrt(np.maximum(base, 0))
        se_mean = fs.std(axis=0) / np.sqrt(draws)
        mc_var = fs.var(axis=0)
        se_var = mc_var * np.sqrt(2.0 / (draws - 1))
        assert np.all(np.abs(mean - fs.mean(axis=0)) <= 3 * se_mean + 1e-12)
        assert np.all(np.abs(var - mc_var) <= 4 * se_var + 1e-8)

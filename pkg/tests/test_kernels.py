"""Covariance family behaviour: closed-form values, symmetry, positive
semidefiniteness, stationarity, and parameter derivatives against finite
differences."""

import numpy as np
import pytest

from cgpds.errors import ConfigurationError
from cgpds.kernels import (
    KernelParams,
    KernelSpec,
    kernel_diag,
    kernel_gradients,
    kernel_matrix,
    zero_lag_variance,
)


def _random_spec(rng, family, q):
    spec = KernelSpec(family, q if family == "rbf" else 1)
    if family == "rbf":
        params = KernelParams(rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0, size=q))
    elif family == "periodic":
        params = KernelParams(rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0, size=1),
                              period=rng.uniform(0.5, 3.0))
    else:
        params = (KernelParams(rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0, size=1)),
                  KernelParams(rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0, size=1),
                               period=rng.uniform(0.5, 3.0)))
    return spec, params


def _draw_inputs(rng, family, q, na, nb):
    dim = q if family == "rbf" else 1
    return rng.normal(size=(na, dim)), rng.normal(size=(nb, dim))


class TestClosedFormValues:
    def test_zero_lag_equals_signal_variance(self):
        """k(a, a) is the signal variance for every family."""
        rng = np.random.default_rng(0)
        for family in ("rbf", "periodic", "rbf+periodic"):
            spec, params = _random_spec(rng, family, 3)
            a, _ = _draw_inputs(rng, family, 3, 4, 1)
            K = kernel_matrix(spec, params, a, a)
            np.testing.assert_allclose(np.diag(K), zero_lag_variance(spec, params),
                                       rtol=1e-14)

    def test_rbf_unit_params_at_distance_sqrt2(self):
        """With unit variance and lengthscales, squared distance 2 gives exp(-1)."""
        spec = KernelSpec("rbf", 2)
        params = KernelParams(1.0, np.array([1.0, 1.0]))
        a = np.array([[0.0, 0.0]])
        b = np.array([[1.0, 1.0]])
        K = kernel_matrix(spec, params, a, b)
        np.testing.assert_allclose(K[0, 0], np.exp(-1.0), rtol=1e-15)

    def test_periodic_full_period_lag_recovers_signal_variance(self):
        spec = KernelSpec("periodic", 1)
        params = KernelParams(1.7, np.array([0.9]), period=1.3)
        K = kernel_matrix(spec, params, np.array([[0.2]]), np.array([[0.2 + 1.3]]))
        np.testing.assert_allclose(K[0, 0], 1.7, rtol=1e-12)

    def test_diag_constant_and_empty_input(self):
        spec = KernelSpec("rbf", 2)
        params = KernelParams(2.5, np.array([0.7, 1.1]))
        d = kernel_diag(spec, params, np.random.default_rng(1).normal(size=(6, 2)))
        np.testing.assert_array_equal(d, np.full(6, 2.5))
        assert kernel_diag(spec, params, np.zeros((0, 2))).shape == (0,)


class TestMatrixProperties:
    def test_symmetry_is_exact(self):
        rng = np.random.default_rng(7)
        for family in ("rbf", "periodic", "rbf+periodic"):
            spec, params = _random_spec(rng, family, 2)
            a, _ = _draw_inputs(rng, family, 2, 9, 1)
            K = kernel_matrix(spec, params, a, a)
            np.testing.assert_array_equal(K, K.T)

    def test_positive_semidefinite_with_small_jitter(self):
        rng = np.random.default_rng(8)
        for trial in range(30):
            family = ("rbf", "periodic", "rbf+periodic")[trial % 3]
            spec, params = _random_spec(rng, family, 3)
            n = int(rng.integers(2, 21))
            a, _ = _draw_inputs(rng, family, 3, n, 1)
            K = kernel_matrix(spec, params, a, a) + 1e-10 * np.eye(n)
            w = np.linalg.eigvalsh(K)
            assert w.min() >= -1e-10

    def test_stationarity_under_input_shifts(self):
        """k(a, b) depends only on a - b: shifting both inputs leaves it fixed."""
        rng = np.random.default_rng(9)
        for family in ("rbf", "periodic", "rbf+periodic"):
            spec, params = _random_spec(rng, family, 2)
            a, b = _draw_inputs(rng, family, 2, 5, 4)
            shift = rng.normal(size=a.shape[1])
            K0 = kernel_matrix(spec, params, a, b)
            K1 = kernel_matrix(spec, params, a + shift, b + shift)
            np.testing.assert_allclose(K0, K1, rtol=1e-12, atol=1e-14)


def _fd_param(fn, x0, step=1e-6):
    return (fn(x0 + step) - fn(x0 - step)) / (2.0 * step)


class TestGradients:
    def test_zero_lag_derivatives(self):
        """At a == b the variance derivative is 1/sigma^2 * k = 1 for unit
        variance and the lengthscale derivative vanishes."""
        spec = KernelSpec("rbf", 2)
        params = KernelParams(1.0, np.array([0.8, 1.4]))
        a = np.array([[0.3, -0.2]])
        g = kernel_gradients(spec, params, a, a)
        np.testing.assert_allclose(g["signal_variance"][0, 0], 1.0, rtol=1e-15)
        np.testing.assert_allclose(g["lengthscales"][:, 0, 0], 0.0, atol=1e-15)

    @pytest.mark.parametrize("family", ["rbf", "periodic", "rbf+periodic"])
    def test_parameter_gradients_match_finite_differences(self, family):
        rng = np.random.default_rng({"rbf": 31, "periodic": 32, "rbf+periodic": 33}[family])
        for trial in range(34):
            spec, params = _random_spec(rng, family, 2)
            a, b = _draw_inputs(rng, family, 2, 3, 2)
            grads = kernel_gradients(spec, params, a, b)
            for key, g in grads.items():
                fd = self._fd_for_key(spec, params, a, b, key)
                denom = np.maximum(np.abs(fd), 1e-3)
                assert np.max(np.abs(g - fd) / denom) <= 1e-6, (family, key)

    def _fd_for_key(self, spec, params, a, b, key):
        def with_value(setter):
            def fn(v):
                p = self._copy_params(params)
                setter(p, v)
                return kernel_matrix(spec, p, a, b)
            return fn

        part, _, name = key.rpartition(".")
        idx = {"rbf": 0, "periodic": 1}.get(part)

        def pick(p):
            return p if idx is None else p[idx]

        if name == "signal_variance":
            base = float(pick(params).signal_variance)
            fn = with_value(lambda p, v: setattr(pick(p), "signal_variance", v))
            return _fd_param(fn, base)
        if name == "period":
            base = float(pick(params).period)
            fn = with_value(lambda p, v: setattr(pick(p), "period", v))
            return _fd_param(fn, base)
        # lengthscales: one slice per coordinate
        ell = np.asarray(pick(params).lengthscales)
        out = []
        for qi in range(ell.size):
            def setq(p, v, qi=qi):
                pick(p).lengthscales = pick(p).lengthscales.copy()
                pick(p).lengthscales[qi] = v
            out.append(_fd_param(with_value(setq), float(ell[qi])))
        return np.stack(out)

    @staticmethod
    def _copy_params(params):
        if isinstance(params, tuple):
            return (params[0].copy(), params[1].copy())
        return params.copy()

    def test_input_gradients_match_finite_differences(self):
        rng = np.random.default_rng(21)
        spec = KernelSpec("rbf", 3)
        for _ in range(20):
            params = KernelParams(rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0, size=3))
            a = rng.normal(size=(3, 3))
            b = rng.normal(size=(2, 3))
            g = kernel_gradients(spec, params, a, b, with_inputs=True)["inputs_a"]
            for i in range(3):
                for qi in range(3):
                    def fn(v):
                        aa = a.copy()
                        aa[i, qi] = v
                        return kernel_matrix(spec, params, aa, b)[i]
                    fd = _fd_param(fn, a[i, qi])
                    np.testing.assert_allclose(g[i, :, qi], fd, rtol=1e-5, atol=1e-9)

    def test_input_gradients_refused_outside_rbf(self):
        spec = KernelSpec("periodic", 1)
        params = KernelParams(1.0, np.array([1.0]), period=1.0)
        with pytest.raises(ConfigurationError):
            kernel_gradients(spec, params, np.zeros((1, 1)), np.zeros((1, 1)),
                             with_inputs=True)


class TestValidation:
    def test_unknown_family_rejected(self):
        with pytest.raises(ConfigurationError):
            KernelSpec("matern", 1)

    def test_periodic_requires_one_input_dim(self):
        with pytest.raises(ConfigurationError):
            KernelSpec("periodic", 2)
        with pytest.raises(ConfigurationError):
            KernelSpec("rbf+periodic", 3)

    def test_nonpositive_parameters_rejected(self):
        spec = KernelSpec("rbf", 2)
        a = np.zeros((1, 2))
        with pytest.raises(ConfigurationError):
            kernel_matrix(spec, KernelParams(-1.0, np.array([1.0, 1.0])), a, a)
        with pytest.raises(ConfigurationError):
            kernel_matrix(spec, KernelParams(1.0, np.array([1.0, 0.0])), a, a)

    def test_lengthscale_count_must_match_input_dim(self):
        spec = KernelSpec("rbf", 3)
        with pytest.raises(ConfigurationError):
            kernel_matrix(spec, KernelParams(1.0, np.array([1.0])), np.zeros((1, 3)),
                          np.zeros((1, 3)))

    def test_periodic_needs_a_period(self):
        spec = KernelSpec("periodic", 1)
        with pytest.raises(ConfigurationError):
            kernel_matrix(spec, KernelParams(1.0, np.array([1.0])), np.zeros((1, 1)),
                          np.zeros((1, 1)))

"""The jit and numpy expectation kernels must be interchangeable: same
values to near machine precision, gradients consistent with finite
differences of the forward maps, and the environment switch must pick the
requested implementation."""

import os
import subprocess
import sys

import numpy as np
import pytest

from cgpds.backend import _numpy as npk

try:
    from cgpds.backend import _numba as nbk
    HAVE_NUMBA = True
except ImportError:
    nbk = None
    HAVE_NUMBA = False


def _psi_args(rng, n=5, m=4, q=3):
    return (rng.uniform(0.5, 2.0),
            rng.uniform(0.3, 2.0, size=q),
            rng.normal(size=(m, q)),
            rng.normal(size=(n, q)),
            rng.uniform(0.05, 0.8, size=(n, q)))


def _omega_args(rng, n=5, ma=4, mb=3, q=3):
    return (rng.uniform(0.5, 2.0), rng.uniform(0.3, 2.0, size=q),
            rng.normal(size=(ma, q)),
            rng.uniform(0.5, 2.0), rng.uniform(0.3, 2.0, size=q),
            rng.normal(size=(mb, q)),
            rng.normal(size=(n, q)), rng.uniform(0.05, 0.8, size=(n, q)),
            rng.uniform(0.2, 1.5, size=n))


@pytest.mark.skipif(not HAVE_NUMBA, reason="jit backend unavailable")
class TestBackendAgreement:
    def test_psi1_values_agree(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            args = _psi_args(rng)
            np.testing.assert_allclose(nbk.psi1_fwd(*args), npk.psi1_fwd(*args),
                                       rtol=1e-13, atol=1e-15)

    def test_psi1_gradients_agree(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            args = _psi_args(rng)
            adj = rng.normal(size=(args[3].shape[0], args[2].shape[0]))
            for a, b in zip(nbk.psi1_bwd(adj, *args), npk.psi1_bwd(adj, *args)):
                np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)

    def test_omega_values_agree(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            args = _omega_args(rng)
            np.testing.assert_allclose(nbk.omega_fwd(*args), npk.omega_fwd(*args),
                                       rtol=1e-13, atol=1e-15)
            np.testing.assert_allclose(nbk.omega_point(*args[:-1]),
                                       npk.omega_point(*args[:-1]),
                                       rtol=1e-13, atol=1e-15)

    def test_omega_gradients_agree(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            args = _omega_args(rng)
            adj = rng.normal(size=(args[2].shape[0], args[5].shape[0]))
            for a, b in zip(nbk.omega_bwd(adj, *args), npk.omega_bwd(adj, *args)):
                np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


class TestGradientsAgainstFiniteDifferences:
    """The backward maps return derivatives with respect to the squared
    lengthscales; the checks below perturb exactly those quantities."""

    def _fd(self, f, x, step=1e-6):
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(x)
        for i in np.ndindex(x.shape):
            xp = x.copy(); xp[i] += step
            xm = x.copy(); xm[i] -= step
            g[i] = (f(xp) - f(xm)) / (2.0 * step)
        return g

    def test_psi1_bwd_matches_fd(self):
        rng = np.random.default_rng(10)
        sig2, ell2, Z, mu, s = _psi_args(rng, n=3, m=2, q=2)
        adj = rng.normal(size=(3, 2))

        def val(sig2=sig2, ell2=ell2, Z=Z, mu=mu, s=s):
            return float(np.sum(adj * npk.psi1_fwd(sig2, ell2, Z, mu, s)))

        g_sig2, g_ell2, g_z, g_mu, g_s = npk.psi1_bwd(adj, sig2, ell2, Z, mu, s)
        np.testing.assert_allclose(g_sig2, self._fd(lambda v: val(sig2=v[()]),
                                                    np.array(sig2)), rtol=1e-6)
        np.testing.assert_allclose(g_ell2, self._fd(lambda v: val(ell2=v), ell2),
                                   rtol=1e-6, atol=1e-10)
        np.testing.assert_allclose(g_z, self._fd(lambda v: val(Z=v), Z),
                                   rtol=1e-6, atol=1e-10)
        np.testing.assert_allclose(g_mu, self._fd(lambda v: val(mu=v), mu),
                                   rtol=1e-6, atol=1e-10)
        np.testing.assert_allclose(g_s, self._fd(lambda v: val(s=v), s),
                                   rtol=1e-6, atol=1e-10)

    def test_omega_bwd_matches_fd(self):
        rng = np.random.default_rng(11)
        args = list(_omega_args(rng, n=3, ma=2, mb=2, q=2))
        adj = rng.normal(size=(2, 2))

        def val(i, v):
            a = list(args)
            a[i] = v
            return float(np.sum(adj * npk.omega_fwd(*a)))

        grads = npk.omega_bwd(adj, *args)
        # returned order: sig2a, sig2b, ell2a, ell2b, Za, Zb, mu, s
        for gi, ai in enumerate([0, 3, 1, 4, 2, 5, 6, 7]):
            x = np.asarray(args[ai], dtype=float)
            fd = self._fd(lambda v, ai=ai: val(ai, v if x.ndim else v[()]), x)
            np.testing.assert_allclose(grads[gi], fd, rtol=2e-6, atol=1e-9)

    def test_omega_fwd_is_weighted_sum_of_point_terms(self):
        rng = np.random.default_rng(12)
        args = _omega_args(rng)
        w = args[-1]
        pts = npk.omega_point(*args[:-1])
        np.testing.assert_allclose(npk.omega_fwd(*args),
                                   np.einsum("n,nab->ab", w, pts),
                                   rtol=1e-12, atol=1e-14)

    def test_omega_transpose_pairing(self):
        """Swapping the two inducing blocks transposes the result."""
        rng = np.random.default_rng(13)
        sig2a, ell2a, Za, sig2b, ell2b, Zb, mu, s, w = _omega_args(rng)
        ab = npk.omega_fwd(sig2a, ell2a, Za, sig2b, ell2b, Zb, mu, s, w)
        ba = npk.omega_fwd(sig2b, ell2b, Zb, sig2a, ell2a, Za, mu, s, w)
        np.testing.assert_array_equal(ab, ba.T)


class TestSelection:
    def _probe(self, env):
        full = dict(os.environ, **env)
        out = subprocess.run(
            [sys.executable, "-c", "from cgpds.backend import BACKEND; print(BACKEND)"],
            capture_output=True, text=True, env=full)
        return out.returncode, out.stdout.strip(), out.stderr

    def test_numpy_forced(self):
        code, name, _ = self._probe({"CGPDS_BACKEND": "numpy"})
        assert code == 0 and name == "numpy"

    @pytest.mark.skipif(not HAVE_NUMBA, reason="jit backend unavailable")
    def test_numba_forced(self):
        code, name, _ = self._probe({"CGPDS_BACKEND": "numba"})
        assert code == 0 and name == "numba"

    def test_bad_value_rejected(self):
        code, _, err = self._probe({"CGPDS_BACKEND": "cuda"})
        assert code != 0 and "CGPDS_BACKEND" in err

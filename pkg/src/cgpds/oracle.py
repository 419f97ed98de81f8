"""Reference implementations used only by the test suite.

Everything here is computed directly from the model's probabilistic
definition: dense linear algebra, brute-force Monte Carlo, central finite
differences.  Nothing is shared with the estimation code.  Kernels are
re-evaluated from first principles, so agreement between the two paths is
meaningful evidence rather than a tautology.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

# same diagonal stabilizer the estimator adds to process grams
GRAM_STABILIZER = 1e-8


def _rbf(params, A, B):
    diff = (A[:, None, :] - B[None, :, :]) / params.lengthscales
    return params.signal_variance * np.exp(-0.5 * np.sum(diff * diff, axis=2))


def _periodic(params, A, B):
    r = A[:, 0][:, None] - B[:, 0][None, :]
    u = np.sin(np.pi * r / params.period) / params.lengthscales[0]
    return params.signal_variance * np.exp(-2.0 * u * u)


def kernel_eval(spec, params, A, B) -> np.ndarray:
    """Direct kernel evaluation for any supported family."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if spec.family == "rbf":
        return _rbf(params, A, B)
    if spec.family == "periodic":
        return _periodic(params, A, B)
    return _rbf(params[0], A, B) + _periodic(params[1], A, B)


def _stabilized_gram(spec, params, Z):
    K = kernel_eval(spec, params, Z, Z)
    if spec.family == "rbf+periodic":
        sig2 = params[0].signal_variance + params[1].signal_variance
    else:
        sig2 = params.signal_variance
    K[np.diag_indices(K.shape[0])] += GRAM_STABILIZER * sig2
    return K


def dense_log_marginal(X, processes, W, beta, Y) -> float:
    """Exact log marginal likelihood of the weighted-sum-of-processes
    regression model at fixed inputs X.

    Builds the full ND x ND covariance (dimension-major stacking), so it is
    only usable for tiny problems.  ``processes`` is the (spec, params) list
    in process order, local columns of W first, the shared process last.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    W = np.asarray(W, dtype=float)
    n, d = Y.shape
    j = W.shape[1]
    cov = np.eye(n * d) / beta
    for a, (spec, params) in enumerate(processes):
        K = _stabilized_gram(spec, params, X)
        coef = np.outer(W[:, a], W[:, a]) if a < j else np.ones((d, d))
        cov += np.kron(coef, K)
    y = Y.T.ravel()
    c, low = cho_factor(cov, lower=True)
    alpha = cho_solve((c, low), y)
    logdet = 2.0 * np.sum(np.log(np.diag(c)))
    return float(-0.5 * (n * d * np.log(2.0 * np.pi) + logdet + y @ alpha))


def dense_gaussian_kl(mu, S, P) -> float:
    """KL( N(mu, S) || N(0, P) ) from the textbook formula."""
    mu = np.asarray(mu, dtype=float)
    S = np.asarray(S, dtype=float)
    P = np.asarray(P, dtype=float)
    k = mu.size
    c, low = cho_factor(P, lower=True)
    trace = np.trace(cho_solve((c, low), S))
    quad = mu @ cho_solve((c, low), mu)
    logdet_p = 2.0 * np.sum(np.log(np.diag(c)))
    _, logdet_s = np.linalg.slogdet(S)
    return float(0.5 * (trace + quad - k + logdet_p - logdet_s))


# ---------------------------------------------------------------------------
# Monte Carlo estimates of the kernel expectations


@dataclass
class MonteCarloPsi:
    psi0: np.ndarray
    psi0_se: np.ndarray
    psi1: list
    psi1_se: list
    omega: dict
    omega_se: dict


class _MomentTracker:
    """Running mean and standard error over sample axis 0."""

    def __init__(self, shape):
        self.count = 0
        self.total = np.zeros(shape)
        self.total_sq = np.zeros(shape)

    def add(self, batch):
        self.count += batch.shape[0]
        self.total += batch.sum(axis=0)
        self.total_sq += (batch * batch).sum(axis=0)

    def mean(self):
        return self.total / self.count

    def stderr(self):
        m = self.mean()
        var = (self.total_sq / self.count - m * m) * self.count / (self.count - 1)
        return np.sqrt(np.maximum(var, 0.0) / self.count)


def mc_psi(processes, Z, mu, s, weights=None, samples=100000, seed=0,
           chunk=2000) -> MonteCarloPsi:
    """Monte Carlo estimate of the three kernel expectations by sampling the
    latent inputs from N(mu, diag s)."""
    rng = np.random.default_rng(seed)
    mu = np.asarray(mu, dtype=float)
    s = np.asarray(s, dtype=float)
    n, q = mu.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    na = len(processes)
    sd = np.sqrt(s)

    t_psi0 = _MomentTracker((na,))
    t_psi1 = [_MomentTracker((n, Z[a].shape[0])) for a in range(na)]
    t_omega = {(a, b): _MomentTracker((Z[a].shape[0], Z[b].shape[0]))
               for a in range(na) for b in range(a, na)}

    done = 0
    while done < samples:
        t = min(chunk, samples - done)
        X = mu + sd * rng.standard_normal((t, n, q))
        flat = X.reshape(t * n, q)
        kzx = []
        diag = []
        for a, (spec, params) in enumerate(processes):
            kz = kernel_eval(spec, params, Z[a], flat).reshape(Z[a].shape[0], t, n)
            kzx.append(np.transpose(kz, (1, 0, 2)))          # t x Ma x n
            diag.append(np.full((t, n), params.signal_variance))
        t_psi0.add(np.stack([d @ w for d in diag], axis=1))
        for a in range(na):
            t_psi1[a].add(np.transpose(kzx[a], (0, 2, 1)))
            for b in range(a, na):
                t_omega[(a, b)].add(
                    np.einsum("n,tin,tnk->tik", w, kzx[a],
                              np.transpose(kzx[b], (0, 2, 1))))
        done += t

    return MonteCarloPsi(
        psi0=t_psi0.mean(), psi0_se=t_psi0.stderr(),
        psi1=[tr.mean() for tr in t_psi1],
        psi1_se=[tr.stderr() for tr in t_psi1],
        omega={k: tr.mean() for k, tr in t_omega.items()},
        omega_se={k: tr.stderr() for k, tr in t_omega.items()},
    )


# ---------------------------------------------------------------------------
# Monte Carlo estimate of one dimension's expected log-likelihood


def _conditional_factors(state):
    """Per process: cho_factor of the stabilized gram at its inducing set."""
    out = []
    for (spec, params), ind in zip(state.latent_processes(), state.inducing):
        out.append(cho_factor(_stabilized_gram(spec, params, ind.Z), lower=True))
    return out


def mc_elbo_likelihood_term(state, Y, d, samples=20000, seed=0, chunk=250):
    """Monte Carlo estimate of E_q[log p(y_d | processes)] for one output
    dimension, sampling latent inputs and inducing values from q.

    The expectation over each process value at a sampled input is taken in
    closed form through its conditional mean and variance, which only leaves
    q(X) and q(u, v) to sample.  Returns (estimate, standard error).
    """
    rng = np.random.default_rng(seed)
    Y = np.asarray(Y, dtype=float)
    n, q = state.qx.means.shape
    c_d = state.coefficients(d)
    beta = state.beta
    sd = np.sqrt(state.qx.variances)
    factors = _conditional_factors(state)
    procs = state.latent_processes()

    tracker = _MomentTracker(())
    done = 0
    while done < samples:
        t = min(chunk, samples - done)
        X = state.qx.means + sd * rng.standard_normal((t, n, q))
        flat = X.reshape(t * n, q)
        mean_sum = np.zeros((t, n))
        var_sum = np.zeros((t, n))
        for a, (spec, params) in enumerate(procs):
            Z = state.inducing[a].Z
            qu = state.qu[a]
            u = qu.mean + rng.standard_normal((t, Z.shape[0])) @ qu.cov_factor.T
            kxz = kernel_eval(spec, params, flat, Z)             # tn x M
            proj = cho_solve(factors[a], kxz.T).T                # tn x M
            # each sample couples with its own u draw
            proj3 = proj.reshape(t, n, Z.shape[0])
            cond_mean = np.einsum("tnm,tm->tn", proj3, u)
            cond_var = params.signal_variance - np.sum(proj * kxz, axis=1)
            cond_var = np.maximum(cond_var, 0.0).reshape(t, n)
            mean_sum += c_d[a] * cond_mean
            var_sum += c_d[a] ** 2 * cond_var
        resid = Y[:, d][None, :] - mean_sum
        vals = np.sum(-0.5 * np.log(2.0 * np.pi / beta)
                      - 0.5 * beta * (resid * resid + var_sum), axis=1)
        tracker.add(vals)
        done += t
    return float(tracker.mean()), float(tracker.stderr())


# ---------------------------------------------------------------------------
# Monte Carlo estimate of the predictive moments


@dataclass
class MonteCarloPrediction:
    means: np.ndarray
    mean_se: np.ndarray
    variances: np.ndarray
    variance_se: np.ndarray


def mc_predictive_moments(state, star_means, star_vars, samples=200000,
                          seed=0, chunk=2000) -> MonteCarloPrediction:
    """Monte Carlo predictive moments at test points whose latent posteriors
    are N(star_means, diag star_vars).

    Each process's mean and variance are estimated separately by sampling,
    then combined per output dimension with the factorized rule
    mean = sum_j w_dj E(g_j) + E(h), var = sum_j w_dj^2 V(g_j) + V(h) + 1/beta,
    matching what the analytic predictor targets.
    """
    rng = np.random.default_rng(seed)
    star_means = np.asarray(star_means, dtype=float)
    star_vars = np.asarray(star_vars, dtype=float)
    ns, q = star_means.shape
    na = state.j + 1
    factors = _conditional_factors(state)
    procs = state.latent_processes()
    sd = np.sqrt(star_vars)

    # raw moments of the sampled process values, per (star point, process)
    count = 0
    raw = [np.zeros((ns, na)) for _ in range(4)]
    while count < samples:
        t = min(chunk, samples - count)
        X = star_means + sd * rng.standard_normal((t, ns, q))
        flat = X.reshape(t * ns, q)
        for a, (spec, params) in enumerate(procs):
            Z = state.inducing[a].Z
            qu = state.qu[a]
            u = qu.mean + rng.standard_normal((t, Z.shape[0])) @ qu.cov_factor.T
            kxz = kernel_eval(spec, params, flat, Z)
            proj = cho_solve(factors[a], kxz.T).T
            cond_mean = np.einsum("tnm,tm->tn", proj.reshape(t, ns, Z.shape[0]), u)
            cond_var = params.signal_variance - np.sum(proj * kxz, axis=1)
            cond_var = np.maximum(cond_var, 0.0).reshape(t, ns)
            f = cond_mean + np.sqrt(cond_var) * rng.standard_normal((t, ns))
            for p in range(4):
                raw[p][:, a] += np.sum(f ** (p + 1), axis=0)
        count += t

    m1 = raw[0] / count
    m2 = raw[1] / count - m1 ** 2
    # central third/fourth moments, needed for the variance standard error
    m3 = raw[2] / count - 3 * m1 * raw[1] / count + 2 * m1 ** 3
    m4 = (raw[3] / count - 4 * m1 * raw[2] / count
          + 6 * m1 ** 2 * raw[1] / count - 3 * m1 ** 4)
    se_mean = np.sqrt(np.maximum(m2, 0.0) / count)
    se_var = np.sqrt(np.maximum(m4 - m2 ** 2, 0.0) / count)

    dcount = state.d
    means = np.zeros((ns, dcount))
    mean_se = np.zeros((ns, dcount))
    variances = np.zeros((ns, dcount))
    variance_se = np.zeros((ns, dcount))
    for d in range(dcount):
        c_d = state.coefficients(d)
        means[:, d] = m1 @ c_d
        mean_se[:, d] = np.sqrt(se_mean ** 2 @ c_d ** 2)
        variances[:, d] = m2 @ c_d ** 2 + 1.0 / state.beta
        variance_se[:, d] = np.sqrt(se_var ** 2 @ c_d ** 4)
    return MonteCarloPrediction(means, mean_se, variances, variance_se)


def finite_diff_grad(fun, theta, step=1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, one coordinate at a
    time."""
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        hi = theta.copy()
        lo = theta.copy()
        hi[i] += step
        lo[i] -= step
        grad[i] = (fun(hi) - fun(lo)) / (2.0 * step)
    return grad

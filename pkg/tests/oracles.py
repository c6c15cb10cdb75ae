"""Dense-matrix reference formulas for the model conditionals.

Everything here is written against explicit ``Psi_n`` matrices and plain
loops so it shares no code with the sampler or the VB updates.
"""

import numpy as np
from scipy import integrate, stats

from blindcs.model import as_problem


def dense_sensing_matrix(code):
    """Full (H W) x (H W L) matrix acting on the channel-outermost vec(X)."""
    H, W, L = code.codes.shape
    return np.hstack([np.diag(code.codes[:, :, j].ravel()) for j in range(L)])


def vec_cube(x):
    return np.ascontiguousarray(x.transpose(2, 0, 1)).ravel()


def bessel_quad(p, x):
    """K_p(x) = int_0^inf exp(-x cosh t) cosh(p t) dt, integrand formed in log space."""
    p = abs(p)

    def f(t):
        return 0.5 * (np.exp(-x * np.cosh(t) + p * t) + np.exp(-x * np.cosh(t) - p * t))

    # beyond t_max the integrand is below exp(-745) relative to its peak
    t_max = 1.0
    while -x * np.cosh(t_max) + p * t_max > -800 + min(0.0, -x + p):
        t_max *= 1.5
    val, _ = integrate.quad(f, 0, t_max, epsabs=0, epsrel=1e-13, limit=400)
    return val


class DenseProblem:
    def __init__(self, Y, ops):
        Y3, stack = as_problem(Y, ops)
        self.N = stack.n_patches
        self.y = [Y3[n].ravel() for n in range(self.N)]
        self.psi = [stack[n].to_dense() for n in range(self.N)]
        self.nnz = sum(int(np.count_nonzero(p)) for p in self.psi)
        self.P = self.psi[0].shape[1]

    def residual_without(self, st, k, n):
        """``y_n - Psi_n sum_{j != k} d_j nu_j s_jn``."""
        x = sum(st.D[:, j] * st.nu[j] * st.S[j, n] for j in range(st.K) if j != k)
        return self.y[n] - self.psi[n] @ x

    def residual(self, st, n):
        return self.y[n] - self.psi[n] @ (st.D @ (st.nu * st.S[:, n]))


def atom_conditional(dp, st, k):
    prec = dp.P * np.eye(dp.P)
    h = np.zeros(dp.P)
    for n in range(dp.N):
        u = st.nu[k] * st.S[k, n]
        prec += st.alpha0 * u * u * dp.psi[n].T @ dp.psi[n]
        h += st.alpha0 * u * dp.psi[n].T @ dp.residual_without(st, k, n)
    cov = np.linalg.inv(prec)
    return cov @ h, cov


def coefficient_conditional(dp, st, k):
    mean = np.zeros(dp.N)
    var = np.zeros(dp.N)
    for n in range(dp.N):
        b = dp.psi[n] @ st.D[:, k]
        prec = st.alpha0 * (st.tau[n] * st.alpha_kn[k, n] + st.nu[k] ** 2 * b @ b)
        var[n] = 1.0 / prec
        mean[n] = st.alpha0 * st.nu[k] * b @ dp.residual_without(st, k, n) / prec
    return mean, var


def weight_conditional(dp, st, k):
    prec = st.eta[k]
    lin = 0.0
    for n in range(dp.N):
        b = dp.psi[n] @ st.D[:, k]
        prec += st.alpha0 * st.S[k, n] ** 2 * b @ b
        lin += st.alpha0 * st.S[k, n] * b @ dp.residual_without(st, k, n)
    return lin / prec, 1.0 / prec


def tau_conditional(dp, st, h):
    """Gamma shape and rate per patch."""
    shape = np.full(dp.N, h.a0 + 0.5 * st.K)
    rate = np.array([h.b0 + 0.5 * st.alpha0 * sum(st.alpha_kn[k, n] * st.S[k, n] ** 2 for k in range(st.K))
                     for n in range(dp.N)])
    return shape, rate


def alpha_conditional(st):
    """Inverse-Gaussian mean and shape per entry."""
    lam = 1.0 / st.phi
    mu = np.sqrt(lam / (st.S ** 2 * st.tau[None, :] * st.alpha0))
    return mu, lam


def phi_conditional(st, h):
    """GIG ``(a, b, p)`` per entry."""
    return 2.0 * h.h0, 1.0 / st.alpha_kn, h.g0 - 1.0


def noise_conditional(dp, st, h):
    shape = h.c0 + 0.5 * dp.nnz + 0.5 * st.K * dp.N
    rate = h.d0
    for n in range(dp.N):
        r = dp.residual(st, n)
        rate += 0.5 * r @ r
        rate += 0.5 * sum(st.tau[n] * st.alpha_kn[k, n] * st.S[k, n] ** 2 for k in range(st.K))
    return shape, rate


def eta_conditional(st, h, j):
    rate = h.f0
    for q in range(j, st.K):
        prod = np.prod([st.eta_tilde[i] for i in range(q + 1) if i != j])
        rate += 0.5 * st.nu[q] ** 2 * prod
    return h.e0 + 0.5 * (st.K - j), rate


def gamma_moments(shape, rate):
    return shape / rate, shape / rate ** 2


def inverse_gaussian_moments(mu, lam):
    return mu, mu ** 3 / lam


def gig_moments(a, b, p):
    a, b, p = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float), np.asarray(p, float))
    dist = stats.geninvgauss(p, np.sqrt(a * b), scale=np.sqrt(b / a))
    return dist.mean(), dist.var()


def moment_zscores(samples, mean, var):
    """Largest |z| of the sample mean and the sample variance against the targets.

    ``samples`` has draws along axis 0.  The mean uses the analytic variance
    for its standard error; the variance uses the empirical fourth central
    moment.
    """
    x = np.asarray(samples, dtype=float)
    n = x.shape[0]
    m = x.mean(axis=0)
    c = x - m
    v = (c ** 2).sum(axis=0) / (n - 1)
    m4 = (c ** 4).mean(axis=0)
    z_mean = np.abs(m - mean) / np.sqrt(var / n)
    z_var = np.abs(v - var) / np.sqrt(np.maximum(m4 - v ** 2, 1e-300) / n)
    return float(np.max(z_mean)), float(np.max(z_var))


# ---------------------------------------------------------------------------
# Variational factors


def vb_atom_update(dp, st, k):
    """Mean and covariance of q(d_k) given the other factors."""
    prec = dp.P * np.eye(dp.P)
    h = np.zeros(dp.P)
    for n in range(dp.N):
        prec += st.alpha0 * st.nu2[k] * st.S2[k, n] * dp.psi[n].T @ dp.psi[n]
        h += st.alpha0 * st.nu[k] * st.S[k, n] * dp.psi[n].T @ dp.residual_without(st, k, n)
    cov = np.linalg.inv(prec)
    return cov @ h, cov


def vb_expected_gram(dp, st, k, n):
    """``E[d_k^T Psi_n^T Psi_n d_k]`` from the dense covariance."""
    G = dp.psi[n].T @ dp.psi[n]
    d = st.D[:, k]
    return d @ G @ d + np.sum(G * dense_atom_cov(st, k))


def dense_atom_cov(st, k):
    K, m, c, _ = st.D_cov.shape
    cov = np.zeros((c * m, c * m))
    for r in range(m):
        idx = np.arange(c) * m + r
        cov[np.ix_(idx, idx)] = st.D_cov[k, r]
    return cov


def vb_coefficient_update(dp, st, k):
    mean = np.zeros(dp.N)
    var = np.zeros(dp.N)
    for n in range(dp.N):
        b = dp.psi[n] @ st.D[:, k]
        var[n] = 1.0 / (st.alpha0 * (st.tau[n] * st.alpha_kn[k, n] + st.nu2[k] * vb_expected_gram(dp, st, k, n)))
        mean[n] = st.alpha0 * var[n] * st.nu[k] * b @ dp.residual_without(st, k, n)
    return mean, var


def vb_weight_update(dp, st, k):
    prec = st.eta[k]
    lin = 0.0
    for n in range(dp.N):
        b = dp.psi[n] @ st.D[:, k]
        prec += st.alpha0 * st.S2[k, n] * vb_expected_gram(dp, st, k, n)
        lin += st.alpha0 * st.S[k, n] * b @ dp.residual_without(st, k, n)
    return lin / prec, 1.0 / prec


def mc_expected_misfit(dp, st, n_draws, rng, chunk=100_000):
    """Monte-Carlo ``E_q sum_n ||y_n - Psi_n D diag(nu) s_n||^2`` and its standard error."""
    K, m, c, _ = st.D_cov.shape
    chol = np.linalg.cholesky(st.D_cov)
    mean3 = st.D.reshape(c, m, K)
    psi = np.stack(dp.psi)                       # (N, Q, P)
    y = np.stack(dp.y)                           # (N, Q)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_draws:
        B = min(chunk, n_draws - done)
        z = rng.standard_normal((B, K, m, c))
        dev = np.einsum("krij,bkrj->birk", chol, z)             # (B, c, m, K)
        D = (mean3[None] + dev).reshape(B, c * m, K)
        nu = st.nu + np.sqrt(st.nu_var) * rng.standard_normal((B, K))
        S = st.S + np.sqrt(st.S_var) * rng.standard_normal((B, K, dp.N))
        X = np.einsum("bpk,bkn->bpn", D, nu[:, :, None] * S)
        r = y[None] - np.einsum("nqp,bpn->bnq", psi, X)
        f = np.sum(r * r, axis=(1, 2))
        total += f.sum()
        total_sq += (f * f).sum()
        done += B
    mu = total / n_draws
    sd = np.sqrt(max(total_sq / n_draws - mu * mu, 0.0))
    return mu, sd / np.sqrt(n_draws)

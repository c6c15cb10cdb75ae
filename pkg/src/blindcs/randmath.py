"""Special functions and exact samplers used by the inference engines.

All gamma distributions are parameterised by shape and *rate*.  Samplers
accept either a :class:`numpy.random.Generator` or a :class:`PatchStreams`
object; the latter gives every patch its own reproducible stream so that
results do not depend on how the work is scheduled.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .errors import NumericalError

__all__ = [
    "make_rng",
    "PatchStreams",
    "bessel_k",
    "bessel_k_ratio",
    "sample_gamma",
    "sample_inverse_gaussian",
    "sample_gig",
    "gig_mean",
    "gig_mean_inverse",
    "gig_second_moment",
    "sample_block_gaussian",
    "sample_gaussian_dense",
    "block_precision_to_dense",
]

_TINY = np.finfo(float).tiny


def make_rng(seed, *key) -> np.random.Generator:
    """PCG64 generator for ``seed`` and an optional integer sub-stream key."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


class PatchStreams:
    """One independent generator per patch.

    Stream ``n`` is derived from ``(seed, ids[n])`` only, so permuting the
    ``ids`` together with the patches permutes every per-patch draw, and the
    number of worker threads never changes the values drawn.
    """

    def __init__(self, seed, ids: Sequence[int], threads: int = 1, chunk: int = 64):
        self.seed = int(seed)
        self.ids = np.asarray(ids, dtype=np.int64)
        self.gens = [make_rng(seed, 1, int(i)) for i in self.ids]
        self.threads = max(1, int(threads))
        self.chunk = chunk

    def __len__(self):
        return len(self.gens)

    def _run(self, work, ns):
        if self.threads == 1 or len(ns) <= self.chunk:
            for n in ns:
                work(n)
            return
        chunks = [ns[i:i + self.chunk] for i in range(0, len(ns), self.chunk)]

        def run_chunk(c):
            for n in c:
                work(n)

        with ThreadPoolExecutor(max_workers=self.threads) as ex:
            list(ex.map(run_chunk, chunks))

    def fill(self, method: str, mask, *params) -> np.ndarray:
        """Draw ``gen_n.<method>(...)`` for the True entries of ``mask``.

        ``mask`` and ``params`` have the patch index on their last axis.  The
        result is flat, in the C order of ``mask.nonzero()``.
        """
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-1] != len(self.gens):
            raise ValueError("last axis of mask must index patches")
        N = len(self.gens)
        # (N, rest) views so that 1-D masks work like any other
        cols = np.moveaxis(mask, -1, 0).reshape(N, -1)
        pcols = [np.moveaxis(np.broadcast_to(p, mask.shape), -1, 0).reshape(N, -1) for p in params]
        ocols = np.zeros(cols.shape)
        ns = np.flatnonzero(cols.any(axis=1))

        def work(n):
            sel = cols[n]
            fn = getattr(self.gens[n], method)
            if params:
                ocols[n, sel] = fn(*[p[n][sel] for p in pcols])
            else:
                ocols[n, sel] = fn(int(sel.sum()))

        self._run(work, list(ns))
        out = np.moveaxis(ocols.reshape(np.moveaxis(mask, -1, 0).shape), 0, -1)
        return out[mask]


def _draw(rng, method, shape, *params):
    """Draw an array of ``shape`` (params broadcast to it) from either rng kind."""
    mask = np.ones(shape, dtype=bool)
    return _draw_masked(rng, method, mask, *params).reshape(shape)


def _draw_masked(rng, method, mask, *params):
    if isinstance(rng, PatchStreams):
        return rng.fill(method, mask, *params)
    fn = getattr(rng, method)
    if params:
        return fn(*[np.broadcast_to(p, mask.shape)[mask] for p in params])
    return fn(int(np.count_nonzero(mask)))


def _shape_of(size, *arrays):
    if size is not None:
        return tuple(np.atleast_1d(size)) if not np.isscalar(size) else (int(size),)
    return np.broadcast_shapes(*[np.shape(a) for a in arrays])


def _finish(x, shape):
    if shape == ():
        return float(np.asarray(x).reshape(()))
    return np.asarray(x).reshape(shape)


# ---------------------------------------------------------------------------
# Bessel functions


def _flush_order(p):
    # scipy returns nan for subnormal orders; K_p is even and smooth in p,
    # so orders this small are exactly K_0 in double precision
    p = np.asarray(p, dtype=float)
    return np.where(np.abs(p) < 1e-290, 0.0, p)


def bessel_k(p, theta):
    """Modified Bessel function of the second kind ``K_p(theta)``.

    Raises ``OverflowError`` rather than returning ``inf``.
    """
    theta = np.asarray(theta, dtype=float)
    if np.any(~(theta > 0)):
        raise ValueError("bessel_k requires theta > 0")
    with np.errstate(over="ignore"):
        val = special.kv(_flush_order(p), theta)
    if np.any(~np.isfinite(val)):
        raise OverflowError("K_p(theta) overflows double precision")
    return val if val.ndim else float(val)


def bessel_k_ratio(p_num, p_den, theta):
    """``K_{p_num}(theta) / K_{p_den}(theta)`` from exponentially scaled values."""
    theta = np.asarray(theta, dtype=float)
    if np.any(~(theta > 0)):
        raise ValueError("bessel_k_ratio requires theta > 0")
    with np.errstate(over="ignore", invalid="ignore"):
        num = special.kve(_flush_order(p_num), theta)
        den = special.kve(_flush_order(p_den), theta)
        ratio = num / den
    bad = ~np.isfinite(ratio)
    if np.any(bad):
        # both orders overflow for tiny theta; use the small-argument limit
        # K_p(t) ~ Gamma(|p|)/2 (2/t)^|p| for p != 0, -log(t/2) - euler for p = 0
        ratio = np.where(bad, _small_theta_ratio(p_num, p_den, theta), ratio)
        if np.any(~np.isfinite(ratio)):
            raise NumericalError("Bessel ratio is not representable")
    return ratio if np.ndim(ratio) else float(ratio)


def _log_k_small(p, theta):
    p = np.abs(np.asarray(p, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        lead = special.gammaln(np.where(p > 0, p, 1.0)) - np.log(2.0) + p * np.log(2.0 / theta)
        zero = np.log(-np.log(theta / 2.0) - np.euler_gamma)
    return np.where(p > 0, lead, zero)


def _small_theta_ratio(p_num, p_den, theta):
    return np.exp(_log_k_small(p_num, theta) - _log_k_small(p_den, theta))


# ---------------------------------------------------------------------------
# Gamma


def _standard_gamma_masked(a, rng, mask):
    """Unit-rate gamma draws at ``mask`` entries of the full-shape shape array ``a``."""
    out = np.zeros(mask.shape)
    if not mask.any():
        return out
    small = mask & (a < 1.0)
    shape_used = np.where(small, a + 1.0, a)
    out[mask] = _draw_masked(rng, "standard_gamma", mask, shape_used)
    if small.any():
        u = np.ones(mask.shape)
        u[small] = _draw_masked(rng, "random", small)
        with np.errstate(divide="ignore"):
            logg = np.log(out[small]) + np.log1p(-u[small]) / a[small]
        out[small] = np.exp(logg)
    out[mask] = np.maximum(out[mask], _TINY)
    return out


def sample_gamma(shape, rate, rng, size=None):
    """Gamma draws with mean ``shape / rate``.

    Shapes below one use ``G_a = G_{a+1} U^{1/a}`` in log space; the result
    is floored at the smallest positive normal double, so even shapes of
    order 1e-6 never return exact zeros.
    """
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(~(shape > 0)) or np.any(~(rate > 0)):
        raise ValueError("gamma shape and rate must be positive")
    out_shape = _shape_of(size, shape, rate)
    a = np.broadcast_to(shape, out_shape)
    g = _standard_gamma_masked(a, rng, np.ones(out_shape, dtype=bool))
    g = np.maximum(g / np.broadcast_to(rate, out_shape), _TINY)
    return _finish(g, out_shape)


# ---------------------------------------------------------------------------
# Inverse Gaussian


def sample_inverse_gaussian(mu, lam, rng, size=None):
    """Inverse-Gaussian draws (mean ``mu``, shape ``lam``) by Michael-Schucany-Haas.

    The smaller root is evaluated as ``4 mu^2 lam / (mu sqrt(y) + sqrt(mu^2 y +
    4 mu lam))^2``, free of the cancellation in the textbook form when
    ``mu`` is large.
    """
    mu = np.asarray(mu, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if np.any(~(mu > 0)) or np.any(~(lam > 0)):
        raise ValueError("inverse-Gaussian mu and lambda must be positive")
    out_shape = _shape_of(size, mu, lam)
    mu = np.broadcast_to(mu, out_shape)
    lam = np.broadcast_to(lam, out_shape)
    y = _draw(rng, "standard_normal", out_shape) ** 2
    u = _draw(rng, "random", out_shape)
    with np.errstate(over="ignore", invalid="ignore"):
        root = mu * np.sqrt(y) + np.sqrt(mu * mu * y + 4.0 * mu * lam)
        x = 4.0 * mu * mu * lam / (root * root)
        x = np.where(np.isfinite(x) & (x > 0), x, mu / (1.0 + mu * y / lam))
        accept = u * (mu + x) <= mu
        out = np.where(accept, x, mu * mu / x)
    return _finish(out, out_shape)


# ---------------------------------------------------------------------------
# Generalised inverse Gaussian


def gig_mean(a, b, p):
    """``E[x]`` under ``GIG(a, b, p)`` (density ~ x^{p-1} exp(-(a x + b / x) / 2))."""
    a, b, p = (np.asarray(v, dtype=float) for v in (a, b, p))
    w = np.sqrt(a * b)
    return np.sqrt(b / a) * bessel_k_ratio(p + 1.0, p, w)


def gig_mean_inverse(a, b, p):
    """``E[1/x]`` under ``GIG(a, b, p)``."""
    a, b, p = (np.asarray(v, dtype=float) for v in (a, b, p))
    w = np.sqrt(a * b)
    return np.sqrt(a / b) * bessel_k_ratio(p - 1.0, p, w)


def gig_second_moment(a, b, p):
    """``E[x^2]`` under ``GIG(a, b, p)``."""
    a, b, p = (np.asarray(v, dtype=float) for v in (a, b, p))
    w = np.sqrt(a * b)
    return (b / a) * bessel_k_ratio(p + 2.0, p, w)


def _psi(t, alpha, lam):
    return -alpha * (np.cosh(t) - 1.0) - lam * (np.expm1(t) - t)


def _dpsi(t, alpha, lam):
    return -alpha * np.sinh(t) - lam * np.expm1(t)


def _log_gig_two_param(lam, omega, rng, mask):
    """Devroye (2014) rejection sampler on ``log x`` for x^{lam-1} exp(-omega (x + 1/x) / 2).

    ``lam >= 0`` and ``omega > 0`` at the ``mask`` entries; other entries
    carry dummy parameters and are left at zero.
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        alpha = omega * omega / (np.sqrt(omega * omega + lam * lam) + lam)
        # omega > 0 keeps alpha > 0; lam = 0 gives 1/lam = inf, so the
        # minimum picks the log term as the lam = 0 rule requires
        x = -_psi(1.0, alpha, lam)
        t = np.where((x >= 0.5) & (x <= 2.0), 1.0,
                     np.where(x > 2.0, np.sqrt(2.0 / (alpha + lam)), np.log(4.0 / (alpha + 2.0 * lam))))
        x = -_psi(-1.0, alpha, lam)
        s_small = np.minimum(1.0 / lam, np.log1p(1.0 / alpha + np.sqrt(1.0 / alpha ** 2 + 2.0 / alpha)))
        s = np.where((x >= 0.5) & (x <= 2.0), 1.0,
                     np.where(x > 2.0, np.sqrt(4.0 / (alpha * np.cosh(1.0) + lam)), s_small))
        eta = -_psi(t, alpha, lam)
        zeta = -_dpsi(t, alpha, lam)
        theta = -_psi(-s, alpha, lam)
        xi = _dpsi(-s, alpha, lam)
        p = 1.0 / xi
        r = 1.0 / zeta
        td = t - r * eta
        sd = s - p * theta
        q = td + sd
        tot = p + q + r
        q_cut = q / tot
        qr_cut = (q + r) / tot

        out = np.zeros(mask.shape)
        pending = mask.copy()
        for _ in range(10000):
            if pending.all():
                u = _draw_masked(rng, "random", pending).reshape(mask.shape)
                v = _draw_masked(rng, "random", pending).reshape(mask.shape)
                w = _draw_masked(rng, "random", pending).reshape(mask.shape)
            elif pending.any():
                u = np.zeros(mask.shape)
                v = np.ones(mask.shape)
                w = np.zeros(mask.shape)
                u[pending] = _draw_masked(rng, "random", pending)
                v[pending] = _draw_masked(rng, "random", pending)
                w[pending] = _draw_masked(rng, "random", pending)
            else:
                break
            logv = np.log(v)
            rnd = np.where(u < q_cut, -sd + q * v, np.where(u < qr_cut, td - r * logv, -sd + p * logv))
            g = np.where(rnd > td, np.exp(-eta - zeta * (rnd - t)),
                         np.where(rnd < -sd, np.exp(-theta + xi * (rnd + s)), 1.0))
            ok = pending & (w * g <= np.exp(_psi(rnd, alpha, lam)))
            out[ok] = rnd[ok]
            pending &= ~ok
        else:
            raise NumericalError("GIG rejection sampler failed to terminate")
        # undo the mode centring: x = exp(rnd) (lam + sqrt(lam^2 + omega^2)) / omega
        shift = np.log(lam + np.sqrt(lam * lam + omega * omega)) - np.log(omega)
    return np.where(mask, out + shift, 0.0)


def sample_gig(a, b, p, rng, size=None):
    """Exact draws from ``GIG(a, b, p)``.

    Valid for ``a > 0, b > 0`` with any ``p``; ``b = 0`` needs ``p > 0``
    (gamma limit ``Ga(p, a/2)``) and ``a = 0`` needs ``p < 0`` (inverse-gamma
    limit ``InvGa(-p, b/2)``).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    p = np.asarray(p, dtype=float)
    out_shape = _shape_of(size, a, b, p)
    a, b, p = (np.broadcast_to(v, out_shape) for v in (a, b, p))
    if np.any(a < 0) or np.any(b < 0) or np.any(~np.isfinite(a + b + p)):
        raise ValueError("GIG parameters must be finite with a, b >= 0")
    gam = b == 0
    inv = a == 0
    if np.any(gam & ~(p > 0)) or np.any(inv & ~(p < 0)) or np.any(gam & inv):
        raise ValueError("invalid GIG parameter region")
    full = ~(gam | inv)
    omega = np.sqrt(a * b)
    if np.any(full & (omega == 0)):
        raise NumericalError("GIG with sqrt(a b) underflowing to zero")
    out = np.zeros(out_shape)
    if full.any():
        lam = np.where(full, np.abs(p), 1.0)
        logx = _log_gig_two_param(lam, np.where(full, omega, 1.0), rng, full)
        logx = np.where(p < 0, -logx, logx)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            logx = logx + 0.5 * (np.log(b) - np.log(a))
            out = np.where(full, np.exp(logx), out)
    if gam.any():
        g = _standard_gamma_masked(np.where(gam, p, 1.0), rng, gam)
        out = np.where(gam, g / np.where(gam, a / 2.0, 1.0), out)
    if inv.any():
        g = _standard_gamma_masked(np.where(inv, -p, 1.0), rng, inv)
        with np.errstate(divide="ignore"):
            out = np.where(inv, np.where(inv, b / 2.0, 1.0) / g, out)
    out = np.clip(out, _TINY, np.finfo(float).max)
    return _finish(out, out_shape)


# ---------------------------------------------------------------------------
# Gaussians with pixel-block precision


def sample_block_gaussian(prec_blocks, rhs, rng, return_mean=False):
    """Draw from ``N(Q^{-1} b, Q^{-1})`` for block-diagonal ``Q``.

    Parameters
    ----------
    prec_blocks : ndarray, shape (m, c, c)
        Symmetric positive-definite diagonal blocks of the precision.
    rhs : ndarray, shape (m, c)
        The linear term ``b`` (precision times mean), block by block.
    rng : Generator
        Source of the standard normals (one per coordinate, block order).

    Cost is ``O(m c^3)``; no ``(m c) x (m c)`` matrix is formed.
    """
    prec_blocks = np.asarray(prec_blocks, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    try:
        chol = np.linalg.cholesky(prec_blocks)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("precision is not positive definite") from exc
    # Q = L L^T; mean = L^-T L^-1 b; noise = L^-T z
    half = np.linalg.solve(chol, rhs[..., None])
    z = _draw(rng, "standard_normal", rhs.shape)[..., None]
    lower_t = np.swapaxes(chol, -1, -2)
    mean = np.linalg.solve(lower_t, half)[..., 0]
    draw = np.linalg.solve(lower_t, half + z)[..., 0]
    if not np.all(np.isfinite(draw)):
        raise NumericalError("non-finite Gaussian draw")
    return (draw, mean) if return_mean else draw


def sample_gaussian_dense(prec, rhs, rng):
    """Dense reference draw from ``N(Q^{-1} b, Q^{-1})`` (small problems / tests)."""
    prec = np.asarray(prec, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("precision is not positive definite") from exc
    from scipy.linalg import solve_triangular

    half = solve_triangular(chol, rhs, lower=True)
    z = _draw(rng, "standard_normal", rhs.shape)
    return solve_triangular(chol.T, half + z, lower=False)


def block_precision_to_dense(prec_blocks) -> np.ndarray:
    """Expand ``(m, c, c)`` pixel blocks into the ``(c m) x (c m)`` matrix in patch-vector order."""
    prec_blocks = np.asarray(prec_blocks)
    m, c, _ = prec_blocks.shape
    dense = np.zeros((c, m, c, m))
    idx = np.arange(m)
    dense[:, idx, :, idx] = prec_blocks
    return dense.reshape(c * m, c * m)

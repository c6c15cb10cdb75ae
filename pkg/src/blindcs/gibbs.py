"""Blocked Gibbs sampler for the shrinkage dictionary model.

One sweep visits, in order: the atoms ``d_k``, the coefficients ``s_kn``,
the patch scales ``tau_n``, the local scales ``alpha_kn``, their mixing
parameters ``phi_kn``, the noise precision ``alpha0``, the atom weights
``nu_k`` and the multiplicative-gamma factors ``eta_tilde_k``.

The residual ``R_n = y_n - Psi_n D diag(nu) s_n`` is kept up to date by
rank-one corrections while the atoms, coefficients and weights move, and is
recomputed from scratch at the start of every sweep so rounding errors
cannot accumulate.

Per-patch conditionals (coefficients, tau, alpha, phi) draw from the
patch's own stream (see :class:`blindcs.randmath.PatchStreams`); the
remaining, global, conditionals use a single generator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import NumericalError
from .model import (
    Hyperparams,
    InferenceOpts,
    ModelState,
    as_problem,
    init_state,
    neg_log_posterior,
    prune_atoms,
)
from .randmath import (
    PatchStreams,
    _draw,
    make_rng,
    sample_block_gaussian,
    sample_gamma,
    sample_gig,
    sample_inverse_gaussian,
)

__all__ = [
    "GibbsRng",
    "GibbsContext",
    "GibbsTrace",
    "GibbsResult",
    "make_gibbs_rng",
    "sample_atoms",
    "sample_coefficients",
    "sample_tau",
    "sample_alpha",
    "sample_phi",
    "sample_noise_precision",
    "sample_weights",
    "sample_eta",
    "sweep",
    "run",
]

S2_FLOOR = 1e-12
ALPHA_CEIL = 1e12


@dataclass
class GibbsRng:
    """Random sources for one chain: ``shared`` for global draws, ``patches`` per patch."""

    shared: np.random.Generator
    patches: object


def make_gibbs_rng(seed, n_patches, threads=1, ids=None) -> GibbsRng:
    if ids is None:
        ids = np.arange(n_patches)
    return GibbsRng(make_rng(seed, 0), PatchStreams(seed, ids, threads))


def _as_gibbs_rng(rng, n_patches) -> GibbsRng:
    if isinstance(rng, GibbsRng):
        return rng
    if isinstance(rng, np.random.Generator):
        return GibbsRng(rng, rng)
    return make_gibbs_rng(0 if rng is None else rng, n_patches)


class GibbsContext:
    """Data, operators and the running residual shared by the step functions."""

    def __init__(self, Y, ops, hyper: Optional[Hyperparams] = None):
        self.Y3, self.stack = as_problem(Y, ops)
        self.hyper = hyper or Hyperparams()
        self.N, self.q, self.m = self.Y3.shape
        self.c = self.stack.c
        self.P = self.c * self.m
        self.nnz_total = float(self.stack.nnz().sum())
        self.R = None

    def atoms(self, state: ModelState) -> np.ndarray:
        """``(c, m, K)`` view of the dictionary."""
        return state.D.reshape(self.c, self.m, state.K)

    def refresh(self, state: ModelState):
        X = state.signal().T.reshape(self.N, self.c, self.m)
        self.R = self.Y3 - self.stack.apply(X)
        return self.R


def _event(state, name, count):
    if count:
        state.events[name] = state.events.get(name, 0) + int(count)


def _check(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite value produced by the {name} update")


def _atom_list(ks, K):
    return range(K) if ks is None else ks


# ---------------------------------------------------------------------------
# Conditional updates.  Each one modifies ``state`` in place.


def sample_atoms(state: ModelState, ctx: GibbsContext, rng, ks=None):
    """``d_k | -`` for every atom (or the atoms in ``ks``).

    The precision is ``P I + alpha0 nu_k^2 sum_n s_kn^2 Psi_n^T Psi_n``, block
    diagonal over pixels, so the draw costs ``m`` small Cholesky solves.
    """
    D3 = ctx.atoms(state)
    a0 = state.alpha0
    eye = np.eye(ctx.c)
    for k in _atom_list(ks, state.K):
        u = state.nu[k] * state.S[k]
        d_old = D3[:, :, k].copy()
        if not np.any(u):
            # nothing observes this atom: its conditional is the prior
            d_new = _draw(rng, "standard_normal", (ctx.m, ctx.c)).T / np.sqrt(ctx.P)
        else:
            G = ctx.stack.weighted_gram_sum(u * u)
            T = ctx.stack.weighted_transpose_sum(u, ctx.R)
            b = a0 * (T.T + np.einsum("rij,jr->ri", G, d_old))
            prec = a0 * G + ctx.P * eye
            d_new = sample_block_gaussian(prec, b, rng).T
            ctx.R -= u[:, None, None] * ctx.stack.apply_atom(d_new - d_old)
        D3[:, :, k] = d_new
    _check("dictionary", state.D)


def sample_coefficients(state: ModelState, ctx: GibbsContext, rng, ks=None):
    """``s_kn | -``, all patches at once, atom by atom."""
    D3 = ctx.atoms(state)
    a0 = state.alpha0
    ks = list(_atom_list(ks, state.K))
    z = _draw(rng, "standard_normal", (len(ks), ctx.N))
    for i, k in enumerate(ks):
        nu = state.nu[k]
        B = ctx.stack.apply_atom(D3[:, :, k])
        quad = np.einsum("nqr,nqr->n", B, B)
        proj = np.einsum("nqr,nqr->n", B, ctx.R)
        s_old = state.S[k].copy()
        var = 1.0 / (a0 * (state.tau * state.alpha_kn[k] + nu * nu * quad))
        mean = a0 * var * nu * (proj + nu * s_old * quad)
        s_new = mean + np.sqrt(var) * z[i]
        ctx.R -= (nu * (s_new - s_old))[:, None, None] * B
        state.S[k] = s_new
    _check("coefficient", state.S)


def sample_tau(state: ModelState, ctx: GibbsContext, rng):
    h = ctx.hyper
    shape = np.full(ctx.N, h.a0 + 0.5 * state.K)
    rate = h.b0 + 0.5 * state.alpha0 * np.sum(state.S ** 2 * state.alpha_kn, axis=0)
    state.tau = sample_gamma(shape, rate, rng)
    _check("tau", state.tau)


def sample_alpha(state: ModelState, ctx: GibbsContext, rng):
    """``alpha_kn | -`` is inverse Gaussian; tiny ``s^2`` and huge draws are clamped."""
    s2 = state.S ** 2
    low = s2 < S2_FLOOR
    _event(state, "s2_floor", low.sum())
    s2 = np.where(low, S2_FLOOR, s2)
    with np.errstate(over="ignore", divide="ignore"):
        mu = np.sqrt(1.0 / (state.phi * s2 * state.tau[None, :] * state.alpha0))
        lam = 1.0 / state.phi
    mu = np.minimum(mu, np.finfo(float).max)
    lam = np.minimum(lam, np.finfo(float).max)
    alpha = sample_inverse_gaussian(mu, lam, rng)
    high = ~(alpha <= ALPHA_CEIL)
    _event(state, "alpha_ceiling", high.sum())
    state.alpha_kn = np.where(high, ALPHA_CEIL, np.maximum(alpha, np.finfo(float).tiny))


def sample_phi(state: ModelState, ctx: GibbsContext, rng):
    h = ctx.hyper
    a = np.full(state.alpha_kn.shape, 2.0 * h.h0)
    state.phi = sample_gig(a, 1.0 / state.alpha_kn, h.g0 - 1.0, rng)
    _check("phi", state.phi)


def sample_noise_precision(state: ModelState, ctx: GibbsContext, rng):
    h = ctx.hyper
    K, N = state.S.shape
    shape = h.c0 + 0.5 * ctx.nnz_total + 0.5 * K * N
    rate = (
        h.d0
        + 0.5 * float(np.sum(ctx.R * ctx.R))
        + 0.5 * float(np.sum(state.S ** 2 * state.tau[None, :] * state.alpha_kn))
    )
    state.alpha0 = float(sample_gamma(shape, rate, rng))
    _check("alpha0", state.alpha0)


def sample_weights(state: ModelState, ctx: GibbsContext, rng, ks=None):
    """``nu_k | -`` one atom at a time."""
    D3 = ctx.atoms(state)
    a0 = state.alpha0
    for k in _atom_list(ks, state.K):
        s = state.S[k]
        B = ctx.stack.apply_atom(D3[:, :, k])
        quad = np.einsum("nqr,nqr->n", B, B)
        proj = np.einsum("nqr,nqr->n", B, ctx.R)
        nu_old = state.nu[k]
        var = 1.0 / (state.eta[k] + a0 * np.sum(s * s * quad))
        mean = var * a0 * np.sum(s * (proj + nu_old * s * quad))
        nu_new = mean + np.sqrt(var) * float(rng.standard_normal())
        ctx.R -= ((nu_new - nu_old) * s)[:, None, None] * B
        state.nu[k] = nu_new
    _check("weight", state.nu)


def sample_eta(state: ModelState, ctx: GibbsContext, rng, js=None):
    """Multiplicative-gamma factors, updated in index order (or only ``js``)."""
    h = ctx.hyper
    K = state.K
    nu2 = state.nu ** 2
    for j in _atom_list(js, K):
        rest = state.eta_tilde.copy()
        rest[j] = 1.0
        partial = np.cumprod(rest)[j:]  # eta_q / eta_tilde_j for q >= j
        rate = h.f0 + 0.5 * float(np.sum(nu2[j:] * partial))
        state.eta_tilde[j] = sample_gamma(h.e0 + 0.5 * (K - j), rate, rng)
    state.refresh_eta()
    _check("eta", state.eta_tilde, state.eta)


# ---------------------------------------------------------------------------


def _sweep_inplace(state: ModelState, ctx: GibbsContext, rng: GibbsRng):
    ctx.refresh(state)
    sample_atoms(state, ctx, rng.shared)
    sample_coefficients(state, ctx, rng.patches)
    sample_tau(state, ctx, rng.patches)
    sample_alpha(state, ctx, rng.patches)
    sample_phi(state, ctx, rng.patches)
    sample_noise_precision(state, ctx, rng.shared)
    sample_weights(state, ctx, rng.shared)
    sample_eta(state, ctx, rng.shared)


def sweep(state: ModelState, Y, ops, hyper: Optional[Hyperparams] = None, rng=None) -> ModelState:
    """One full Gibbs sweep; returns a new state and leaves ``state`` untouched.

    ``rng`` may be a :class:`GibbsRng`, a seed, or a single Generator used
    for every draw.
    """
    ctx = GibbsContext(Y, ops, hyper)
    new = state.copy()
    _sweep_inplace(new, ctx, _as_gibbs_rng(rng, ctx.N))
    return new


@dataclass
class GibbsTrace:
    iteration: List[int] = field(default_factory=list)
    neg_log_posterior: List[float] = field(default_factory=list)
    alpha0: List[float] = field(default_factory=list)
    n_atoms: List[int] = field(default_factory=list)
    events: Dict[str, int] = field(default_factory=dict)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "neg_log_posterior", "alpha0"])
            for row in zip(self.iteration, self.neg_log_posterior, self.alpha0):
                w.writerow([row[0], repr(row[1]), repr(row[2])])


@dataclass
class GibbsResult:
    patches: np.ndarray   # (P, N) estimate of the patch signals
    state: ModelState     # final sample
    trace: GibbsTrace
    n_samples: int


def run(Y, ops, opts: Optional[InferenceOpts] = None, hyper: Optional[Hyperparams] = None,
        state: Optional[ModelState] = None, patch_ids=None) -> GibbsResult:
    """Run a chain and average ``D diag(nu) S`` over the post-burn-in sweeps.

    With ``opts.final_sample`` the last sample is returned instead of the
    average.  ``patch_ids`` names the per-patch random streams and defaults
    to ``0 .. N-1``.
    """
    opts = opts or InferenceOpts()
    ctx = GibbsContext(Y, ops, hyper)
    rng = make_gibbs_rng(opts.seed, ctx.N, opts.threads, patch_ids)
    if state is None:
        state = init_state(ctx.Y3.reshape(ctx.N, -1).T, ctx.stack, opts, ctx.hyper, make_rng(opts.seed, 2))
    else:
        state = state.copy()
    state.check()
    trace = GibbsTrace()
    total = np.zeros((ctx.P, ctx.N))
    n_samples = 0
    for it in range(opts.iterations):
        _sweep_inplace(state, ctx, rng)
        if opts.prune_threshold > 0:
            K_before = state.K
            state = prune_atoms(state, opts.prune_threshold)
            if state.K != K_before:
                ctx.refresh(state)
        trace.iteration.append(it)
        trace.neg_log_posterior.append(neg_log_posterior(state, None, None, ctx.hyper, residual=ctx.R))
        trace.alpha0.append(state.alpha0)
        trace.n_atoms.append(state.K)
        if it >= opts.burn_in and not opts.final_sample:
            total += state.signal()
            n_samples += 1
    trace.events = dict(state.events)
    if opts.final_sample:
        return GibbsResult(state.signal(), state, trace, 1)
    return GibbsResult(total / n_samples, state, trace, n_samples)

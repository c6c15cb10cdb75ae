"""Mean-field variational Bayes for the shrinkage dictionary model.

The factorised posterior keeps a Gaussian for every atom (with a full
covariance made of per-pixel ``(c, c)`` blocks, the same structure as the
Gibbs precision), independent Gaussians for every coefficient and atom
weight, and point moments for the scale parameters.  The coordinate-ascent
pass follows the order of the Gibbs sweep.

The ELBO is not evaluated; progress is tracked with the expected data misfit
``sum_n E||y_n - Psi_n D diag(nu) s_n||^2`` under the factorised posterior.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import NumericalError
from .model import Hyperparams, InferenceOpts, as_problem
from .randmath import gig_mean, gig_mean_inverse, make_rng

__all__ = [
    "VbState",
    "VbTrace",
    "VbResult",
    "VbContext",
    "init_vb_state",
    "expected_misfit",
    "update_atoms",
    "update_coefficients",
    "update_tau",
    "update_alpha",
    "update_phi",
    "update_noise_precision",
    "update_weights",
    "update_eta",
    "vb_iterate",
    "run_vb",
]

ALPHA_CEIL = 1e12


@dataclass
class VbState:
    D: np.ndarray          # (P, K) atom means
    D_cov: np.ndarray      # (K, m, c, c) pixel blocks of each atom covariance
    S: np.ndarray          # (K, N) coefficient means
    S_var: np.ndarray      # (K, N)
    nu: np.ndarray         # (K,)
    nu_var: np.ndarray     # (K,)
    tau: np.ndarray        # (N,)
    alpha_kn: np.ndarray   # (K, N)
    phi: np.ndarray        # (K, N)  <Phi>
    phi_inv: np.ndarray    # (K, N)  <1/Phi>
    eta_tilde: np.ndarray  # (K,)
    eta: np.ndarray        # (K,)
    alpha0: float
    events: Dict[str, int] = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.D.shape[1]

    @property
    def D_var(self) -> np.ndarray:
        """Per-coordinate variances of the atoms, ``(P, K)`` in patch-vector order."""
        diag = np.diagonal(self.D_cov, axis1=2, axis2=3)  # (K, m, c)
        return np.ascontiguousarray(np.transpose(diag, (2, 1, 0))).reshape(-1, self.K)

    @property
    def S2(self) -> np.ndarray:
        return self.S ** 2 + self.S_var

    @property
    def nu2(self) -> np.ndarray:
        return self.nu ** 2 + self.nu_var

    def signal(self) -> np.ndarray:
        return self.D @ (self.nu[:, None] * self.S)

    def copy(self) -> "VbState":
        vals = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}
        vals["events"] = dict(self.events)
        return VbState(**vals)

    def check(self):
        for name in ("S_var", "nu_var", "tau", "alpha_kn", "phi", "phi_inv", "eta_tilde", "eta"):
            v = getattr(self, name)
            if not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise ValueError(f"{name} must be finite and strictly positive")
        if not (np.isfinite(self.alpha0) and self.alpha0 > 0):
            raise ValueError("alpha0 must be finite and positive")


def init_vb_state(Y, ops, opts: InferenceOpts, rng=None) -> VbState:
    """Atom means drawn from the prior, zero coefficient means, unit scales.

    Every variance starts at its prior value given the unit scales.
    """
    Y3, stack = as_problem(Y, ops)
    if rng is None:
        rng = make_rng(opts.seed, 2)
    N, q, m = Y3.shape
    c = stack.c
    P, K = c * m, opts.K
    var = float(np.var(Y3))
    alpha0 = 1.0 / var if var > 0 else 1.0
    return VbState(
        D=rng.standard_normal((P, K)) / np.sqrt(P),
        D_cov=np.broadcast_to(np.eye(c) / P, (K, m, c, c)).copy(),
        S=np.zeros((K, N)),
        S_var=np.full((K, N), 1.0 / alpha0),
        nu=np.ones(K),
        nu_var=np.ones(K),
        tau=np.ones(N),
        alpha_kn=np.ones((K, N)),
        phi=np.ones((K, N)),
        phi_inv=np.ones((K, N)),
        eta_tilde=np.ones(K),
        eta=np.ones(K),
        alpha0=alpha0,
    )


class _Problem:
    def __init__(self, Y, ops, hyper):
        self.Y3, self.stack = as_problem(Y, ops)
        self.hyper = hyper or Hyperparams()
        self.N, self.q, self.m = self.Y3.shape
        self.c = self.stack.c
        self.P = self.c * self.m
        self.nnz_total = float(self.stack.nnz().sum())

    def atoms(self, D):
        # (K, c, m) copy of the atom means
        return np.ascontiguousarray(D.reshape(self.c, self.m, -1).transpose(2, 0, 1))

    def mean_residual(self, st: VbState):
        X = st.signal().T.reshape(self.N, self.c, self.m)
        return self.Y3 - self.stack.apply(X)

    def quad_and_trace(self, st: VbState):
        """``||Psi_n <d_k>||^2`` and ``tr(Psi_n^T Psi_n Sigma_k)``, both (N, K)."""
        return self.stack.quad_all(self.atoms(st.D)), self.stack.trace_with(st.D_cov)


def _misfit(R, st: VbState, quad, tr):
    spread = st.nu2[None, :] * st.S2.T * (quad + tr) - (st.nu[None, :] * st.S.T) ** 2 * quad
    return float(np.sum(R * R) + np.sum(spread))


def expected_misfit(state: VbState, Y, ops) -> float:
    """``sum_n E_q ||y_n - Psi_n D diag(nu) s_n||^2`` in closed form."""
    pr = _Problem(Y, ops, None)
    quad, tr = pr.quad_and_trace(state)
    return _misfit(pr.mean_residual(state), state, quad, tr)


def _check(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite value produced by the {name} update")


class VbContext(_Problem):
    """Problem data plus the running mean residual and per-atom quadratic terms."""

    def __init__(self, Y, ops, hyper=None):
        super().__init__(Y, ops, hyper)
        self.R = None
        self.quad = None
        self.tr = None

    def refresh(self, st: VbState):
        self.R = self.mean_residual(st)
        self.quad, self.tr = self.quad_and_trace(st)


def update_atoms(st: VbState, ctx: VbContext):
    """Gaussian factor of every atom: block covariance and mean."""
    stack = ctx.stack
    c, m, K = ctx.c, ctx.m, st.K
    D3 = st.D.reshape(c, m, K)
    eye = np.eye(c)
    a0 = st.alpha0
    for k in range(K):
        u = st.nu[k] * st.S[k]
        if not np.any(u):
            # an atom no coefficient uses keeps its moments; solving it
            # would pin the mean at zero and the pass could never leave it
            continue
        w2 = st.nu2[k] * st.S2[k]
        d_old = D3[:, :, k].copy()
        T = stack.weighted_transpose_sum(u, ctx.R)
        Gu = stack.weighted_gram_sum(u * u)
        b = a0 * (T.T + np.einsum("rij,jr->ri", Gu, d_old))
        prec = a0 * stack.weighted_gram_sum(w2) + ctx.P * eye
        try:
            cov = np.linalg.inv(prec)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular atom precision in the dictionary update") from exc
        cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
        d_new = np.einsum("rij,rj->ir", cov, b)
        ctx.R -= u[:, None, None] * stack.apply_atom(d_new - d_old)
        D3[:, :, k] = d_new
        st.D_cov[k] = cov
    _check("dictionary", st.D, st.D_cov)
    ctx.quad, ctx.tr = ctx.quad_and_trace(st)


def update_coefficients(st: VbState, ctx: VbContext):
    D3 = st.D.reshape(ctx.c, ctx.m, st.K)
    a0 = st.alpha0
    Edgd = ctx.quad + ctx.tr
    for k in range(st.K):
        B = ctx.stack.apply_atom(D3[:, :, k])
        proj = np.einsum("nqr,nqr->n", B, ctx.R)
        s_old = st.S[k].copy()
        var = 1.0 / (a0 * (st.tau * st.alpha_kn[k] + st.nu2[k] * Edgd[:, k]))
        mean = a0 * var * st.nu[k] * (proj + st.nu[k] * s_old * ctx.quad[:, k])
        ctx.R -= (st.nu[k] * (mean - s_old))[:, None, None] * B
        st.S[k] = mean
        st.S_var[k] = var
    _check("coefficient", st.S, st.S_var)


def update_tau(st: VbState, ctx: VbContext):
    h = ctx.hyper
    st.tau = (h.a0 + 0.5 * st.K) / (h.b0 + 0.5 * st.alpha0 * np.sum(st.S2 * st.alpha_kn, axis=0))
    _check("tau", st.tau)


def update_alpha(st: VbState, ctx: VbContext, phi_inverse=False):
    num = st.phi_inv if phi_inverse else 1.0 / st.phi
    with np.errstate(over="ignore", divide="ignore"):
        alpha = np.sqrt(num / (st.S2 * st.tau[None, :] * st.alpha0))
    high = ~(alpha <= ALPHA_CEIL)
    if high.any():
        st.events["alpha_ceiling"] = st.events.get("alpha_ceiling", 0) + int(high.sum())
    st.alpha_kn = np.where(high, ALPHA_CEIL, alpha)
    _check("alpha", st.alpha_kn)


def update_phi(st: VbState, ctx: VbContext):
    h = ctx.hyper
    a = 2.0 * h.h0
    b = 1.0 / st.alpha_kn
    p = h.g0 - 1.0
    st.phi = gig_mean(a, b, p)
    st.phi_inv = gig_mean_inverse(a, b, p)
    _check("phi", st.phi, st.phi_inv)
    if np.any(st.phi * st.phi_inv < 1.0 - 1e-9):
        raise NumericalError("phi moments violate <phi><1/phi> >= 1")


def update_noise_precision(st: VbState, ctx: VbContext) -> float:
    """Returns the expected misfit that entered the update."""
    h = ctx.hyper
    K, N = st.S.shape
    misfit = _misfit(ctx.R, st, ctx.quad, ctx.tr)
    shape = h.c0 + 0.5 * ctx.nnz_total + 0.5 * K * N
    rate = h.d0 + 0.5 * misfit + 0.5 * float(np.sum(st.S2 * st.tau[None, :] * st.alpha_kn))
    st.alpha0 = shape / rate
    _check("alpha0", st.alpha0)
    return misfit


def update_weights(st: VbState, ctx: VbContext):
    D3 = st.D.reshape(ctx.c, ctx.m, st.K)
    a0 = st.alpha0
    S2 = st.S2
    Edgd = ctx.quad + ctx.tr
    for k in range(st.K):
        B = ctx.stack.apply_atom(D3[:, :, k])
        proj = np.einsum("nqr,nqr->n", B, ctx.R)
        s = st.S[k]
        nu_old = st.nu[k]
        var = 1.0 / (st.eta[k] + a0 * np.sum(S2[k] * Edgd[:, k]))
        mean = var * a0 * np.sum(s * (proj + nu_old * s * ctx.quad[:, k]))
        ctx.R -= ((mean - nu_old) * s)[:, None, None] * B
        st.nu[k] = mean
        st.nu_var[k] = var
    _check("weight", st.nu, st.nu_var)


def update_eta(st: VbState, ctx: VbContext):
    h = ctx.hyper
    K = st.K
    nu2 = st.nu2
    for j in range(K):
        rest = st.eta_tilde.copy()
        rest[j] = 1.0
        partial = np.cumprod(rest)[j:]
        st.eta_tilde[j] = (h.e0 + 0.5 * (K - j)) / (h.f0 + 0.5 * float(np.sum(nu2[j:] * partial)))
    st.eta = np.cumprod(st.eta_tilde)
    _check("eta", st.eta_tilde, st.eta)


def _iterate(st: VbState, ctx: VbContext, phi_inverse=False) -> float:
    """One coordinate-ascent pass in place, in the Gibbs sweep order."""
    ctx.refresh(st)
    update_atoms(st, ctx)
    update_coefficients(st, ctx)
    update_tau(st, ctx)
    update_alpha(st, ctx, phi_inverse)
    update_phi(st, ctx)
    misfit = update_noise_precision(st, ctx)
    update_weights(st, ctx)
    update_eta(st, ctx)
    return misfit


def vb_iterate(state: VbState, Y, ops, hyper: Optional[Hyperparams] = None, phi_inverse=False) -> VbState:
    """One coordinate-ascent pass; returns a new state."""
    ctx = VbContext(Y, ops, hyper)
    new = state.copy()
    _iterate(new, ctx, phi_inverse)
    return new


@dataclass
class VbTrace:
    iteration: List[int] = field(default_factory=list)
    expected_misfit: List[float] = field(default_factory=list)
    alpha0_mean: List[float] = field(default_factory=list)
    events: Dict[str, int] = field(default_factory=dict)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "expected_misfit", "alpha0_mean"])
            for row in zip(self.iteration, self.expected_misfit, self.alpha0_mean):
                w.writerow([row[0], repr(row[1]), repr(row[2])])


@dataclass
class VbResult:
    patches: np.ndarray
    trace: VbTrace
    state: VbState


def run_vb(Y, ops, opts: Optional[InferenceOpts] = None, hyper: Optional[Hyperparams] = None,
           rng=None, state: Optional[VbState] = None) -> VbResult:
    """Iterate to ``opts.iterations`` passes (or until ``opts.tol`` is met).

    The trace records, per pass, the expected misfit after the pass and the
    resulting ``<alpha0>``.  The estimate is ``<D> diag(<nu>) <S>``.
    """
    opts = opts or InferenceOpts(inference_kind="vb", iterations=20, burn_in=0)
    pr = VbContext(Y, ops, hyper)
    if state is None:
        state = init_vb_state(pr.Y3.reshape(pr.N, -1).T, pr.stack, opts, rng)
    else:
        state = state.copy()
    trace = VbTrace()
    prev = None
    for it in range(opts.iterations):
        _iterate(state, pr, opts.phi_inverse)
        quad, tr = pr.quad_and_trace(state)
        mis = _misfit(pr.mean_residual(state), state, quad, tr)
        trace.iteration.append(it)
        trace.expected_misfit.append(mis)
        trace.alpha0_mean.append(state.alpha0)
        if opts.tol is not None and prev is not None and abs(prev - mis) <= opts.tol * abs(prev):
            break
        prev = mis
    trace.events = dict(state.events)
    return VbResult(state.signal(), trace, state)

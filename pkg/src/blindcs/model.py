"""Hierarchical shrinkage dictionary model: state, initialisation, diagnostics.

Generative model for patch ``n`` with measurement ``y_n``::

    y_n      ~ N(Psi_n D diag(nu) s_n, 1/alpha0)
    d_k      ~ N(0, I / P)
    s_kn     ~ N(0, 1 / (tau_n alpha_kn alpha0))
    alpha_kn ~ InvGa(1, 1 / (2 phi_kn))
    phi_kn   ~ Ga(g0, h0)          tau_n  ~ Ga(a0, b0)
    nu_k     ~ N(0, 1 / eta_k)     eta_k  = prod_{j <= k} eta_tilde_j
    eta_tilde_j ~ Ga(e0, f0)       alpha0 ~ Ga(c0, d0)

Gamma distributions use shape and rate.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field, fields, replace
from typing import Dict, Optional

import numpy as np
from scipy.special import gammaln

from .core import PatchSet
from .errors import DimensionError
from .sensing import OperatorStack

__all__ = [
    "Hyperparams",
    "InferenceOpts",
    "ModelState",
    "as_problem",
    "init_state",
    "posterior_terms",
    "neg_log_posterior",
    "prune_atoms",
    "save_state",
    "load_state",
]


@dataclass(frozen=True)
class Hyperparams:
    """Gamma hyperparameters; broad priors with every value 1e-6 by default."""

    a0: float = 1e-6
    b0: float = 1e-6
    c0: float = 1e-6
    d0: float = 1e-6
    e0: float = 1e-6
    f0: float = 1e-6
    g0: float = 1e-6
    h0: float = 1e-6

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"hyperparameter {f.name} must be positive")


@dataclass
class InferenceOpts:
    K: int = 64
    iterations: int = 200
    burn_in: int = 100
    seed: int = 0
    prune_threshold: float = 0.0
    inference_kind: str = "gibbs"
    final_sample: bool = False
    phi_inverse: bool = False
    tol: Optional[float] = None
    threads: int = 1

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.inference_kind not in ("gibbs", "vb"):
            raise ValueError(f"unknown inference kind {self.inference_kind!r}")
        if self.iterations < 0 or self.burn_in < 0:
            raise ValueError("iterations and burn_in must be non-negative")
        if self.inference_kind == "gibbs" and not self.iterations > self.burn_in:
            raise ValueError("Gibbs sampling needs iterations > burn_in")
        if not 0.0 <= self.prune_threshold < 1.0:
            raise ValueError("prune_threshold must lie in [0, 1)")


@dataclass
class ModelState:
    """All latent variables of the model; ``Lambda`` is kept as the vector ``nu``."""

    D: np.ndarray          # (P, K)
    S: np.ndarray          # (K, N)
    nu: np.ndarray         # (K,)
    eta_tilde: np.ndarray  # (K,)
    eta: np.ndarray        # (K,)
    tau: np.ndarray        # (N,)
    alpha_kn: np.ndarray   # (K, N)
    phi: np.ndarray        # (K, N)
    alpha0: float
    events: Dict[str, int] = field(default_factory=dict)

    @property
    def P(self) -> int:
        return self.D.shape[0]

    @property
    def K(self) -> int:
        return self.D.shape[1]

    @property
    def N(self) -> int:
        return self.S.shape[1]

    def copy(self) -> "ModelState":
        return ModelState(
            self.D.copy(), self.S.copy(), self.nu.copy(), self.eta_tilde.copy(),
            self.eta.copy(), self.tau.copy(), self.alpha_kn.copy(), self.phi.copy(),
            float(self.alpha0), dict(self.events),
        )

    def signal(self) -> np.ndarray:
        """``D diag(nu) S``, one column per patch."""
        return self.D @ (self.nu[:, None] * self.S)

    def refresh_eta(self):
        self.eta = np.cumprod(self.eta_tilde)

    def check(self):
        """Raise if dimensions disagree or a precision is not strictly positive."""
        P, K = self.D.shape
        N = self.S.shape[1]
        shapes = {
            "S": (K, N), "nu": (K,), "eta_tilde": (K,), "eta": (K,),
            "tau": (N,), "alpha_kn": (K, N), "phi": (K, N),
        }
        for name, shp in shapes.items():
            if getattr(self, name).shape != shp:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {shp}")
        for name in ("eta_tilde", "eta", "tau", "alpha_kn", "phi"):
            v = getattr(self, name)
            if not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise ValueError(f"{name} must be finite and strictly positive")
        if not (np.isfinite(self.alpha0) and self.alpha0 > 0):
            raise ValueError("alpha0 must be finite and positive")


def as_problem(Y, ops):
    """Normalise inputs to ``(Y3, stack)`` with ``Y3`` of shape ``(N, q, m)``."""
    stack = OperatorStack.from_list(ops)
    Yv = Y.vectors if isinstance(Y, PatchSet) else np.asarray(Y, dtype=float)
    if Yv.ndim != 2:
        raise DimensionError(f"measurements must be a (dim, N) matrix, got {Yv.shape}")
    if Yv.shape[1] == 0:
        raise ValueError("empty patch set")
    if Yv.shape != (stack.measurement_dim, stack.n_patches):
        raise DimensionError(
            f"measurements {Yv.shape} do not match operators "
            f"({stack.measurement_dim}, {stack.n_patches})"
        )
    Y3 = np.ascontiguousarray(Yv.T).reshape(stack.n_patches, stack.q, stack.n_pixels)
    return Y3, stack


def init_state(Y, ops, opts: InferenceOpts, hyper: Optional[Hyperparams] = None, rng=None) -> ModelState:
    """Starting point: prior-drawn atoms, zero coefficients, unit scales.

    ``alpha0`` starts at the inverse variance of all measurement entries so
    the first sweep sees a sensibly scaled noise level.
    """
    Y3, stack = as_problem(Y, ops)
    if rng is None:
        rng = np.random.default_rng(opts.seed)
    P, K, N = stack.signal_dim, opts.K, stack.n_patches
    D = rng.standard_normal((P, K)) / np.sqrt(P)
    var = float(np.var(Y3))
    alpha0 = 1.0 / var if var > 0 else 1.0
    return ModelState(
        D=D,
        S=np.zeros((K, N)),
        nu=np.ones(K),
        eta_tilde=np.ones(K),
        eta=np.ones(K),
        tau=np.ones(N),
        alpha_kn=np.ones((K, N)),
        phi=np.ones((K, N)),
        alpha0=alpha0,
    )


def _neg_log_gamma(x, shape, rate):
    x = np.asarray(x, dtype=float)
    return -(shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x)


def _neg_log_invgamma(x, shape, scale):
    x = np.asarray(x, dtype=float)
    return -(shape * np.log(scale) - gammaln(shape) - (shape + 1.0) * np.log(x) - scale / x)


def posterior_terms(state: ModelState, Y, ops, hyper: Optional[Hyperparams] = None, residual=None) -> Dict[str, float]:
    """Addends of the negative log joint posterior.

    Gaussian factors contribute their quadratic forms only; the gamma and
    inverse-gamma factors contribute full negative log densities.
    ``residual`` (``(N, q, m)``) may be passed to skip recomputing it.
    """
    hyper = hyper or Hyperparams()
    if residual is None:
        Y3, stack = as_problem(Y, ops)
        X = state.signal().T.reshape(stack.n_patches, stack.c, stack.n_pixels)
        residual = Y3 - stack.apply(X)
    h = hyper
    a0 = state.alpha0
    return {
        "data": 0.5 * a0 * float(np.sum(residual * residual)),
        "dictionary": 0.5 * state.P * float(np.sum(state.D * state.D)),
        "alpha0_prior": float(_neg_log_gamma(a0, h.c0, h.d0)),
        "coefficients": 0.5 * a0 * float(np.sum(state.tau[None, :] * state.alpha_kn * state.S ** 2)),
        "tau_prior": float(np.sum(_neg_log_gamma(state.tau, h.a0, h.b0))),
        "phi_prior": float(np.sum(_neg_log_gamma(state.phi, h.g0, h.h0))),
        "alpha_prior": float(np.sum(_neg_log_invgamma(state.alpha_kn, 1.0, 0.5 / state.phi))),
        "weights": 0.5 * float(np.sum(state.eta * state.nu ** 2)),
        "eta_prior": float(np.sum(_neg_log_gamma(state.eta_tilde, h.e0, h.f0))),
    }


def neg_log_posterior(state: ModelState, Y, ops, hyper: Optional[Hyperparams] = None, residual=None) -> float:
    return float(sum(posterior_terms(state, Y, ops, hyper, residual).values()))


def prune_atoms(state: ModelState, threshold: float) -> ModelState:
    """Drop atoms with ``|nu_k| < threshold * max |nu|``.

    ``eta`` is recomputed from the surviving ``eta_tilde`` values.
    """
    if not 0.0 <= threshold < 1.0:
        raise ValueError("threshold must lie in [0, 1)")
    w = np.abs(state.nu)
    keep = w >= threshold * w.max()
    if not keep.any():
        warnings.warn("pruning would remove every atom; keeping the largest", RuntimeWarning)
        keep = w == w.max()
    if keep.all():
        return state.copy()
    new = ModelState(
        D=np.ascontiguousarray(state.D[:, keep]),
        S=state.S[keep].copy(),
        nu=state.nu[keep].copy(),
        eta_tilde=state.eta_tilde[keep].copy(),
        eta=np.ones(int(keep.sum())),
        tau=state.tau.copy(),
        alpha_kn=state.alpha_kn[keep].copy(),
        phi=state.phi[keep].copy(),
        alpha0=float(state.alpha0),
        events=dict(state.events),
    )
    new.refresh_eta()
    return new


# ---------------------------------------------------------------------------
# Checkpoints
#
# Layout: one ASCII line "BCSSTATE1 <P> <K> <N>\n", then little-endian float64
# arrays in the order D (P x K, row-major), S (K x N), nu, eta_tilde, eta,
# tau, alpha_kn (K x N), phi (K x N), alpha0 (one value).

_MAGIC = "BCSSTATE1"
_ORDER = ("D", "S", "nu", "eta_tilde", "eta", "tau", "alpha_kn", "phi")


def save_state(state: ModelState, path):
    with open(path, "wb") as fh:
        fh.write(f"{_MAGIC} {state.P} {state.K} {state.N}\n".encode("ascii"))
        for name in _ORDER:
            fh.write(np.ascontiguousarray(getattr(state, name), dtype="<f8").tobytes())
        fh.write(struct.pack("<d", float(state.alpha0)))


def load_state(path) -> ModelState:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 4 or header[0] != _MAGIC:
            raise ValueError(f"{path} is not a model checkpoint")
        P, K, N = (int(v) for v in header[1:])
        shapes = {
            "D": (P, K), "S": (K, N), "nu": (K,), "eta_tilde": (K,), "eta": (K,),
            "tau": (N,), "alpha_kn": (K, N), "phi": (K, N),
        }
        arrays = {}
        for name in _ORDER:
            count = int(np.prod(shapes[name]))
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"truncated checkpoint while reading {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shapes[name]).astype(float)
        tail = fh.read(8)
        if len(tail) != 8 or fh.read(1):
            raise ValueError("checkpoint has a bad trailer")
        alpha0 = struct.unpack("<d", tail)[0]
    return ModelState(alpha0=alpha0, **arrays)

"""Coded-snapshot forward models and per-patch sensing operators.

Every sensing operator in this package acts pixel by pixel: at spatial pixel
``r`` of a patch, a small ``(q, c)`` matrix maps the ``c`` signal channels to
``q`` measurements.  A CASSI or SLM code gives ``q = 1`` with the code values
as the row, an identity patch operator (denoising) gives ``q = c`` and the
identity, and stacking RGB side information appends an identity block.  The
operator ``Psi_n`` of the whole patch is the permutation of the
block-diagonal matrix of these per-pixel blocks into the channel-outermost
vector order of :mod:`blindcs.core`, so ``Psi_n^T Psi_n`` is block diagonal
over pixels with ``(c, c)`` blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, List, Optional, Sequence

import numpy as np

from .core import Datacube, PatchGrid, PatchSet, extract_patches
from .errors import DimensionError, RegistrationError

__all__ = [
    "CodeCube",
    "Measurement",
    "PatchOperator",
    "OperatorStack",
    "make_cassi_code",
    "random_cassi_code",
    "make_slm_code",
    "slm_response",
    "forward",
    "add_noise",
    "build_patch_operators",
    "identity_operators",
    "masked_identity_operators",
    "apply",
    "apply_transpose",
    "gram_diag",
    "stack_side_info",
    "compression_ratio",
]

SLM_T_MIN = 0.08
SLM_T_MAX = 0.96


@dataclass
class CodeCube:
    """Per-channel modulation pattern ``C_j`` with entries in [0, 1]."""

    codes: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=float)
        if codes.ndim == 2:
            codes = codes[:, :, None]
        if codes.ndim != 3:
            raise DimensionError(f"code cube must be 3-D, got {codes.shape}")
        if not np.all(np.isfinite(codes)) or codes.min() < 0.0 or codes.max() > 1.0:
            raise ValueError("code values must be finite and lie in [0, 1]")
        if self.kind not in ("cassi_shift", "slm", "custom"):
            raise ValueError(f"unknown code kind {self.kind!r}")
        self.codes = codes

    @property
    def shape(self):
        return self.codes.shape


@dataclass
class Measurement:
    """A coded 2-D snapshot with optional registered RGB side image."""

    image: np.ndarray
    noise_precision_true: Optional[float] = None
    side_rgb: Optional[np.ndarray] = None

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=float)
        if self.image.ndim != 2:
            raise DimensionError(f"measurement must be 2-D, got {self.image.shape}")
        if not np.all(np.isfinite(self.image)):
            raise ValueError("measurement contains non-finite values")
        if self.side_rgb is not None:
            rgb = np.asarray(self.side_rgb, dtype=float)
            if rgb.shape != self.image.shape + (3,):
                raise RegistrationError(
                    f"RGB side image {rgb.shape} is not registered to {self.image.shape}"
                )
            if not np.all(np.isfinite(rgb)):
                raise ValueError("RGB side image contains non-finite values")
            self.side_rgb = rgb


def make_cassi_code(base_mask, n_channels: int) -> CodeCube:
    """Shift a coded aperture by one pixel per channel along the first axis.

    ``base_mask`` has shape ``(N_x + N_lambda - 1, N_y)`` and channel ``j``
    sees rows ``j .. j + N_x - 1`` of it, i.e. ``C_j(m, n) = T(m + j, n)``
    with zero-based ``j``.
    """
    base = np.asarray(base_mask, dtype=float)
    if base.ndim != 2:
        raise DimensionError(f"base mask must be 2-D, got {base.shape}")
    if n_channels < 1:
        raise ValueError("n_channels must be >= 1")
    nx = base.shape[0] - n_channels + 1
    if nx < 1:
        raise DimensionError(
            f"base mask with {base.shape[0]} rows is too small for {n_channels} shifts"
        )
    codes = np.stack([base[j:j + nx, :] for j in range(n_channels)], axis=2)
    return CodeCube(codes, "cassi_shift")


def random_cassi_code(nx, ny, n_channels, seed, p=0.5) -> CodeCube:
    """Bernoulli(p) binary aperture, dispersed by :func:`make_cassi_code`."""
    rng = np.random.default_rng(seed)
    base = (rng.random((nx + n_channels - 1, ny)) < p).astype(float)
    return make_cassi_code(base, n_channels)


def slm_response(n_channels, t_min=SLM_T_MIN, t_max=SLM_T_MAX, wavelengths=None, max_retardance=1800.0):
    """Synthetic voltage-to-transmission curve of a liquid-crystal modulator.

    The retardance grows linearly with the 8-bit voltage and the transmission
    follows ``sin^2(pi * retardance / lambda)``, rescaled to ``[t_min, t_max]``.
    This is a smooth stand-in for a measured response, not a physical model.
    """
    if wavelengths is None:
        wavelengths = np.linspace(450.0, 680.0, n_channels)
    lam = np.asarray(wavelengths, dtype=float)

    def response(voltage, j):
        gamma = max_retardance * np.asarray(voltage, dtype=float) / 255.0
        return t_min + (t_max - t_min) * np.sin(np.pi * gamma / lam[j]) ** 2

    return response


def make_slm_code(seed, nx, ny, n_channels, response: Optional[Callable] = None) -> CodeCube:
    """Pseudo-random 8-bit voltage pattern mapped through a spectral response."""
    if response is None:
        response = slm_response(n_channels)
    rng = np.random.default_rng(seed)
    voltage = rng.integers(0, 256, size=(nx, ny))
    codes = np.empty((nx, ny, n_channels))
    for j in range(n_channels):
        codes[:, :, j] = np.broadcast_to(response(voltage, j), (nx, ny))
    if not np.all(np.isfinite(codes)) or codes.min() < 0.0 or codes.max() > 1.0:
        raise ValueError("SLM response produced transmissions outside [0, 1]")
    return CodeCube(codes, "slm")


def forward(cube, code: CodeCube) -> Measurement:
    """``M(m, n) = sum_j X_j(m, n) C_j(m, n)``."""
    data = cube.data if isinstance(cube, Datacube) else np.asarray(cube, dtype=float)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.shape != code.codes.shape:
        raise DimensionError(f"cube {data.shape} and code {code.codes.shape} differ")
    return Measurement(np.einsum("xyj,xyj->xy", data, code.codes))


def add_noise(m: Measurement, alpha0: float, seed) -> Measurement:
    """Add i.i.d. Gaussian noise of precision ``alpha0`` to every pixel.

    ``alpha0 = inf`` returns an unchanged copy (noiseless simulation).
    """
    alpha0 = float(alpha0)
    if not alpha0 > 0.0:
        raise ValueError(f"noise precision must be positive, got {alpha0}")
    if np.isinf(alpha0):
        return Measurement(m.image.copy(), np.inf, m.side_rgb)
    rng = np.random.default_rng(seed)
    noisy = m.image + rng.standard_normal(m.image.shape) / np.sqrt(alpha0)
    return Measurement(noisy, alpha0, m.side_rgb)


@dataclass
class PatchOperator:
    """Sensing operator of one patch, stored as per-pixel ``(q, c)`` blocks.

    For a CASSI/SLM code ``q = 1`` and ``blocks[r, 0, j]`` is the code weight
    ``W^(j)(r)``; :attr:`diagonals` returns those as a ``(c, m)`` array.
    """

    blocks: np.ndarray

    def __post_init__(self):
        self.blocks = np.asarray(self.blocks, dtype=float)
        if self.blocks.ndim != 3:
            raise DimensionError(f"operator blocks must be (m, q, c), got {self.blocks.shape}")

    @property
    def n_pixels(self) -> int:
        return self.blocks.shape[0]

    @property
    def n_rows(self) -> int:
        return self.blocks.shape[0] * self.blocks.shape[1]

    @property
    def n_cols(self) -> int:
        return self.blocks.shape[0] * self.blocks.shape[2]

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.blocks))

    @property
    def diagonals(self) -> np.ndarray:
        if self.blocks.shape[1] != 1:
            raise ValueError("diagonal form only exists for single-row (coded) operators")
        return self.blocks[:, 0, :].T

    def to_dense(self) -> np.ndarray:
        m, q, c = self.blocks.shape
        dense = np.zeros((q, m, c, m))
        idx = np.arange(m)
        dense[:, idx, :, idx] = self.blocks
        return dense.reshape(q * m, c * m)


def apply(op: PatchOperator, x) -> np.ndarray:
    """``Psi_n x`` for a single patch vector."""
    x = np.asarray(x, dtype=float)
    m, q, c = op.blocks.shape
    if x.shape != (c * m,):
        raise DimensionError(f"expected a vector of length {c * m}, got {x.shape}")
    return np.einsum("riq,qr->ir", op.blocks, x.reshape(c, m)).ravel()


def apply_transpose(op: PatchOperator, y) -> np.ndarray:
    """``Psi_n^T y`` for a single measurement-patch vector."""
    y = np.asarray(y, dtype=float)
    m, q, c = op.blocks.shape
    if y.shape != (q * m,):
        raise DimensionError(f"expected a vector of length {q * m}, got {y.shape}")
    return np.einsum("riq,ir->qr", op.blocks, y.reshape(q, m)).ravel()


def gram_diag(op: PatchOperator) -> np.ndarray:
    """Diagonal of ``Psi_n^T Psi_n`` in patch-vector order."""
    return np.einsum("riq,riq->qr", op.blocks, op.blocks).ravel()


def gram_blocks(op: PatchOperator) -> np.ndarray:
    """Per-pixel ``(c, c)`` blocks of ``Psi_n^T Psi_n``."""
    return np.einsum("riq,rip->rqp", op.blocks, op.blocks)


class OperatorStack:
    """All patch operators of a problem as one ``(N, m, q, c)`` array.

    Signals are handled as ``(N, c, m)`` arrays and measurements as
    ``(N, q, m)`` arrays, which are the row-major reshapes of the patch
    vectors.
    """

    def __init__(self, blocks):
        blocks = np.asarray(blocks, dtype=float)
        if blocks.ndim != 4:
            raise DimensionError(f"stacked blocks must be (N, m, q, c), got {blocks.shape}")
        self.blocks = blocks
        self.n_patches, self.n_pixels, self.q, self.c = blocks.shape
        self._gram = None
        self._identity = None

    @classmethod
    def from_list(cls, ops: Sequence[PatchOperator]) -> "OperatorStack":
        if isinstance(ops, OperatorStack):
            return ops
        if len(ops) == 0:
            raise ValueError("no patch operators given")
        return cls(np.stack([op.blocks for op in ops]))

    def __len__(self):
        return self.n_patches

    def __getitem__(self, n) -> PatchOperator:
        return PatchOperator(self.blocks[n])

    def to_list(self) -> List[PatchOperator]:
        return [PatchOperator(b) for b in self.blocks]

    def subset(self, index) -> "OperatorStack":
        return OperatorStack(self.blocks[index])

    @property
    def signal_dim(self) -> int:
        return self.c * self.n_pixels

    @property
    def measurement_dim(self) -> int:
        return self.q * self.n_pixels

    @property
    def is_identity(self) -> bool:
        if self._identity is None:
            eye = np.eye(self.q, self.c)
            self._identity = self.q == self.c and bool(np.all(self.blocks == eye))
        return self._identity

    def nnz(self) -> np.ndarray:
        """``||Psi_n||_0`` for every patch."""
        return np.count_nonzero(self.blocks.reshape(self.n_patches, -1), axis=1)

    @property
    def gram(self) -> np.ndarray:
        """``(N, m, c, c)`` per-pixel blocks of ``Psi_n^T Psi_n`` (cached)."""
        if self._gram is None:
            self._gram = np.einsum("nriq,nrip->nrqp", self.blocks, self.blocks)
        return self._gram

    def gram_flat(self) -> np.ndarray:
        return self.gram.reshape(self.n_patches, -1)

    def apply_atom(self, d) -> np.ndarray:
        """``Psi_n d`` for one shared ``(c, m)`` signal and every patch.

        For identity operators the result is a read-only broadcast view.
        """
        if self.is_identity:
            return np.broadcast_to(d, (self.n_patches,) + d.shape)
        return np.einsum("nriq,qr->nir", self.blocks, d)

    def apply(self, x) -> np.ndarray:
        """``Psi_n x_n`` for an ``(N, c, m)`` stack of signals."""
        if self.is_identity:
            return np.array(x, dtype=float, copy=True)
        return np.einsum("nriq,nqr->nir", self.blocks, x)

    def apply_transpose(self, y) -> np.ndarray:
        """``Psi_n^T y_n`` for an ``(N, q, m)`` stack of measurements."""
        if self.is_identity:
            return np.array(y, dtype=float, copy=True)
        return np.einsum("nriq,nir->nqr", self.blocks, y)

    def weighted_transpose_sum(self, weights, y) -> np.ndarray:
        """``sum_n w_n Psi_n^T y_n`` as a ``(c, m)`` array."""
        if self.is_identity:
            return np.tensordot(weights, y, axes=(0, 0))
        return np.einsum("nriq,nir->qr", self.blocks, y * weights[:, None, None])

    def weighted_gram_sum(self, weights) -> np.ndarray:
        """``sum_n w_n Psi_n^T Psi_n`` as ``(m, c, c)`` pixel blocks."""
        if self.is_identity:
            eye = np.eye(self.c)
            return np.broadcast_to(np.sum(weights) * eye, (self.n_pixels, self.c, self.c)).copy()
        out = weights @ self.gram_flat()
        return out.reshape(self.n_pixels, self.c, self.c)

    def trace_with(self, cov_blocks) -> np.ndarray:
        """``tr(Psi_n^T Psi_n S)`` for a block-diagonal ``S`` given as (m, c, c) or (K, m, c, c)."""
        cov = np.asarray(cov_blocks)
        if cov.ndim == 3:
            if self.is_identity:
                return np.full(self.n_patches, np.trace(cov, axis1=1, axis2=2).sum())
            return self.gram_flat() @ np.swapaxes(cov, 1, 2).ravel()
        if self.is_identity:
            tr = np.trace(cov, axis1=2, axis2=3).sum(axis=1)
            return np.broadcast_to(tr, (self.n_patches, cov.shape[0])).copy()
        flat = np.swapaxes(cov, 2, 3).reshape(cov.shape[0], -1)
        return self.gram_flat() @ flat.T

    def quad_all(self, atoms) -> np.ndarray:
        """``||Psi_n d_k||^2`` for ``atoms`` of shape (K, c, m); returns (N, K)."""
        if self.is_identity:
            sq = np.einsum("kcr,kcr->k", atoms, atoms)
            return np.broadcast_to(sq, (self.n_patches, atoms.shape[0])).copy()
        outer = np.einsum("kqr,kpr->rqpk", atoms, atoms).reshape(-1, atoms.shape[0])
        return self.gram_flat() @ outer


def build_patch_operators(code: CodeCube, grid: PatchGrid) -> List[PatchOperator]:
    """One single-row-per-pixel operator per patch, read from the code cube."""
    if tuple(code.codes.shape[:2]) != tuple(grid.image_shape):
        raise DimensionError(f"code {code.codes.shape[:2]} does not match grid {grid.image_shape}")
    ps = extract_patches(code.codes, grid=grid)
    m = grid.pixels_per_patch
    L = code.codes.shape[2]
    # column n of ps.vectors is (L, m) in row-major order
    weights = ps.vectors.T.reshape(grid.n_patches, L, m)
    return [PatchOperator(w.T[:, None, :]) for w in weights]


def identity_operators(grid: PatchGrid, channels: int) -> List[PatchOperator]:
    """Identity sensing on every patch (denoising)."""
    m = grid.pixels_per_patch
    block = np.broadcast_to(np.eye(channels), (m, channels, channels))
    return [PatchOperator(block.copy()) for _ in range(grid.n_patches)]


def masked_identity_operators(mask, grid: PatchGrid, channels: int) -> List[PatchOperator]:
    """Identity restricted to observed entries (inpainting).

    Unobserved entries keep their row with all-zero weights, so the
    measurement layout stays fixed while ``||Psi_n||_0`` counts observations.
    """
    mask = np.asarray(mask, dtype=float)
    if mask.ndim == 2:
        mask = np.repeat(mask[:, :, None], channels, axis=2)
    if mask.shape != tuple(grid.image_shape) + (channels,):
        raise DimensionError(f"mask {mask.shape} does not match grid {grid.image_shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("observation mask must be binary")
    ps = extract_patches(mask, grid=grid)
    m = grid.pixels_per_patch
    vals = ps.vectors.T.reshape(grid.n_patches, channels, m)
    eye = np.eye(channels)
    return [PatchOperator(eye[None, :, :] * v.T[:, :, None]) for v in vals]


def stack_side_info(ops, y: PatchSet, rgb_patches: PatchSet):
    """Augment every operator with an identity block for RGB patches.

    Returns the augmented operators (``[[Psi_n, 0], [0, I]]``) and the
    augmented measurement patches ``[y_n; y_n^rgb]``.
    """
    stack = OperatorStack.from_list(ops)
    if not rgb_patches.grid.same_layout(y.grid):
        raise RegistrationError("RGB patches are not on the measurement patch grid")
    if rgb_patches.channels != 3:
        raise DimensionError(f"side information must have 3 channels, got {rgb_patches.channels}")
    N, m, q, c = stack.blocks.shape
    if N != y.n_patches or m != y.grid.pixels_per_patch or y.dim != q * m:
        raise DimensionError("measurement patches do not match the operators")
    aug = np.zeros((N, m, q + 3, c + 3))
    aug[:, :, :q, :c] = stack.blocks
    aug[:, :, q:, c:] = np.eye(3)
    aug_y = np.concatenate([y.vectors, rgb_patches.vectors], axis=0)
    aug_set = PatchSet(aug_y, y.grid, q + 3)
    return OperatorStack(aug), aug_set


def compression_ratio(n_channels: int, side_info: bool = False) -> str:
    """Signal-to-measurement ratio, ``N:1`` or ``(N + 3):4`` with RGB, reduced."""
    frac = Fraction(n_channels + 3, 4) if side_info else Fraction(n_channels, 1)
    return f"{frac.numerator}:{frac.denominator}"

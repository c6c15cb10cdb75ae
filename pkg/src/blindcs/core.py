"""Datacube container, patch extraction and overlap-averaged reassembly.

Patch vectors use one fixed ordering everywhere in the package: the channel
index is outermost and the spatial pixels of the patch are row-major within
each channel, so entry ``j * (h * w) + a * w + b`` of a vector holds channel
``j`` at patch row ``a``, column ``b``.  Reshaping a vector to
``(channels, h * w)`` therefore gives one row per channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError

__all__ = [
    "Datacube",
    "PatchGrid",
    "PatchSet",
    "make_grid",
    "extract_patches",
    "reassemble",
    "vectorize_patch",
    "devectorize_patch",
]


@dataclass
class Datacube:
    """Spectral radiance on an ``(N_x, N_y, N_lambda)`` grid."""

    data: np.ndarray
    wavelengths: Optional[Sequence[float]] = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise DimensionError(f"datacube must be 3-D and non-empty, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("datacube contains non-finite values")
        self.data = data
        if self.wavelengths is not None:
            self.wavelengths = [float(w) for w in self.wavelengths]
            if len(self.wavelengths) != data.shape[2]:
                raise DimensionError(
                    f"{len(self.wavelengths)} wavelengths for {data.shape[2]} channels"
                )

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape

    @property
    def n_channels(self) -> int:
        return self.data.shape[2]


def _axis_origins(size, patch, stride):
    origins = list(range(0, size - patch + 1, stride))
    if origins[-1] != size - patch:
        origins.append(size - patch)
    return origins


@dataclass
class PatchGrid:
    """Top-left corners of the patches covering an image.

    The last origin along each axis is clamped to the border, so it may
    overlap its neighbour by more than the nominal stride.
    """

    patch: Tuple[int, int]
    stride: Tuple[int, int]
    image_shape: Tuple[int, int]
    origins: np.ndarray = field(repr=False)

    @property
    def n_patches(self) -> int:
        return len(self.origins)

    @property
    def pixels_per_patch(self) -> int:
        return self.patch[0] * self.patch[1]

    def same_layout(self, other: "PatchGrid") -> bool:
        return (
            tuple(self.patch) == tuple(other.patch)
            and tuple(self.image_shape) == tuple(other.image_shape)
            and np.array_equal(self.origins, other.origins)
        )

    def pixel_index(self) -> np.ndarray:
        """Flat image index ``row * W + col`` of every (patch, pixel) pair, shape (N, h*w)."""
        h, w = self.patch
        da, db = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        rows = self.origins[:, 0, None] + da.ravel()[None, :]
        cols = self.origins[:, 1, None] + db.ravel()[None, :]
        return rows * self.image_shape[1] + cols


def make_grid(image_shape, patch, stride=(2, 2)) -> PatchGrid:
    """Build a covering grid of ``patch``-sized windows over ``image_shape``."""
    H, W = int(image_shape[0]), int(image_shape[1])
    h, w = _pair(patch)
    sh, sw = _pair(stride)
    if h < 1 or w < 1:
        raise DimensionError(f"patch size must be positive, got {(h, w)}")
    if h > H or w > W:
        raise DimensionError(f"patch {(h, w)} larger than image {(H, W)}")
    if sh < 1 or sw < 1:
        raise ValueError(f"stride must be >= 1, got {(sh, sw)}")
    if sh > h or sw > w:
        raise ValueError(f"stride {(sh, sw)} exceeds patch {(h, w)} and would leave gaps")
    rows = _axis_origins(H, h, sh)
    cols = _axis_origins(W, w, sw)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    origins = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.intp)
    return PatchGrid((h, w), (sh, sw), (H, W), origins)


@dataclass
class PatchSet:
    """Vectorised patches stored column-wise, ``vectors[:, n]`` is patch ``n``."""

    vectors: np.ndarray
    grid: PatchGrid
    channels: int

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        P = self.grid.pixels_per_patch * self.channels
        if self.vectors.ndim != 2 or self.vectors.shape != (P, self.grid.n_patches):
            raise DimensionError(
                f"patch vectors {self.vectors.shape} do not match grid "
                f"({P}, {self.grid.n_patches})"
            )

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_patches(self) -> int:
        return self.vectors.shape[1]


def _pair(v) -> Tuple[int, int]:
    if np.isscalar(v):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


def _as_array3(cube: Union[Datacube, np.ndarray]) -> np.ndarray:
    if isinstance(cube, Datacube):
        return cube.data
    data = np.asarray(cube, dtype=float)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.ndim != 3:
        raise DimensionError(f"expected a 2-D image or 3-D cube, got {data.shape}")
    return data


def vectorize_patch(block: np.ndarray) -> np.ndarray:
    """Flatten an ``(h, w, channels)`` block into a patch vector."""
    block = np.asarray(block)
    if block.ndim == 2:
        block = block[:, :, None]
    return np.ascontiguousarray(block.transpose(2, 0, 1)).ravel()


def devectorize_patch(vector: np.ndarray, patch, channels: int) -> np.ndarray:
    """Inverse of :func:`vectorize_patch`."""
    h, w = _pair(patch)
    vector = np.asarray(vector)
    if vector.size != h * w * channels:
        raise DimensionError(f"vector of length {vector.size} cannot hold {(h, w, channels)}")
    return vector.reshape(channels, h, w).transpose(1, 2, 0)


def extract_patches(cube, patch=(8, 8), stride=(2, 2), grid: Optional[PatchGrid] = None) -> PatchSet:
    """Cut a cube (or 2-D image) into overlapping vectorised patches.

    Parameters
    ----------
    cube : Datacube or ndarray
        Array of shape ``(H, W)`` or ``(H, W, C)``.
    patch, stride : int or pair of int
        Spatial patch size and step.  Ignored when ``grid`` is given.
    grid : PatchGrid, optional
        Reuse an existing grid, e.g. to put a code cube and a measurement on
        exactly the same patches.
    """
    data = _as_array3(cube)
    H, W, C = data.shape
    if grid is None:
        grid = make_grid((H, W), patch, stride)
    elif tuple(grid.image_shape) != (H, W):
        raise DimensionError(f"grid built for {grid.image_shape}, image is {(H, W)}")
    h, w = grid.patch
    windows = sliding_window_view(data, (h, w), axis=(0, 1))  # (H-h+1, W-w+1, C, h, w)
    blocks = windows[grid.origins[:, 0], grid.origins[:, 1]]  # (N, C, h, w)
    vectors = blocks.reshape(grid.n_patches, C * h * w).T.copy()
    return PatchSet(vectors, grid, C)


def reassemble(patches: PatchSet, wavelengths=None) -> Datacube:
    """Average overlapping patches back onto the image grid."""
    grid = patches.grid
    h, w = grid.patch
    H, W = grid.image_shape
    C = patches.channels
    if patches.vectors.shape != (C * h * w, grid.n_patches):
        raise DimensionError("patch vectors do not match their grid")
    blocks = patches.vectors.T.reshape(grid.n_patches, C, h, w)
    total = np.zeros((H, W, C))
    count = np.zeros((H, W))
    r0 = grid.origins[:, 0]
    c0 = grid.origins[:, 1]
    # Origins are unique, so the targets of one in-patch offset never collide.
    for a in range(h):
        for b in range(w):
            total[r0 + a, c0 + b, :] += blocks[:, :, a, b]
            count[r0 + a, c0 + b] += 1.0
    if np.any(count == 0):
        raise DimensionError("grid leaves pixels uncovered")
    return Datacube(total / count[:, :, None], wavelengths)

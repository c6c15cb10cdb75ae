"""End-to-end reconstructions: coded hyperspectral inversion, denoising, inpainting.

Every task reduces to the same patch model with a different sensing operator:
the code weights for compressive sensing, the identity for denoising and a
row-masked identity for inpainting.  Data are rescaled to unit range before
inference and the estimate is scaled back, which makes the outputs exactly
covariant under a global intensity change.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import gibbs, vb
from .core import Datacube, extract_patches, make_grid, reassemble, PatchSet
from .errors import DimensionError, RegistrationError
from .model import Hyperparams, InferenceOpts
from .sensing import (
    CodeCube,
    Measurement,
    build_patch_operators,
    compression_ratio,
    identity_operators,
    masked_identity_operators,
    stack_side_info,
)

__all__ = ["ReconJob", "ReconResult", "reconstruct_cs", "denoise", "inpaint", "run_job", "default_opts"]

TASKS = ("cs_hyperspectral", "denoise", "inpaint")


def default_opts(task: str, kind: str = "vb", **overrides) -> InferenceOpts:
    """Iteration counts: VB 20 passes for denoising and 100 otherwise; Gibbs 200 sweeps, 100 burn-in."""
    if kind == "vb":
        base = dict(iterations=20 if task == "denoise" else 100, burn_in=0)
    else:
        base = dict(iterations=200, burn_in=100)
    base.update(overrides)
    return InferenceOpts(inference_kind=kind, **base)


@dataclass
class ReconJob:
    task: str
    measurement: object                       # Measurement (cs) or image array
    code: Optional[CodeCube] = None
    observed_mask: Optional[np.ndarray] = None
    opts: InferenceOpts = field(default_factory=InferenceOpts)
    patch: Optional[int] = None
    stride: int = 2
    hyper: Optional[Hyperparams] = None
    wavelengths: Optional[list] = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "cs_hyperspectral":
            if self.code is None:
                raise ValueError("compressive reconstruction needs a code cube")
            if not isinstance(self.measurement, Measurement):
                self.measurement = Measurement(self.measurement)
        else:
            side = getattr(self.measurement, "side_rgb", None)
            if side is not None:
                raise ValueError("RGB side information only applies to compressive reconstruction")
            if isinstance(self.measurement, Measurement):
                self.measurement = self.measurement.image
        if self.task == "inpaint" and self.observed_mask is None:
            raise ValueError("inpainting needs an observed mask")
        if self.patch is None:
            self.patch = 8 if self.task == "cs_hyperspectral" else 7


@dataclass
class ReconResult:
    estimate: Datacube
    trace: object
    dictionary: np.ndarray
    weights: np.ndarray
    runtime: float
    metadata: dict = field(default_factory=dict)


def _infer(Y, ops, opts: InferenceOpts, hyper):
    if opts.inference_kind == "gibbs":
        res = gibbs.run(Y, ops, opts, hyper)
        return res.patches, res.trace, res.state.D, res.state.nu
    res = vb.run_vb(Y, ops, opts, hyper)
    return res.patches, res.trace, res.state.D, res.state.nu


def reconstruct_cs(job: ReconJob) -> ReconResult:
    """Invert a coded snapshot, optionally with a registered RGB image.

    The measurement is divided by ``max(M) / mean(sum_j C_j)``, which puts
    the cube near unit range, and the RGB image by its own maximum.  With
    side information the model runs on the stacked operators and the first
    ``P`` rows of each patch estimate (the hyperspectral part) are kept.
    """
    t0 = time.perf_counter()
    meas: Measurement = job.measurement
    code = job.code
    H, W = meas.image.shape
    if code.codes.shape[:2] != (H, W):
        raise DimensionError(f"code {code.codes.shape[:2]} does not match measurement {(H, W)}")
    L = code.codes.shape[2]
    coverage = float(np.mean(code.codes.sum(axis=2)))
    peak = float(np.max(np.abs(meas.image)))
    scale = peak / coverage if peak > 0 and coverage > 0 else 1.0
    grid = make_grid((H, W), job.patch, job.stride)
    ops = build_patch_operators(code, grid)
    Y = extract_patches(meas.image / scale, grid=grid)
    side = meas.side_rgb is not None
    meta = {"task": job.task, "compression_ratio": compression_ratio(L, side), "scale": scale,
            "n_patches": grid.n_patches, "side_info": side}
    if side:
        rgb = meas.side_rgb
        if rgb.shape[:2] != (H, W):
            raise RegistrationError("RGB side image is not registered to the measurement")
        rgb_peak = float(np.max(np.abs(rgb)))
        rgb_n = rgb / rgb_peak if rgb_peak > 0 else rgb
        rgb_patches = extract_patches(rgb_n, grid=grid)
        stack, Yaug = stack_side_info(ops, Y, rgb_patches)
        xhat, trace, D, nu = _infer(Yaug, stack, job.opts, job.hyper)
        P = L * grid.pixels_per_patch
        fit = xhat[P:]
        meta["side_fit_rel_error"] = float(
            np.linalg.norm(fit - rgb_patches.vectors) / max(np.linalg.norm(rgb_patches.vectors), 1e-300)
        )
        xhat = xhat[:P]
    else:
        xhat, trace, D, nu = _infer(Y, ops, job.opts, job.hyper)
    cube = reassemble(PatchSet(xhat * scale, grid, L), job.wavelengths)
    return ReconResult(cube, trace, D, nu, time.perf_counter() - t0, meta)


def _image3(img) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise DimensionError(f"image must be 2-D or (H, W, C), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def _restore(img, ops_builder, job: ReconJob, observed=None) -> ReconResult:
    t0 = time.perf_counter()
    H, W, C = img.shape
    grid = make_grid((H, W), job.patch, job.stride)
    ops = ops_builder(grid, C)
    visible = img if observed is None else img * observed
    peak = float(np.max(np.abs(visible)))
    scale = peak if peak > 0 else 1.0
    Y = extract_patches(visible / scale, grid=grid)
    xhat, trace, D, nu = _infer(Y, ops, job.opts, job.hyper)
    est = reassemble(PatchSet(xhat * scale, grid, C)).data
    meta = {"task": job.task, "scale": scale, "n_patches": grid.n_patches}
    return est, trace, D, nu, time.perf_counter() - t0, meta


def denoise(noisy, opts: Optional[InferenceOpts] = None, patch=7, stride=2, hyper=None) -> ReconResult:
    """Identity-sensing restoration; the noise precision is inferred."""
    job = ReconJob("denoise", noisy, opts=opts or default_opts("denoise"), patch=patch, stride=stride, hyper=hyper)
    return run_job(job)


def inpaint(corrupted, observed_mask, opts: Optional[InferenceOpts] = None, patch=7, stride=2, hyper=None) -> ReconResult:
    """Fill unobserved pixels; ``observed_mask`` is 1 where data are present."""
    job = ReconJob("inpaint", corrupted, observed_mask=observed_mask,
                   opts=opts or default_opts("inpaint"), patch=patch, stride=stride, hyper=hyper)
    return run_job(job)


def run_job(job: ReconJob) -> ReconResult:
    if job.task == "cs_hyperspectral":
        return reconstruct_cs(job)
    img = _image3(job.measurement)
    if job.task == "denoise":
        out = _restore(img, identity_operators, job)
    else:
        mask = np.asarray(job.observed_mask, dtype=float)
        if mask.ndim == 2:
            mask = np.repeat(mask[:, :, None], img.shape[2], axis=2)
        if mask.shape != img.shape:
            raise DimensionError(f"mask {mask.shape} does not match image {img.shape}")

        def builder(grid, C):
            ops = masked_identity_operators(mask, grid, C)
            empty = sum(1 for op in ops if op.nnz == 0)
            if empty:
                warnings.warn(
                    f"{empty} patches have no observed pixels and are estimated from the dictionary alone",
                    RuntimeWarning,
                )
            return ops

        out = _restore(img, builder, job, observed=mask)
    est, trace, D, nu, runtime, meta = out
    return ReconResult(Datacube(est), trace, D, nu, runtime, meta)

"""Per-channel PSNR and region spectral correlation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .core import Datacube
from .errors import DimensionError

__all__ = ["EvalReport", "psnr", "spectral_correlation", "evaluate", "format_mean_std"]

Region = Tuple[int, int, int, int]  # (row, col, height, width)


def _cube(x) -> np.ndarray:
    data = x.data if isinstance(x, Datacube) else np.asarray(x, dtype=float)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.ndim != 3:
        raise DimensionError(f"expected a 2-D or 3-D array, got {data.shape}")
    return data


def format_mean_std(mean, std) -> str:
    """``"32.6175±4.0417"``; an infinite mean prints as ``"inf"``."""
    if np.isinf(mean):
        return "inf"
    return f"{mean:.4f}±{std:.4f}"


@dataclass
class EvalReport:
    psnr_per_channel: np.ndarray
    psnr_mean: float
    psnr_std: float
    infinite: np.ndarray
    peak: float
    spectral_corr: Dict[str, float] = field(default_factory=dict)
    regions: Dict[str, Region] = field(default_factory=dict)

    @property
    def summary(self) -> str:
        return format_mean_std(self.psnr_mean, self.psnr_std)

    def to_table(self) -> str:
        lines = [f"{'channel':>8}  {'psnr_db':>10}"]
        for j, v in enumerate(self.psnr_per_channel):
            lines.append(f"{j:>8}  {'inf' if np.isinf(v) else f'{v:10.4f}':>10}")
        lines.append(f"{'mean':>8}  {self.summary}")
        for name, corr in self.spectral_corr.items():
            lines.append(f"corr[{name}] = {corr:.4f}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "key", "value", "flag"])
            for j, v in enumerate(self.psnr_per_channel):
                w.writerow(["psnr", j, "inf" if np.isinf(v) else repr(float(v)), "infinite" if np.isinf(v) else ""])
            w.writerow(["psnr_mean", "", "inf" if np.isinf(self.psnr_mean) else repr(self.psnr_mean), ""])
            w.writerow(["psnr_std", "", repr(self.psnr_std), ""])
            w.writerow(["psnr_summary", "", self.summary, ""])
            for name, corr in self.spectral_corr.items():
                w.writerow(["spectral_corr", name, repr(float(corr)), ""])


def psnr(recon, truth, peak: Optional[float] = None) -> EvalReport:
    """PSNR of every channel, ``10 log10(peak^2 / MSE_j)``.

    ``peak`` defaults to the maximum of ``truth``.  Channels reconstructed
    exactly get ``inf`` and are flagged in ``infinite``.  The spread is the
    sample standard deviation across channels (zero for one channel).
    """
    r, t = _cube(recon), _cube(truth)
    if r.shape != t.shape:
        raise DimensionError(f"reconstruction {r.shape} and truth {t.shape} differ")
    if peak is None:
        peak = float(t.max())
    if not peak > 0:
        raise ValueError("peak must be positive")
    mse = np.mean((r - t) ** 2, axis=(0, 1))
    with np.errstate(divide="ignore"):
        vals = 10.0 * np.log10(peak ** 2 / mse)
    inf = np.isinf(vals)
    mean = float(np.mean(vals))
    std = float(np.std(vals, ddof=1)) if len(vals) > 1 and not inf.any() else 0.0
    return EvalReport(vals, mean, std, inf, float(peak))


def _check_region(region, shape) -> Region:
    r0, c0, h, w = (int(v) for v in region)
    if h < 1 or w < 1 or r0 < 0 or c0 < 0 or r0 + h > shape[0] or c0 + w > shape[1]:
        raise ValueError(f"region {(r0, c0, h, w)} lies outside the {shape[0]}x{shape[1]} image")
    return r0, c0, h, w


def spectral_correlation(recon, truth, region: Region) -> float:
    """Pearson correlation of the region-averaged spectra of two cubes."""
    r, t = _cube(recon), _cube(truth)
    if r.shape != t.shape:
        raise DimensionError(f"reconstruction {r.shape} and truth {t.shape} differ")
    r0, c0, h, w = _check_region(region, r.shape)
    a = r[r0:r0 + h, c0:c0 + w].mean(axis=(0, 1))
    b = t[r0:r0 + h, c0:c0 + w].mean(axis=(0, 1))
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("correlation is undefined for a constant spectrum")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def evaluate(recon, truth, regions: Sequence[Region] = (), peak: Optional[float] = None) -> EvalReport:
    rep = psnr(recon, truth, peak)
    for reg in regions:
        reg = _check_region(reg, _cube(truth).shape)
        name = "{}_{}_{}_{}".format(*reg)
        rep.regions[name] = reg
        rep.spectral_corr[name] = spectral_correlation(recon, truth, reg)
    return rep

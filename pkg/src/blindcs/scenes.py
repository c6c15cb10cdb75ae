"""Seeded synthetic scenes for simulation, tests and demos."""

from __future__ import annotations

import numpy as np

from .core import Datacube

__all__ = ["default_wavelengths", "synthetic_cube", "rgb_response", "rgb_projection", "synthetic_image"]


def default_wavelengths(n_channels, start=450.0, stop=650.0):
    return np.linspace(start, stop, n_channels)


def synthetic_cube(nx, ny, n_channels, seed, n_blobs=8, wavelengths=None) -> Datacube:
    """Sum of Gaussian blobs, each carrying its own smooth spectrum.

    Spectra are single Gaussian bumps over wavelength on a small pedestal,
    and the cube is scaled so its maximum is 1.
    """
    rng = np.random.default_rng(seed)
    lam = default_wavelengths(n_channels) if wavelengths is None else np.asarray(wavelengths, float)
    span = max(lam[-1] - lam[0], 1.0)
    rows, cols = np.mgrid[0:nx, 0:ny]
    cube = np.zeros((nx, ny, n_channels))
    for _ in range(n_blobs):
        r0, c0 = rng.uniform(0, nx), rng.uniform(0, ny)
        width = rng.uniform(0.08, 0.25) * min(nx, ny)
        amp = rng.uniform(0.3, 1.0)
        peak = rng.uniform(lam[0], lam[-1])
        spread = rng.uniform(0.15, 0.5) * span
        spectrum = 0.2 + np.exp(-0.5 * ((lam - peak) / spread) ** 2)
        spatial = np.exp(-((rows - r0) ** 2 + (cols - c0) ** 2) / (2 * width ** 2))
        cube += amp * spatial[:, :, None] * spectrum[None, None, :]
    cube /= cube.max()
    return Datacube(cube, list(lam))


def rgb_response(wavelengths):
    """Gaussian colour responses centred at 610, 540 and 465 nm, shape (3, L).

    Each row is normalised to sum to one, so a flat unit spectrum maps to
    unit RGB.
    """
    lam = np.asarray(wavelengths, dtype=float)
    centres = np.array([610.0, 540.0, 465.0])
    resp = np.exp(-0.5 * ((lam[None, :] - centres[:, None]) / 40.0) ** 2)
    return resp / resp.sum(axis=1, keepdims=True)


def rgb_projection(cube: Datacube, wavelengths=None) -> np.ndarray:
    """Registered RGB image of a cube under :func:`rgb_response`."""
    lam = wavelengths if wavelengths is not None else cube.wavelengths
    if lam is None:
        lam = default_wavelengths(cube.n_channels)
    return np.einsum("xyl,cl->xyc", cube.data, rgb_response(lam))


def synthetic_image(n, seed, channels=3) -> np.ndarray:
    """Piecewise-smooth 8-bit-range test image: shaded rectangles and discs."""
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:n, 0:n] / n
    img = np.empty((n, n, channels))
    base = rng.uniform(40, 200, channels)
    ramp = rng.uniform(-60, 60, (2, channels))
    img[:] = base + rows[:, :, None] * ramp[0] + cols[:, :, None] * ramp[1]
    for _ in range(6):
        colour = rng.uniform(0, 255, channels)
        if rng.random() < 0.5:
            r0, r1 = np.sort(rng.uniform(0, 1, 2))
            c0, c1 = np.sort(rng.uniform(0, 1, 2))
            sel = (rows >= r0) & (rows < r1) & (cols >= c0) & (cols < c1)
        else:
            rc, cc, rad = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.05, 0.25)
            sel = (rows - rc) ** 2 + (cols - cc) ** 2 < rad ** 2
        img[sel] = colour
    return np.clip(img, 0, 255)

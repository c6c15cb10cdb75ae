"""Cube files, run configurations and 8-bit PNG images.

Cube file layout (all text ASCII, lines end in ``\\n``)::

    HSDC1
    dims <N_x> <N_y> <N_lambda>
    dtype f32le
    wavelengths <w_1> ... <w_L>      (optional)
    <key> <value>                    (optional extra metadata lines)
    <blank line>
    <payload: 4 * N_x * N_y * N_lambda bytes>

The payload stores little-endian float32 values with the channel index
outermost and the spatial pixels row-major inside each channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .core import Datacube
from .errors import DimensionError

__all__ = [
    "CubeFile",
    "write_cube",
    "read_cube",
    "RunConfig",
    "CONFIG_KEYS",
    "read_png",
    "write_png",
    "read_image",
]

MAGIC = "HSDC1"


@dataclass
class CubeFile:
    data: np.ndarray                       # (N_x, N_y, N_lambda) float32 values
    wavelengths: Optional[list] = None
    meta: Dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_cube(cls, cube, meta=None):
        if isinstance(cube, Datacube):
            return cls(cube.data.astype("<f4"), cube.wavelengths, dict(meta or {}))
        arr = np.asarray(cube)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        return cls(arr.astype("<f4"), None, dict(meta or {}))

    def to_cube(self) -> Datacube:
        return Datacube(self.data.astype(float), self.wavelengths)

    def to_bytes(self) -> bytes:
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise DimensionError(f"cube payload must be 3-D, got {data.shape}")
        nx, ny, nl = data.shape
        lines = [MAGIC, f"dims {nx} {ny} {nl}", "dtype f32le"]
        if self.wavelengths is not None:
            if len(self.wavelengths) != nl:
                raise DimensionError("wavelength list does not match the channel count")
            lines.append("wavelengths " + " ".join(repr(float(w)) for w in self.wavelengths))
        for key, value in self.meta.items():
            if key in ("dims", "dtype", "wavelengths") or not key or " " in key or "\n" in str(value):
                raise ValueError(f"invalid metadata entry {key!r}")
            lines.append(f"{key} {value}")
        header = ("\n".join(lines) + "\n\n").encode("ascii")
        payload = np.ascontiguousarray(data.astype("<f4").transpose(2, 0, 1)).tobytes()
        return header + payload

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CubeFile":
        end = raw.find(b"\n\n")
        if end < 0:
            raise ValueError("cube file header is not terminated by a blank line")
        try:
            lines = raw[:end].decode("ascii").split("\n")
        except UnicodeDecodeError as exc:
            raise ValueError("cube file header is not ASCII") from exc
        if lines[0] != MAGIC:
            raise ValueError("not a cube file (bad magic)")
        dims = None
        dtype = None
        wavelengths = None
        meta = {}
        for line in lines[1:]:
            key, _, value = line.partition(" ")
            if key == "dims":
                dims = tuple(int(v) for v in value.split())
            elif key == "dtype":
                dtype = value.strip()
            elif key == "wavelengths":
                wavelengths = [float(v) for v in value.split()]
            else:
                meta[key] = value
        if dims is None or len(dims) != 3 or min(dims) < 1:
            raise ValueError("cube file lacks valid dims")
        if dtype != "f32le":
            raise ValueError(f"unsupported dtype {dtype!r}")
        nx, ny, nl = dims
        payload = raw[end + 2:]
        if len(payload) != 4 * nx * ny * nl:
            raise ValueError(
                f"payload holds {len(payload)} bytes, expected {4 * nx * ny * nl}"
            )
        data = np.frombuffer(payload, dtype="<f4").reshape(nl, nx, ny).transpose(1, 2, 0)
        if wavelengths is not None and len(wavelengths) != nl:
            raise ValueError("wavelength list does not match the channel count")
        return cls(np.ascontiguousarray(data), wavelengths, meta)


def write_cube(path, cube, meta=None):
    cf = cube if isinstance(cube, CubeFile) else CubeFile.from_cube(cube, meta)
    with open(path, "wb") as fh:
        fh.write(cf.to_bytes())


def read_cube(path) -> CubeFile:
    with open(path, "rb") as fh:
        return CubeFile.from_bytes(fh.read())


# ---------------------------------------------------------------------------
# Run configuration


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    t = str(text).strip()
    return None if t in ("", "none") else float(t)


def _str(text):
    return str(text)


CONFIG_KEYS = {
    "command": _str,
    "scene": _str,
    "truth": _str,
    "nx": int,
    "ny": int,
    "nl": int,
    "code": _str,
    "code_file": _str,
    "measurement": _str,
    "side_rgb": _str,
    "rgb": _bool,
    "seed": int,
    "noise_alpha0": float,
    "out": _str,
    "inference": _str,
    "iters": int,
    "burn_in": int,
    "k": int,
    "patch": int,
    "stride": int,
    "prune": float,
    "final_sample": _bool,
    "vb_phi_inverse": _bool,
    "tol": _opt_float,
    "threads": int,
    "input": _str,
    "corrupt": _bool,
    "sigma": float,
    "observed_ratio": float,
    "mask": _str,
    "recon": _str,
    "regions": _str,
    "peak": _opt_float,
}


class RunConfig:
    """Flat ``key = value`` settings; unknown keys are rejected."""

    def __init__(self, values=None):
        self.values = {}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key, value):
        if key not in CONFIG_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        self.values[key] = None if value is None else CONFIG_KEYS[key](value)

    def get(self, key, default=None):
        if key not in CONFIG_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        v = self.values.get(key)
        return default if v is None else v

    def merged(self, overrides) -> "RunConfig":
        """A copy with every non-None entry of ``overrides`` applied."""
        out = RunConfig(self.values)
        for k, v in overrides.items():
            if v is not None:
                out.set(k, v)
        return out

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        cfg = cls()
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {n} is not key = value: {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            cfg.set(key, value)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.parse(fh.read())

    def dumps(self) -> str:
        lines = []
        for key in sorted(self.values):
            v = self.values[key]
            if v is None:
                continue
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())


# ---------------------------------------------------------------------------
# Images


def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("RGB", "RGBA", "L"):
            raise ValueError(f"unsupported PNG mode {im.mode}")
        arr = np.asarray(im.convert("RGB"), dtype=float)
    return arr


def write_png(path, img):
    from PIL import Image

    arr = np.asarray(img, dtype=float)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise DimensionError(f"PNG output needs (H, W) or (H, W, 3), got {arr.shape}")
    Image.fromarray(np.clip(np.rint(arr), 0, 255).astype(np.uint8)).save(path, format="PNG")


def read_image(path) -> np.ndarray:
    """8-bit image from a PNG or a 3-channel cube file, as float (H, W, 3)."""
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
    if head == MAGIC.encode():
        data = read_cube(path).data.astype(float)
        if data.shape[2] != 3:
            raise DimensionError(f"image cube must have 3 channels, got {data.shape[2]}")
        return data
    if head.startswith(b"\x89PNG"):
        return read_png(path)
    raise ValueError(f"{path}: unsupported image format (PNG or cube file expected)")

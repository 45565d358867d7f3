"""Raster utilities: loading, Catmull-Rom sampling, gradients, affine warps, DFT.

Rasters are plain 2-D ``float64`` numpy arrays indexed ``[row, col]``.
Pixel ``(x, y)`` means column ``x``, row ``y``; pixel centers sit on integers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

PCW1_MAGIC = b"PCW1"
_PCW1_HEADER = struct.Struct("<4sIII")


class RasterFormatError(ValueError):
    """Unsupported or malformed raster file."""


class DomainError(ValueError):
    """Sample coordinate outside the bicubic support."""


@dataclass(frozen=True)
class AffinePair:
    """Affine map ``x' = a0 + a1*x + a2*y``, ``y' = b0 + b1*x + b2*y``."""

    a0: float = 0.0
    a1: float = 1.0
    a2: float = 0.0
    b0: float = 0.0
    b1: float = 0.0
    b2: float = 1.0

    @classmethod
    def shift(cls, dx: float, dy: float) -> "AffinePair":
        return cls(a0=dx, b0=dy)

    @classmethod
    def from_matrix(cls, m) -> "AffinePair":
        m = np.asarray(m, dtype=float)
        return cls(m[0, 2], m[0, 0], m[0, 1], m[1, 2], m[1, 0], m[1, 1])

    @property
    def det(self) -> float:
        return self.a1 * self.b2 - self.a2 * self.b1

    def matrix(self) -> np.ndarray:
        """2x3 matrix ``[[a1, a2, a0], [b1, b2, b0]]``."""
        return np.array([[self.a1, self.a2, self.a0], [self.b1, self.b2, self.b0]])

    def apply(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (self.a0 + self.a1 * x + self.a2 * y, self.b0 + self.b1 * x + self.b2 * y)

    def inverse(self) -> "AffinePair":
        d = self.det
        if abs(d) < 1e-12:
            raise ValueError(f"affine map is singular (det={d:g})")
        a1, a2 = self.b2 / d, -self.a2 / d
        b1, b2 = -self.b1 / d, self.a1 / d
        a0 = -(a1 * self.a0 + a2 * self.b0)
        b0 = -(b1 * self.a0 + b2 * self.b0)
        return AffinePair(a0, a1, a2, b0, b1, b2)

    def compose(self, other: "AffinePair") -> "AffinePair":
        """Return ``self o other`` (apply ``other`` first)."""
        m = np.vstack([self.matrix(), [0, 0, 1]]) @ np.vstack([other.matrix(), [0, 0, 1]])
        return AffinePair.from_matrix(m[:2])


# --------------------------------------------------------------------------
# I/O


def load_gray(path) -> np.ndarray:
    """Load a PNG/TIFF/PGM as a grayscale raster scaled to [0, 1].

    RGB(A) inputs are converted by averaging the three color channels.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:  # PIL raises a zoo of exception types
        raise RasterFormatError(f"cannot decode {path}: {exc}") from exc

    mode = img.mode
    if mode in ("1", "L", "P"):
        if mode == "P":
            img = img.convert("RGB")
            return np.asarray(img, dtype=np.float64).mean(axis=2) / 255.0
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    if mode in ("RGB", "RGBA", "LA"):
        arr = np.asarray(img, dtype=np.float64)
        if mode == "LA":
            return arr[..., 0] / 255.0
        return arr[..., :3].mean(axis=2) / 255.0
    if mode.startswith("I;16") or mode == "I":
        arr = np.asarray(img).astype(np.float64)
        return np.clip(arr / 65535.0, 0.0, 1.0)
    if mode == "F":
        arr = np.asarray(img, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise RasterFormatError(f"{path} contains non-finite samples")
        return arr
    raise RasterFormatError(f"unsupported image mode {mode!r} in {path}")


def save_png16(raster, path, normalize: bool = True) -> None:
    """Write a 16-bit grayscale PNG.

    With ``normalize`` the raster is min-max stretched, otherwise it is
    assumed to lie in [0, 1] and clipped.
    """
    r = np.asarray(raster, dtype=np.float64)
    if normalize:
        lo, hi = float(r.min()), float(r.max())
        r = (r - lo) / (hi - lo) if hi > lo else np.zeros_like(r)
    q = np.round(np.clip(r, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(q).save(path, format="PNG")


def save_pcw1(raster, path) -> None:
    """Write the PCW1 float grid: 16-byte header then little-endian float32 samples."""
    r = np.ascontiguousarray(raster, dtype="<f4")
    h, w = r.shape
    with open(path, "wb") as fh:
        fh.write(_PCW1_HEADER.pack(PCW1_MAGIC, w, h, 0))
        fh.write(r.tobytes())


def load_pcw1(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _PCW1_HEADER.size:
        raise RasterFormatError(f"{path}: truncated header")
    magic, w, h, _ = _PCW1_HEADER.unpack_from(data)
    if magic != PCW1_MAGIC:
        raise RasterFormatError(f"{path}: bad magic {magic!r}")
    body = data[_PCW1_HEADER.size:]
    if len(body) != 4 * w * h:
        raise RasterFormatError(f"{path}: expected {w * h} samples, got {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)


# --------------------------------------------------------------------------
# Catmull-Rom interpolation


def _cr_weights(t):
    t2 = t * t
    t3 = t2 * t
    return (
        0.5 * (-t3 + 2 * t2 - t),
        0.5 * (3 * t3 - 5 * t2 + 2),
        0.5 * (-3 * t3 + 4 * t2 + t),
        0.5 * (t3 - t2),
    )


def _cr_dweights(t):
    t2 = t * t
    return (
        0.5 * (-3 * t2 + 4 * t - 1),
        0.5 * (9 * t2 - 10 * t),
        0.5 * (-9 * t2 + 8 * t + 1),
        0.5 * (3 * t2 - 2 * t),
    )


def in_support(shape, x, y):
    """Mask of coordinates with a full 4x4 Catmull-Rom neighbourhood."""
    h, w = shape
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return (x >= 1.0) & (x <= w - 2.0) & (y >= 1.0) & (y <= h - 2.0)


def bicubic(raster, x, y, gradient: bool = False):
    """Vectorized Catmull-Rom sampling at arbitrary coordinates.

    Coordinates outside the support are clamped to its edge; use
    :func:`in_support` to flag them. With ``gradient=True`` the exact partial
    derivatives of the interpolating surface are returned as well.

    Returns ``values`` or ``(values, d/dx, d/dy)``, each shaped like ``x``.
    """
    r = np.asarray(raster, dtype=np.float64)
    h, w = r.shape
    if h < 4 or w < 4:
        raise ValueError("bicubic sampling needs a raster of at least 4x4")
    x = np.clip(np.asarray(x, dtype=float), 1.0, w - 2.0)
    y = np.clip(np.asarray(y, dtype=float), 1.0, h - 2.0)
    ix = np.clip(np.floor(x).astype(np.intp), 1, w - 3)
    iy = np.clip(np.floor(y).astype(np.intp), 1, h - 3)
    tx = x - ix
    ty = y - iy

    wx = _cr_weights(tx)
    wy = _cr_weights(ty)
    # rows[j] is the x-interpolated value on row iy-1+j
    rows = []
    drows = []
    dwx = _cr_dweights(tx) if gradient else None
    for j in range(4):
        yy = iy + (j - 1)
        acc = 0.0
        dacc = 0.0
        for i in range(4):
            s = r[yy, ix + (i - 1)]
            acc = acc + wx[i] * s
            if gradient:
                dacc = dacc + dwx[i] * s
        rows.append(acc)
        drows.append(dacc)

    val = wy[0] * rows[0] + wy[1] * rows[1] + wy[2] * rows[2] + wy[3] * rows[3]
    if not gradient:
        return val
    dwy = _cr_dweights(ty)
    gx = wy[0] * drows[0] + wy[1] * drows[1] + wy[2] * drows[2] + wy[3] * drows[3]
    gy = dwy[0] * rows[0] + dwy[1] * rows[1] + dwy[2] * rows[2] + dwy[3] * rows[3]
    return val, gx, gy


def sample_bicubic(raster, x: float, y: float) -> float:
    """Catmull-Rom value at a single point; raises :class:`DomainError` off-support."""
    r = np.asarray(raster)
    if not in_support(r.shape, x, y):
        raise DomainError(f"({x}, {y}) outside bicubic support of {r.shape[1]}x{r.shape[0]} raster")
    return float(bicubic(r, x, y))


# --------------------------------------------------------------------------
# Geometry and derivatives


def warp_affine(raster, t: AffinePair):
    """Resample ``raster`` through ``t``: ``out[y, x] = raster(t(x, y))``.

    Returns ``(warped, valid)`` where ``valid`` marks pixels whose source
    coordinate had full bicubic support. Invalid pixels hold clamped samples
    so that the output stays finite.
    """
    if abs(t.det) < 1e-12:
        raise ValueError(f"singular affine map (det={t.det:g})")
    r = np.asarray(raster, dtype=np.float64)
    h, w = r.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sx, sy = t.apply(xx, yy)
    return bicubic(r, sx, sy), in_support(r.shape, sx, sy)


def gradient_central(raster):
    """Central differences on the interior, one-sided at the borders.

    Returns ``(d/dx, d/dy)``.
    """
    r = np.asarray(raster, dtype=np.float64)
    if r.shape[0] < 3 or r.shape[1] < 3:
        raise ValueError("gradient_central needs at least 3x3 samples")
    gy, gx = np.gradient(r)
    return gx, gy


def dft2(raster) -> np.ndarray:
    return np.fft.fft2(np.asarray(raster, dtype=np.float64))


def idft2(spectrum) -> np.ndarray:
    return np.fft.ifft2(spectrum).real

"""Phase congruency from a frequency-domain Log-Gabor filter bank.

The bank follows Kovesi's construction: a radial log-Gaussian per scale times
an angular Gaussian per orientation. Phase congruency is accumulated per
orientation using the ``cos - |sin|`` phase-deviation energy and a sigmoid
frequency-spread weight. An optional Rayleigh noise floor can be subtracted;
by default it is disabled so that faint edge structure survives.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .raster import dft2

# Guard for the mean-phase and spread ratios. These must stay scale-free, so
# epsilon is not used here; it only enters the final normalisation.
_TINY = 1e-300


class NoiseMode(str, enum.Enum):
    OFF = "off"
    RAYLEIGH = "rayleigh"


@dataclass(frozen=True)
class PcParams:
    n_scales: int = 4
    n_orientations: int = 6
    min_wavelength: float = 3.0
    scale_mult: float = 2.1
    sigma_on_f: float = 0.55
    k_noise: float = 2.0
    noise_mode: NoiseMode = NoiseMode.OFF
    epsilon: float = 1e-4
    # frequency-spread sigmoid
    cutoff: float = 0.5
    gain: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "noise_mode", NoiseMode(self.noise_mode))
        if self.n_scales < 1 or self.n_orientations < 1:
            raise ValueError("n_scales and n_orientations must be >= 1")
        if self.min_wavelength < 2:
            raise ValueError("min_wavelength must be >= 2")
        if not 0 < self.sigma_on_f < 1:
            raise ValueError("sigma_on_f must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.scale_mult <= 1:
            raise ValueError("scale_mult must exceed 1")

    def center_frequency(self, scale: int) -> float:
        return 1.0 / (self.min_wavelength * self.scale_mult**scale)


@dataclass(frozen=True)
class FilterBank:
    """Real frequency-domain transfer functions, unshifted (DC at ``[0, 0]``).

    ``filters[n, o]`` is the filter for scale ``n`` and orientation ``o``.
    """

    params: PcParams
    filters: np.ndarray
    radial: np.ndarray
    angular: np.ndarray

    @property
    def shape(self):
        return self.filters.shape[2:]

    def __len__(self):
        return self.filters.shape[0] * self.filters.shape[1]


@dataclass
class PcMap:
    pc: np.ndarray
    per_orientation_energy: np.ndarray | None = field(default=None, repr=False)
    thresholds: np.ndarray | None = None


def frequency_grid(height: int, width: int):
    """Radius (cycles/pixel) and polar angle of every DFT bin.

    The angle uses ``-fy`` so that angles increase anticlockwise in image
    coordinates (rows grow downwards).
    """
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    radius = np.sqrt(fx**2 + fy**2)
    theta = np.arctan2(-fy, fx)
    return radius, np.broadcast_to(theta, radius.shape)


def radial_gain(radius, f0: float, sigma_on_f: float):
    """Log-Gabor radial transfer function; zero at DC."""
    radius = np.asarray(radius, dtype=float)
    out = np.zeros_like(radius)
    nz = radius > 0
    out[nz] = np.exp(-(np.log(radius[nz] / f0) ** 2) / (2 * math.log(sigma_on_f) ** 2))
    return out


def angular_gain(theta, angle: float, n_orientations: int):
    theta = np.asarray(theta, dtype=float)
    ds = np.sin(theta) * math.cos(angle) - np.cos(theta) * math.sin(angle)
    dc = np.cos(theta) * math.cos(angle) + np.sin(theta) * math.sin(angle)
    dtheta = np.abs(np.arctan2(ds, dc))
    sigma = math.pi / n_orientations / 1.2
    return np.exp(-(dtheta**2) / (2 * sigma**2))


def build_filter_bank(width: int, height: int, p: PcParams = PcParams()) -> FilterBank:
    if width < 16 or height < 16:
        raise ValueError("filter bank needs an image of at least 16x16")
    radius, theta = frequency_grid(height, width)
    radial = np.stack(
        [radial_gain(radius, p.center_frequency(n), p.sigma_on_f) for n in range(p.n_scales)]
    )
    angles = np.arange(p.n_orientations) * math.pi / p.n_orientations
    angular = np.stack([angular_gain(theta, a, p.n_orientations) for a in angles])
    filters = radial[:, None] * angular[None, :]
    filters[:, :, 0, 0] = 0.0
    return FilterBank(p, filters, radial, angular)


# --------------------------------------------------------------------------
# Rayleigh noise model


RAYLEIGH_MEDIAN_FACTOR = math.sqrt(2.0 * math.log(2.0))


def rayleigh_stats(sigma_g: float):
    """Mean and standard deviation of a Rayleigh law with Gaussian scale ``sigma_g``."""
    mu = sigma_g * math.sqrt(math.pi / 2.0)
    sd = sigma_g * math.sqrt((4.0 - math.pi) / 2.0)
    return mu, sd


def rayleigh_threshold(sigma_g: float, k: float) -> float:
    mu, sd = rayleigh_stats(sigma_g)
    return mu + k * sd


def estimate_noise_threshold(amplitudes, p: PcParams) -> float:
    """Noise floor for one orientation from its smallest-scale amplitudes.

    The Rayleigh scale is read off the median amplitude, then extrapolated to
    the summed energy over all scales with the geometric series of filter
    gains ``sum(1/mult**n)``.
    """
    amplitudes = np.asarray(amplitudes, dtype=float).ravel()
    if amplitudes.size == 0:
        raise ValueError("no amplitude samples")
    sigma_g = float(np.median(amplitudes)) / RAYLEIGH_MEDIAN_FACTOR
    if sigma_g <= 0:
        return 0.0
    r = 1.0 / p.scale_mult
    sigma_total = sigma_g * (1.0 - r**p.n_scales) / (1.0 - r)
    return rayleigh_threshold(sigma_total, p.k_noise)


# --------------------------------------------------------------------------


def compute_pc(img, p: PcParams = PcParams(), bank: FilterBank | None = None,
               keep_orientations: bool = False) -> PcMap:
    """Phase congruency map in [0, 1].

    ``bank`` may be passed to reuse filters across images of the same size.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 32:
        raise ValueError("compute_pc needs a 2-D image of at least 32x32")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite samples")
    h, w = img.shape
    if bank is None:
        bank = build_filter_bank(w, h, p)
    elif bank.shape != (h, w):
        raise ValueError(f"filter bank shape {bank.shape} does not match image {(h, w)}")
    p = bank.params
    eps = p.epsilon
    spectrum = dft2(img)

    numerator = np.zeros((h, w))
    amp_total = np.zeros((h, w))
    per_orient = np.zeros((p.n_orientations, h, w)) if keep_orientations else None
    thresholds = np.zeros(p.n_orientations)

    for o in range(p.n_orientations):
        eo = [np.fft.ifft2(spectrum * bank.filters[n, o]) for n in range(p.n_scales)]
        amps = [np.abs(r) for r in eo]
        sum_e = sum(r.real for r in eo)
        sum_o = sum(r.imag for r in eo)
        sum_an = sum(amps)
        max_an = np.maximum.reduce(amps)

        norm = np.sqrt(sum_e**2 + sum_o**2) + _TINY
        mean_e = sum_e / norm
        mean_o = sum_o / norm
        energy = np.zeros((h, w))
        for r in eo:
            e, od = r.real, r.imag
            energy += e * mean_e + od * mean_o - np.abs(e * mean_o - od * mean_e)

        if p.noise_mode is NoiseMode.RAYLEIGH:
            thresholds[o] = estimate_noise_threshold(amps[0], p)

        if p.n_scales > 1:
            spread = (sum_an / (max_an + _TINY) - 1.0) / (p.n_scales - 1)
            weight = 1.0 / (1.0 + np.exp((p.cutoff - spread) * p.gain))
        else:
            weight = np.ones((h, w))

        contrib = np.maximum(energy * weight - thresholds[o], 0.0)
        numerator += contrib
        amp_total += sum_an
        if per_orient is not None:
            per_orient[o] = contrib

    pc = np.clip(numerator / (amp_total + eps), 0.0, 1.0)
    return PcMap(pc=pc, per_orientation_energy=per_orient, thresholds=thresholds)

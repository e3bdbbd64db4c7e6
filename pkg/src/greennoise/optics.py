"""Coded-diffraction forward model, band truncation and the camera model."""

from dataclasses import dataclass, field, asdict, replace
import math

import numpy as np

from greennoise.core import (
    InvalidInputError,
    RandomStream,
    as_complex_image,
    as_real_image,
    centered_frequency_indices,
    dft2,
    fftshift_center,
    unshift,
)
from greennoise.maskgen import BinaryMask

SNR_CAP_DB = 120.0
DEFAULT_READ_NOISE = 2.0
DEFAULT_BIT_DEPTH = 12
DEFAULT_FULL_WELL_MARGIN = 1.2


@dataclass(frozen=True)
class DefocusParams:
    wavelength: float
    focal_length: float
    distance: float
    pitch: float

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (np.isfinite(value) and value > 0):
                raise InvalidInputError(f"defocus parameter {name} must be positive, got {value}")


@dataclass(frozen=True)
class SensorParams:
    """Camera model.

    ``photon_scale`` is the expected photon count at unit intensity and
    ``full_well`` (photons) maps to the top code ``2**bit_depth - 1``.
    ``full_well=None`` means "1.2x the clean peak of each image".
    """

    photon_scale: float
    gaussian_sigma: float = DEFAULT_READ_NOISE
    bit_depth: int = DEFAULT_BIT_DEPTH
    full_well: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.photon_scale) and self.photon_scale > 0):
            raise InvalidInputError("photon_scale must be positive")
        if not self.gaussian_sigma >= 0:
            raise InvalidInputError("gaussian_sigma must be nonnegative")
        if not 1 <= int(self.bit_depth) <= 16:
            raise InvalidInputError("bit_depth must lie in 1..16")
        if self.full_well is not None and not self.full_well > 0:
            raise InvalidInputError("full_well must be positive")

    @property
    def max_code(self):
        return 2 ** int(self.bit_depth) - 1


@dataclass
class Measurement:
    mask: BinaryMask
    intensity: np.ndarray
    clean: np.ndarray | None = None
    codes: np.ndarray | None = None
    full_well: float | None = None
    snr_db: float | None = None
    sensor: SensorParams | None = None


@dataclass
class MeasurementSet:
    measurements: list
    sensor: SensorParams | None
    truncation: float = 0.0
    defocus: DefocusParams | None = None
    kernel: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.measurements) < 1:
            raise InvalidInputError("a measurement set needs at least one measurement")
        shape = self.measurements[0].intensity.shape
        for m in self.measurements:
            if m.intensity.shape != shape or m.mask.shape != shape:
                raise InvalidInputError("all masks and intensities must share one shape")
        if not 0 <= self.truncation < 1:
            raise InvalidInputError("truncation fraction must lie in [0, 1)")

    @property
    def shape(self):
        return self.measurements[0].intensity.shape

    @property
    def masks(self):
        return [m.mask for m in self.measurements]

    @property
    def intensities(self):
        return [m.intensity for m in self.measurements]

    def __len__(self):
        return len(self.measurements)

    def kept_band(self):
        """Boolean array (unshifted layout) of bins the camera actually measured."""
        return kept_band(*self.shape, self.truncation)


def defocus_kernel(width, height, params):
    """Phase-only quadratic defocus kernel centered at ``(H // 2, W // 2)``.

    ``h = exp(1j * k / (2 L) * (1 - L / f) * (x**2 + y**2))`` with physical
    coordinates ``(index - center) * pitch`` and ``k = 2 pi / wavelength``.
    """
    if not isinstance(params, DefocusParams):
        raise InvalidInputError("params must be DefocusParams")
    if width < 1 or height < 1:
        raise InvalidInputError("kernel dimensions must be positive")
    k = 2 * math.pi / params.wavelength
    coef = k / (2 * params.distance) * (1 - params.distance / params.focal_length)
    rows, cols = centered_frequency_indices(height, width)
    r2 = (rows * params.pitch) ** 2 + (cols * params.pitch) ** 2
    return np.exp(1j * coef * r2)


def _mask_bits(mask):
    return mask.bits if isinstance(mask, BinaryMask) else np.asarray(mask)


def modulation(mask, kernel=None):
    """Complex transmittance ``mask * kernel`` applied to the object."""
    c = _mask_bits(mask).astype(np.complex128)
    if kernel is not None:
        kernel = as_complex_image(kernel)
        if kernel.shape != c.shape:
            raise InvalidInputError("kernel and mask dimensions differ")
        c = c * kernel
    return c


def forward_intensity(u, mask, kernel=None):
    """``|dft2(mask * kernel * u)|**2``."""
    u = as_complex_image(u)
    c = modulation(mask, kernel)
    if c.shape != u.shape:
        raise InvalidInputError(f"object shape {u.shape} does not match mask shape {c.shape}")
    return np.abs(dft2(c * u)) ** 2


def kept_band(height, width, fraction):
    """Bins (unshifted layout) with centered ``max(|m_c|, |n_c|) <= (1 - fraction) * (N // 2)``."""
    if not 0 <= fraction < 1:
        raise InvalidInputError(f"truncation fraction must lie in [0, 1), got {fraction}")
    m, n = centered_frequency_indices(height, width)
    keep = (np.abs(m) <= (1 - fraction) * (height // 2)) & (np.abs(n) <= (1 - fraction) * (width // 2))
    return unshift(keep)


def truncate_high_freq(y, fraction):
    """Zero the outer square band of an (unshifted) intensity image."""
    y = as_real_image(y)
    return np.where(kept_band(*y.shape, fraction), y, 0.0)


def apply_sensor(y, sensor, rng=None):
    """Poisson shot noise, Gaussian read noise, clipping and quantization.

    Returns ``(intensity, codes, full_well)``. ``intensity`` is in the same
    units as ``y`` (codes scaled back through full well and photon scale).
    """
    y = as_real_image(y)
    if rng is None:
        rng = RandomStream(sensor.seed, "sensor")
    gen = rng.generator
    photons = y * sensor.photon_scale
    full_well = sensor.full_well
    if full_well is None:
        full_well = DEFAULT_FULL_WELL_MARGIN * float(photons.max()) if photons.max() > 0 else 1.0
    counts = gen.poisson(photons).astype(np.float64)
    if sensor.gaussian_sigma > 0:
        counts = counts + gen.normal(0.0, sensor.gaussian_sigma, size=counts.shape)
    counts = np.clip(counts, 0.0, full_well)
    max_code = sensor.max_code
    codes = np.rint(counts / full_well * max_code).astype(np.uint16)
    intensity = codes.astype(np.float64) * (full_well / max_code) / sensor.photon_scale
    return intensity, codes, full_well


def snr_of(clean, noisy):
    """``10 log10(sum clean^2 / sum (clean - noisy)^2)`` in dB, capped at 120."""
    clean = np.asarray(clean, dtype=np.float64)
    noisy = np.asarray(noisy, dtype=np.float64)
    if clean.shape != noisy.shape:
        raise InvalidInputError("snr_of needs matching shapes")
    err = np.sum((clean - noisy) ** 2)
    sig = np.sum(clean**2)
    if err == 0:
        return SNR_CAP_DB
    if sig == 0:
        return -SNR_CAP_DB
    return float(min(SNR_CAP_DB, 10 * math.log10(sig / err)))


def measurement_stream(seed, index):
    return RandomStream(seed, f"sensor/{index}")


def _joint_snr(clean_list, sensor, indices):
    noisy = []
    for i, clean in zip(indices, clean_list):
        noisy.append(apply_sensor(clean, sensor, measurement_stream(sensor.seed, i))[0])
    return snr_of(np.stack(clean_list), np.stack(noisy))


def calibrate_photon_scale(clean, target_db, sensor=None, index=None, lo=1e-6, hi=1e12, iters=80, refine=61):
    """Bisect (in log space) the photon scale giving ``target_db`` measured SNR.

    ``clean`` is an image or a list of images measured jointly. The noise
    draws use the same per-index streams as :func:`acquire` (``index`` for a
    single image, ``0..M-1`` for a list), so the calibrated SNR is exactly
    what :func:`acquire` will produce. ``sensor`` supplies the remaining
    camera parameters. ``refine`` grid points within +-15% of the bisection
    result are then tried and the one closest to the target is returned.
    """
    if isinstance(clean, (list, tuple)):
        clean_list = [as_real_image(c) for c in clean]
        indices = list(range(len(clean_list)))
    else:
        clean_list = [as_real_image(clean)]
        indices = [0 if index is None else int(index)]
    base = sensor or SensorParams(photon_scale=1.0)

    def snr(scale):
        return _joint_snr(clean_list, _replace_scale(base, scale), indices)

    lo_l, hi_l = math.log(lo), math.log(hi)
    if snr(math.exp(hi_l)) < target_db:
        raise InvalidInputError(f"target SNR {target_db} dB not reachable with this sensor")
    for _ in range(iters):
        mid = 0.5 * (lo_l + hi_l)
        if snr(math.exp(mid)) < target_db:
            lo_l = mid
        else:
            hi_l = mid
        if hi_l - lo_l < 1e-6:
            break
    # Fresh Poisson draws at each scale make the measured SNR jump around its
    # trend, so bisection can stop on a jump. Polish on a local log grid.
    best, best_err = math.exp(hi_l), abs(snr(math.exp(hi_l)) - target_db)
    for offset in np.linspace(-0.15, 0.15, refine):
        scale = math.exp(hi_l + offset)
        err = abs(snr(scale) - target_db)
        if err < best_err:
            best, best_err = scale, err
    return best


def _replace_scale(sensor, scale):
    return replace(sensor, photon_scale=scale)


def calibrated_sensors(clean_list, target_db, base):
    """One sensor per measurement, each calibrated to ``target_db`` on its own image."""
    return [
        replace(base, photon_scale=calibrate_photon_scale(c, target_db, base, index=i))
        for i, c in enumerate(clean_list)
    ]


def clean_intensities(u, masks, truncation=0.0, kernel=None):
    """Noise-free, band-truncated intensities for each mask."""
    return [truncate_high_freq(forward_intensity(u, m, kernel), truncation) for m in masks]


def acquire(u, masks, sensor=None, truncation=0.0, defocus=None, kernel=None):
    """Simulate one Fourier intensity image per mask.

    Each measurement goes through :func:`forward_intensity`,
    :func:`truncate_high_freq` and, unless ``sensor`` is None (noiseless),
    :func:`apply_sensor` with the noise stream ``(sensor.seed, index)``.
    ``sensor`` may also be a list with one :class:`SensorParams` per mask.
    ``defocus`` builds the kernel; an explicit ``kernel`` array overrides it.
    """
    u = as_complex_image(u)
    if len(masks) < 1:
        raise InvalidInputError("need at least one mask")
    sensors = sensor if isinstance(sensor, (list, tuple)) else [sensor] * len(masks)
    if len(sensors) != len(masks):
        raise InvalidInputError("need one sensor per mask")
    if kernel is None and defocus is not None:
        kernel = defocus_kernel(u.shape[1], u.shape[0], defocus)
    measurements = []
    for i, (mask, clean) in enumerate(zip(masks, clean_intensities(u, masks, truncation, kernel))):
        sp = sensors[i]
        if sp is None:
            measurements.append(Measurement(mask, clean, clean=clean))
            continue
        noisy, codes, fw = apply_sensor(clean, sp, measurement_stream(sp.seed, i))
        measurements.append(
            Measurement(
                mask, noisy, clean=clean, codes=codes, full_well=fw, snr_db=snr_of(clean, noisy), sensor=sp
            )
        )
    return MeasurementSet(measurements, sensors[0], truncation, defocus, kernel)


def centered(y):
    """Convenience view of an intensity image with DC at the center."""
    return fftshift_center(y)

"""Binary noise masks and their spectral analysis.

Green and blue masks come from the same multiscale error-diffusion engine:
dots are placed one at a time at the unprocessed pixel with the largest
accumulated value, and the quantization error ``value - 1`` is spread over the
unprocessed neighbours selected by a diffusion kernel. A ring-shaped kernel
(outer radius ``sqrt(2) * r1``) produces clustered, green-noise dots whose
cluster area is roughly ``pi * r1**2 * sigma``; a small disk produces
dispersed, blue-noise dots. White masks are an exact-count uniform shuffle.
"""

from dataclasses import dataclass, field
import math

import numba
import numpy as np

from greennoise.core import (
    InvalidInputError,
    RandomStream,
    centered_frequency_indices,
    dft2,
    fftshift_center,
)

KINDS = ("white", "blue", "green")
BLUE_DISK_RADIUS = 1.5
HIGH_FREQ_EDGE = 0.8


@dataclass(frozen=True)
class DiffusionKernel:
    """Sparse isotropic diffusion kernel.

    ``offsets`` is an ``(K, 2)`` integer array of ``(row, col)`` displacements
    and ``weights`` the matching nonnegative weights, summing to one.
    """

    r1: float
    r2: float
    offsets: np.ndarray
    weights: np.ndarray

    def as_dict(self):
        return {(int(m), int(n)): float(w) for (m, n), w in zip(self.offsets, self.weights)}


@dataclass(frozen=True)
class BinaryMask:
    bits: np.ndarray
    kind: str
    sigma: float
    seed: int
    r1: float | None = None

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2 or bits.size == 0:
            raise InvalidInputError(f"mask must be a non-empty 2-D array, got shape {bits.shape}")
        if not np.all((bits == 0) | (bits == 1)):
            raise InvalidInputError("mask values must be 0 or 1")
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown mask kind {self.kind!r}")
        bits = bits.astype(np.uint8)
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def width(self):
        return self.bits.shape[1]

    @property
    def shape(self):
        return self.bits.shape

    def metadata(self):
        return {"kind": self.kind, "sigma": self.sigma, "r1": self.r1, "seed": self.seed}


@dataclass(frozen=True)
class SpectralProfile:
    """Radially averaged power spectrum of a mask (DC excluded)."""

    bin_centers: np.ndarray
    mean_power: np.ndarray
    eta: float
    counts: np.ndarray = field(repr=False, default=None)

    def peak_bin(self):
        return int(np.argmax(self.mean_power))


def _kernel_from_radii(r1, r2):
    reach = int(math.floor(r2))
    offsets = []
    for m in range(-reach, reach + 1):
        for n in range(-reach, reach + 1):
            d = math.hypot(m, n)
            if r1 < d <= r2 and d > 0:
                offsets.append((m, n))
    offsets = np.array(offsets, dtype=np.int64).reshape(-1, 2)
    if len(offsets) == 0:
        raise InvalidInputError(f"diffusion kernel with r1={r1}, r2={r2} has empty support")
    # Uniform ring height 1/((r2^2 - r1^2) pi), then renormalized to sum to one.
    raw = np.full(len(offsets), 1.0 / ((r2**2 - r1**2) * math.pi))
    weights = raw / raw.sum()
    return DiffusionKernel(float(r1), float(r2), offsets, weights)


def ring_filter(r1):
    """Ring-shaped diffusion kernel with inner radius ``r1`` and outer ``sqrt(2) * r1``.

    ``r1 = 0`` degenerates to a disk of radius ``sqrt(2)``. For
    ``r1 < 1/sqrt(2)`` the ring holds no lattice offsets, so ``r2`` is widened
    to 1 (the four nearest neighbours).
    """
    if not r1 >= 0:
        raise InvalidInputError(f"r1 must be nonnegative, got {r1}")
    r2 = math.sqrt(2.0) * max(r1, 1.0) if r1 == 0 else math.sqrt(2.0) * r1
    if 0 < r1 < 1 and r2 < 1:
        r2 = 1.0
    return _kernel_from_radii(float(r1), r2)


def disk_filter(radius):
    """Disk diffusion kernel covering ``0 < |offset| <= radius``."""
    if not radius >= 1:
        raise InvalidInputError(f"disk radius must be at least 1, got {radius}")
    return _kernel_from_radii(0.0, float(radius))


@numba.njit(cache=True)
def _better(values, processed, keys, i, j):
    # True if leaf i beats leaf j; processed/padding leaves always lose.
    if j < 0 or processed[j]:
        return i >= 0 and not processed[i]
    if i < 0 or processed[i]:
        return False
    if values[i] != values[j]:
        return values[i] > values[j]
    return keys[i] < keys[j]


@numba.njit(cache=True)
def _refresh(tree, size, values, processed, keys, leaf):
    node = (leaf + size) // 2
    while node >= 1:
        a = tree[2 * node]
        b = tree[2 * node + 1]
        tree[node] = a if _better(values, processed, keys, a, b) else b
        node //= 2


@numba.njit(cache=True)
def _med_core(height, width, sigma, d_row, d_col, weights, keys, target):
    npix = height * width
    values = np.full(npix, sigma)
    processed = np.zeros(npix, dtype=np.bool_)
    out = np.zeros(npix, dtype=np.uint8)

    size = 1
    while size < npix:
        size *= 2
    # Max pyramid: tree[size + i] is leaf i, inner nodes hold the winning leaf.
    tree = np.full(2 * size, -1, dtype=np.int64)
    for i in range(npix):
        tree[size + i] = i
    for node in range(size - 1, 0, -1):
        a = tree[2 * node]
        b = tree[2 * node + 1]
        tree[node] = a if _better(values, processed, keys, a, b) else b

    k = len(weights)
    admissible = np.empty(k, dtype=np.int64)
    placed = 0
    discarded = 0.0
    while placed < target:
        p = tree[1]
        if p < 0 or processed[p] or values[p] <= 0.0:
            break
        processed[p] = True
        out[p] = 1
        placed += 1
        err = values[p] - 1.0
        _refresh(tree, size, values, processed, keys, p)

        r = p // width
        c = p - r * width
        count = 0
        wsum = 0.0
        for t in range(k):
            rr = r + d_row[t]
            cc = c + d_col[t]
            if rr < 0 or rr >= height or cc < 0 or cc >= width:
                continue
            q = rr * width + cc
            if processed[q]:
                continue
            admissible[count] = t
            count += 1
            wsum += weights[t]
        if count == 0:
            discarded += err
            continue
        for s in range(count):
            t = admissible[s]
            q = (r + d_row[t]) * width + (c + d_col[t])
            values[q] += err * weights[t] / wsum
            _refresh(tree, size, values, processed, keys, q)
    return out.reshape(height, width), placed, discarded


def _check_dims(width, height):
    if int(width) != width or int(height) != height or width < 1 or height < 1:
        raise InvalidInputError(f"invalid mask dimensions {width}x{height}")


def med_generate(width, height, sigma, kernel, seed, stream_id="med"):
    """Run the error-diffusion engine with an arbitrary kernel.

    Returns ``(bits, placed, discarded_error)``. Ties between equal values are
    broken by a per-pixel random priority drawn from ``RandomStream(seed,
    stream_id)``.
    """
    _check_dims(width, height)
    npix = width * height
    keys = RandomStream(seed, stream_id).generator.permutation(npix).astype(np.int64)
    target = int(math.floor(sigma * npix + 0.5))
    return _med_core(
        int(height),
        int(width),
        float(sigma),
        np.ascontiguousarray(kernel.offsets[:, 0]),
        np.ascontiguousarray(kernel.offsets[:, 1]),
        np.ascontiguousarray(kernel.weights, dtype=np.float64),
        keys,
        target,
    )


def constant_mask(width, height, value, kind="white", seed=0, r1=None):
    _check_dims(width, height)
    bits = np.full((height, width), int(value), dtype=np.uint8)
    return BinaryMask(bits, kind, float(value), int(seed), r1)


def fmedg_generate(width, height, sigma, r1, seed):
    """Green-noise mask via ring-kernel multiscale error diffusion."""
    _check_dims(width, height)
    if width * height < 4:
        raise InvalidInputError("mask needs at least 4 pixels")
    if not 0 < sigma < 1:
        raise InvalidInputError(f"sigma must lie in (0, 1), got {sigma}; use constant_mask for 0 or 1")
    if not r1 >= 0.5:
        raise InvalidInputError(f"r1 must be at least 0.5, got {r1}")
    bits, _, _ = med_generate(width, height, sigma, ring_filter(r1), seed, "fmedg")
    return BinaryMask(bits, "green", float(sigma), int(seed), float(r1))


def blue_noise_mask(width, height, sigma, seed):
    """Blue-noise mask: the same engine with a radius-1.5 disk kernel."""
    _check_dims(width, height)
    if width * height < 4:
        raise InvalidInputError("mask needs at least 4 pixels")
    if not 0 < sigma < 1:
        raise InvalidInputError(f"sigma must lie in (0, 1), got {sigma}")
    bits, _, _ = med_generate(width, height, sigma, disk_filter(BLUE_DISK_RADIUS), seed, "blue")
    return BinaryMask(bits, "blue", float(sigma), int(seed), 0.0)


def white_noise_mask(width, height, sigma, seed):
    """Exactly ``round(sigma * W * H)`` ones at uniformly shuffled positions."""
    _check_dims(width, height)
    if not 0 <= sigma <= 1:
        raise InvalidInputError(f"sigma must lie in [0, 1], got {sigma}")
    npix = width * height
    ones = int(math.floor(sigma * npix + 0.5))
    flat = np.zeros(npix, dtype=np.uint8)
    flat[:ones] = 1
    RandomStream(seed, "white").generator.shuffle(flat)
    return BinaryMask(flat.reshape(height, width), "white", float(sigma), int(seed))


def generate_mask(kind, width, height, sigma, seed, r1=None):
    """Dispatch to the generator for ``kind``; sigma 0 or 1 gives a constant mask."""
    if kind not in KINDS:
        raise InvalidInputError(f"unknown mask kind {kind!r}")
    if sigma in (0, 1) or sigma == 0.0 or sigma == 1.0:
        return constant_mask(width, height, sigma, kind, seed, r1 if kind == "green" else None)
    if kind == "white":
        return white_noise_mask(width, height, sigma, seed)
    if kind == "blue":
        return blue_noise_mask(width, height, sigma, seed)
    if r1 is None:
        raise InvalidInputError("green masks need r1")
    return fmedg_generate(width, height, sigma, r1, seed)


def _bits(mask):
    return mask.bits if isinstance(mask, BinaryMask) else np.asarray(mask)


def power_spectrum(mask):
    """Centered power spectrum ``|dft2(bits)|**2``."""
    return fftshift_center(np.abs(dft2(_bits(mask).astype(np.float64))) ** 2)


def high_freq_band(height, width, edge=HIGH_FREQ_EDGE):
    """Boolean mask of centered bins with ``max(|m_c|, |n_c|) > edge * (N // 2)``.

    For non-square grids each axis is scaled by its own half-size.
    """
    m, n = centered_frequency_indices(height, width)
    return (np.abs(m) > edge * (height // 2)) | (np.abs(n) > edge * (width // 2))


def high_freq_ratio(mask):
    """Fraction of spectral energy in the outer square band (DC included in the total)."""
    power = power_spectrum(mask)
    total = power.sum()
    if total == 0:
        return 0.0
    band = high_freq_band(*power.shape)
    return float(power[band].sum() / total)


def radial_power_spectrum(mask, bins=32):
    """Radially averaged power spectrum with ``bins`` equal-width bins on [0, sqrt(2)/2].

    Radial frequency is measured in cycles/pixel. DC is excluded; empty bins
    report zero power.
    """
    if bins < 4:
        raise InvalidInputError("need at least 4 bins")
    power = power_spectrum(mask)
    h, w = power.shape
    m, n = centered_frequency_indices(h, w)
    radius = np.hypot(m / h, n / w)
    edges = np.linspace(0.0, math.sqrt(2.0) / 2.0, bins + 1)
    idx = np.clip(np.digitize(radius, edges) - 1, 0, bins - 1)
    keep = radius > 0
    sums = np.bincount(idx[keep], weights=power[keep], minlength=bins)
    counts = np.bincount(idx[keep], minlength=bins)
    mean = np.divide(sums, counts, out=np.zeros(bins), where=counts > 0)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return SpectralProfile(centers, mean, high_freq_ratio(mask), counts)


def sector_powers(mask, profile_bin, bins=32, sectors=8):
    """Mean power inside one radial bin split into ``sectors`` angular sectors."""
    power = power_spectrum(mask)
    h, w = power.shape
    m, n = centered_frequency_indices(h, w)
    radius = np.hypot(m / h, n / w)
    edges = np.linspace(0.0, math.sqrt(2.0) / 2.0, bins + 1)
    idx = np.clip(np.digitize(radius, edges) - 1, 0, bins - 1)
    angle = np.mod(np.arctan2(m, n), 2 * math.pi)
    sector = np.minimum((angle / (2 * math.pi) * sectors).astype(int), sectors - 1)
    sel = (idx == profile_bin) & (radius > 0)
    sums = np.bincount(sector[sel], weights=power[sel], minlength=sectors)
    counts = np.bincount(sector[sel], minlength=sectors)
    return np.divide(sums, counts, out=np.zeros(sectors), where=counts > 0)

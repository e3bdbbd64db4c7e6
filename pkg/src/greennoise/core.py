"""Shared numeric conventions.

Images are plain 2-D numpy arrays, row-major with the origin at the top-left.
Complex images use ``complex128``; intensity images use ``float64``. The DFT is
orthonormal in both directions, so ``dft2`` is unitary and ``idft2`` is its
adjoint and inverse. Frequency index (0, 0) is DC before shifting; after
``fftshift_center`` DC sits at ``(H // 2, W // 2)``.
"""

import hashlib

import numpy as np

CONVENTION_VERSION = 1


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's precondition."""


class NumericalFailure(RuntimeError):
    """Raised when an iterative numerical routine breaks down."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


def as_complex_image(img):
    """Validate and return ``img`` as a finite 2-D complex array."""
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    arr = arr.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("image contains NaN or Inf")
    return arr


def as_real_image(img):
    """Validate and return ``img`` as a finite, nonnegative 2-D float array."""
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if np.iscomplexobj(arr):
        raise InvalidInputError("intensity image must be real")
    arr = arr.astype(np.float64, copy=False)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("image contains NaN or Inf")
    if np.any(arr < 0):
        raise InvalidInputError("intensity image has negative values")
    return arr


def dft2(img):
    """Orthonormal 2-D DFT (``norm="ortho"``)."""
    return np.fft.fft2(as_complex_image(img), norm="ortho")


def idft2(img):
    """Inverse of :func:`dft2`; also its adjoint."""
    return np.fft.ifft2(as_complex_image(img), norm="ortho")


def fftshift_center(img):
    """Move index (0, 0) to ``(H // 2, W // 2)``."""
    return np.fft.fftshift(np.asarray(img))


def unshift(img):
    """Inverse of :func:`fftshift_center` (also correct for odd sizes)."""
    return np.fft.ifftshift(np.asarray(img))


def centered_frequency_indices(height, width):
    """Signed integer frequency indices of the centered spectrum grid.

    Returns ``(m_c, n_c)`` arrays of shape ``(height, width)`` where entry
    ``[r, c]`` gives the signed frequency of the shifted coefficient at that
    position, i.e. ``r - height // 2`` and ``c - width // 2``.
    """
    m = np.arange(height) - height // 2
    n = np.arange(width) - width // 2
    return np.meshgrid(m, n, indexing="ij")


def _label_key(stream_id):
    digest = hashlib.sha256(stream_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class RandomStream:
    """Seeded, labelled random source.

    Backed by numpy's Philox-4x64 counter-based bit generator. The 128-bit key
    is ``(seed mod 2**64, first 8 bytes of sha256(stream_id) as little-endian
    uint64)`` and the counter starts at zero, so a given ``(seed, stream_id)``
    pair yields the same sequence everywhere numpy's Philox and the
    distribution methods used here are available.
    """

    def __init__(self, seed, stream_id=""):
        self.seed = int(seed)
        self.stream_id = str(stream_id)
        key = np.array([self.seed % 2**64, _label_key(self.stream_id)], dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def child(self, label):
        """Independent stream derived from this one's seed and a sub-label."""
        return RandomStream(self.seed, f"{self.stream_id}/{label}")

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id!r})"

"""Built-in complex test objects."""

from importlib import resources

import numpy as np

from greennoise.core import InvalidInputError, RandomStream
from greennoise import imageio

BUILTIN_SIZES = (64, 200)
TARGETS = ("cameraman-barbara", "uniform", "random", "file")


def _asset(name, size):
    if size not in BUILTIN_SIZES:
        raise InvalidInputError(f"built-in images exist only at sizes {BUILTIN_SIZES}, got {size}")
    ref = resources.files("greennoise") / "assets" / f"{name}_{size}.pgm"
    with resources.as_file(ref) as path:
        return imageio.read_pgm(path).astype(np.float64)


def cameraman_barbara(size=64):
    """Cameraman amplitude in [0, 1] with Barbara phase in [-pi/2, pi/2]."""
    amp = _asset("cameraman", size) / 255.0
    phase = (_asset("barbara", size) / 255.0 - 0.5) * np.pi
    return amp * np.exp(1j * phase)


def uniform(size=64):
    return np.ones((size, size), dtype=np.complex128)


def random_complex(size=64, seed=0):
    """I.i.d. standard complex Gaussian target."""
    gen = RandomStream(seed, "target").generator
    return (gen.normal(size=(size, size)) + 1j * gen.normal(size=(size, size))) / np.sqrt(2)


def from_files(amplitude_path, phase_path=None, phase_range=np.pi / 2):
    """Object from an amplitude image and optional phase image (PGM, scaled to full range)."""
    amp = imageio.read_pgm(amplitude_path).astype(np.float64)
    amp /= max(amp.max(), 1.0)
    if phase_path is None:
        return amp.astype(np.complex128)
    ph = imageio.read_pgm(phase_path).astype(np.float64)
    if ph.shape != amp.shape:
        raise InvalidInputError("amplitude and phase images differ in size")
    top = max(ph.max(), 1.0)
    return amp * np.exp(1j * (ph / top - 0.5) * 2 * phase_range)


def load_target(kind, size=64, seed=0, amplitude_path=None, phase_path=None):
    if kind == "cameraman-barbara":
        return cameraman_barbara(size)
    if kind == "uniform":
        return uniform(size)
    if kind == "random":
        return random_complex(size, seed)
    if kind == "file":
        if amplitude_path is None:
            raise InvalidInputError("target kind 'file' needs an amplitude path")
        return from_files(amplitude_path, phase_path)
    raise InvalidInputError(f"unknown target {kind!r}; expected one of {TARGETS}")

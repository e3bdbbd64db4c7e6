"""Reconstruction quality metrics."""

from dataclasses import dataclass
import math

import numpy as np

from greennoise.core import InvalidInputError

FLOOR_DB = -120.0
CAP_DB = 120.0


class AlignmentUndefined(InvalidInputError):
    """Raised when the estimate is orthogonal to the reference."""


class DegeneratePhaseReference(InvalidInputError):
    """Raised when the reference phase is identically zero."""

    def __init__(self, message, unnormalized):
        super().__init__(message)
        self.unnormalized = unnormalized


@dataclass
class EvalReport:
    sse_amplitude: float
    sse_phase: float
    aligned: np.ndarray
    floor_applied: bool = False
    profile_mse: float | None = None
    phase_aligned: bool = True
    phase_degenerate: bool = False

    def to_dict(self):
        return {
            "sse_amplitude_db": self.sse_amplitude,
            "sse_phase_db": self.sse_phase,
            "profile_mse": self.profile_mse,
            "floor_applied": self.floor_applied,
            "phase_aligned": self.phase_aligned,
            "phase_degenerate": self.phase_degenerate,
        }


def _pair(ref, est):
    ref = np.asarray(ref, dtype=np.complex128)
    est = np.asarray(est, dtype=np.complex128)
    if ref.shape != est.shape:
        raise InvalidInputError(f"shape mismatch: {ref.shape} vs {est.shape}")
    return ref, est


def global_phase(est, ref):
    """Angle ``theta`` minimizing ``||est * exp(-1j theta) - ref||``."""
    ref, est = _pair(ref, est)
    inner = np.vdot(ref, est)  # sum conj(ref) * est
    if abs(inner) == 0:
        raise AlignmentUndefined("estimate is orthogonal to the reference; global phase undefined")
    return float(np.angle(inner))


def align_global_phase(est, ref):
    """Remove the global phase of ``est`` relative to ``ref``."""
    theta = global_phase(est, ref)
    return np.asarray(est, dtype=np.complex128) * np.exp(-1j * theta)


def _db(num, den, floor=FLOOR_DB):
    if num == 0:
        return floor, True
    val = 10 * math.log10(num / den)
    if val < floor:
        return floor, True
    return min(val, CAP_DB), False


def sse_amplitude(ref, est, return_floor=False):
    """``10 log10(sum (|ref| - |est|)^2 / sum |ref|^2)`` floored at -120 dB."""
    ref, est = _pair(ref, est)
    den = float(np.sum(np.abs(ref) ** 2))
    if den == 0:
        raise InvalidInputError("reference amplitude is identically zero")
    val, floored = _db(float(np.sum((np.abs(ref) - np.abs(est)) ** 2)), den)
    return (val, floored) if return_floor else val


def wrap_phase(x):
    """Wrap angles to (-pi, pi]."""
    w = np.mod(np.asarray(x, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def sse_phase(ref, est, return_floor=False):
    """``10 log10(sum wrap(ang ref - ang est)^2 / sum (ang ref)^2)`` floored at -120 dB.

    ``est`` is expected to be phase-aligned already. A reference whose phase
    is zero everywhere raises :class:`DegeneratePhaseReference` carrying the
    unnormalized squared error.
    """
    ref, est = _pair(ref, est)
    err = float(np.sum(wrap_phase(np.angle(ref) - np.angle(est)) ** 2))
    den = float(np.sum(np.angle(ref) ** 2))
    if den == 0:
        raise DegeneratePhaseReference("reference phase is identically zero", err)
    val, floored = _db(err, den)
    return (val, floored) if return_floor else val


def profile_mse(ref, est, row):
    """Mean squared difference along one row of two real images."""
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise InvalidInputError("profile_mse needs matching shapes")
    if not 0 <= row < ref.shape[0]:
        raise InvalidInputError(f"row {row} out of range 0..{ref.shape[0] - 1}")
    return float(np.mean((ref[row] - est[row]) ** 2))


def evaluate(ref, est, align=True, profile_row=None):
    """Full report: optional global-phase alignment, both SSEs and the profile MSE."""
    ref, est = _pair(ref, est)
    aligned = est
    did_align = False
    if align:
        try:
            aligned = align_global_phase(est, ref)
            did_align = True
        except AlignmentUndefined:
            aligned = est
    amp, f1 = sse_amplitude(ref, aligned, return_floor=True)
    degenerate = False
    try:
        ph, f2 = sse_phase(ref, aligned, return_floor=True)
    except DegeneratePhaseReference as exc:
        degenerate = True
        ph, f2 = exc.unnormalized, False
    mse = None
    if profile_row is not None:
        mse = profile_mse(np.abs(ref), np.abs(aligned), profile_row)
    return EvalReport(amp, ph, aligned, f1 or f2, mse, did_align, degenerate)

"""TV-regularized Poisson MAP phase retrieval by ADMM.

Splitting used here::

    z_i = dft2(c_i * u)     (Fourier block, penalty rho_fourier)
    w   = grad(u)           (TV block, penalty rho_tv)

with ``c_i = mask_i * kernel``. Each iteration performs a closed-form
z-step (:func:`fidelity_prox` on measured bins), a soft-threshold w-step, a
conjugate-gradient u-step on the normal equations and scaled dual ascent.
By default bins removed by frequency truncation carry no data, so their z-step
is the identity (``truncated_bins="ignore"``). With ``truncated_bins="zero"``
the zeroed bins are fitted as if the camera had measured zero there, which is
the model mismatch a band-limited detector imposes on a non-band-limited mask.
"""

from dataclasses import dataclass, field, asdict
import csv
import logging

import numpy as np

from greennoise.core import NumericalFailure, InvalidInputError, RandomStream, dft2, idft2
from greennoise.optics import modulation

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12
INIT_MODES = ("flat", "seeded-random")
TRUNCATED_BIN_MODES = ("ignore", "zero")


@dataclass
class SolverConfig:
    alpha: float = 0.1
    rho_fourier: float = 1.0
    rho_tv: float = 1.0
    max_iters: int = 300
    rel_tol: float = 1e-6
    cg_iters: int = 10
    cg_tol: float = 1e-8
    init_mode: str = "flat"
    seed: int = 0
    epsilon: float = 1e-8
    truncated_bins: str = "ignore"

    def __post_init__(self):
        if self.alpha < 0:
            raise InvalidInputError("alpha must be nonnegative")
        for name in ("rho_fourier", "rho_tv", "rel_tol", "cg_tol", "epsilon"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        for name in ("max_iters", "cg_iters"):
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"{name} must be at least 1")
        if self.init_mode not in INIT_MODES:
            raise InvalidInputError(f"init_mode must be one of {INIT_MODES}")
        if self.truncated_bins not in TRUNCATED_BIN_MODES:
            raise InvalidInputError(f"truncated_bins must be one of {TRUNCATED_BIN_MODES}")

    def to_dict(self):
        return asdict(self)


@dataclass
class SolverTrace:
    objective: list = field(default_factory=list)
    res_fourier: list = field(default_factory=list)
    res_tv: list = field(default_factory=list)
    rel_change: list = field(default_factory=list)
    final: np.ndarray | None = None
    converged: bool = False

    def __len__(self):
        return len(self.objective)

    def rows(self):
        for k in range(len(self.objective)):
            yield k + 1, self.objective[k], self.res_fourier[k], self.res_tv[k], self.rel_change[k]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iter", "objective", "res_F", "res_TV", "rel_change"])
            for it, obj, rf, rt, rc in self.rows():
                writer.writerow([it, repr(float(obj)), repr(float(rf)), repr(float(rt)), repr(float(rc))])


# -- finite differences --------------------------------------------------------


def grad(u):
    """Forward differences along rows and columns; zero across the far edge."""
    g = np.zeros((2,) + u.shape, dtype=u.dtype)
    g[0, :-1, :] = u[1:, :] - u[:-1, :]
    g[1, :, :-1] = u[:, 1:] - u[:, :-1]
    return g


def grad_adjoint(g):
    """Adjoint of :func:`grad` (a negative divergence)."""
    gy, gx = g
    out = np.zeros(gy.shape, dtype=g.dtype)
    out[:-1, :] -= gy[:-1, :]
    out[1:, :] += gy[:-1, :]
    out[:, :-1] -= gx[:, :-1]
    out[:, 1:] += gx[:, :-1]
    return out


def tv_norm(u):
    """Anisotropic TV of real and imaginary parts, summed."""
    g = grad(u)
    return float(np.abs(g.real).sum() + np.abs(g.imag).sum())


# -- proximal pieces -----------------------------------------------------------


def fidelity_prox(v, y, rho):
    """Minimizer of ``1/2 (|z|^2 - y log |z|^2) + rho/2 |z - v|^2`` over complex z.

    The magnitude solves ``(1 + rho) a^2 - rho |v| a - y = 0``; the phase is
    that of ``v`` (zero where ``v == 0``). Works elementwise on arrays.
    """
    v = np.asarray(v, dtype=np.complex128)
    y = np.asarray(y, dtype=np.float64)
    mag = np.abs(v)
    a = (rho * mag + np.sqrt((rho * mag) ** 2 + 4 * (1 + rho) * y)) / (2 * (1 + rho))
    phase = np.divide(v, mag, out=np.ones_like(v), where=mag > 0)
    out = a * phase
    return out if out.ndim else complex(out)


def tv_shrink(w, threshold):
    """Soft threshold ``sign(w) * max(|w| - t, 0)``; complex input is shrunk per part."""
    w = np.asarray(w)
    if np.iscomplexobj(w):
        return tv_shrink(w.real, threshold) + 1j * tv_shrink(w.imag, threshold)
    out = np.sign(w) * np.maximum(np.abs(w) - threshold, 0.0)
    return out if out.ndim else float(out)


# -- problem setup -------------------------------------------------------------


class _Problem:
    """Precomputed per-measurement quantities shared by objective and solver."""

    def __init__(self, ms, truncated_bins="ignore"):
        self.shape = ms.shape
        band = ms.kept_band()
        self.keep = np.ones(ms.shape, bool) if truncated_bins == "zero" else band
        self.c = [modulation(m.mask, ms.kernel) for m in ms.measurements]
        self.y = [np.where(band, m.intensity, 0.0) for m in ms.measurements]
        self.cabs2 = np.sum([np.abs(c) ** 2 for c in self.c], axis=0)


def _problem(ms, truncated_bins="ignore"):
    if ms is None:
        raise InvalidInputError("missing measurement set")
    return ms if isinstance(ms, _Problem) else _Problem(ms, truncated_bins)


def _check_shape(u, prob):
    u = np.asarray(u, dtype=np.complex128)
    if u.shape != prob.shape:
        raise InvalidInputError(f"estimate shape {u.shape} does not match measurements {prob.shape}")
    return u


def fidelity(u, ms, truncated_bins="ignore"):
    """Poisson data term ``1/2 sum_i sum_kept (g - y log g)`` with ``g`` floored in the log."""
    prob = _problem(ms, truncated_bins)
    u = _check_shape(u, prob)
    total = 0.0
    for c, y in zip(prob.c, prob.y):
        g = np.abs(dft2(c * u)) ** 2
        term = g - y * np.log(np.maximum(g, LOG_FLOOR))
        total += term[prob.keep].sum()
    return 0.5 * float(total)


def objective(u, ms, alpha, truncated_bins="ignore"):
    """``alpha * TV(u) + fidelity(u)``."""
    prob = _problem(ms, truncated_bins)
    return alpha * tv_norm(_check_shape(u, prob)) + fidelity(u, prob)


def gradient_fidelity(u, ms, truncated_bins="ignore"):
    """Gradient of :func:`fidelity` w.r.t. real and imaginary parts (packed as Re + 1j Im)."""
    prob = _problem(ms, truncated_bins)
    u = _check_shape(u, prob)
    out = np.zeros(prob.shape, dtype=np.complex128)
    for c, y in zip(prob.c, prob.y):
        z = dft2(c * u)
        g = np.abs(z) ** 2
        factor = np.where(prob.keep, 1.0 - y / np.maximum(g, LOG_FLOOR), 0.0)
        out += np.conj(c) * idft2(factor * z)
    return out


# -- u-step --------------------------------------------------------------------


def normal_operator(u, prob, config, use_tv=True):
    out = (config.rho_fourier * prob.cabs2 + config.epsilon) * u
    if use_tv:
        out = out + config.rho_tv * grad_adjoint(grad(u))
    return out


def normal_rhs(z, lam, w, mu, prob, config, use_tv=True):
    rhs = np.zeros(prob.shape, dtype=np.complex128)
    for c, zi, li in zip(prob.c, z, lam):
        rhs += np.conj(c) * idft2(zi - li)
    rhs *= config.rho_fourier
    if use_tv:
        rhs += config.rho_tv * grad_adjoint(w - mu)
    return rhs


def conjugate_gradient(apply_a, b, x0, iters, tol, history=None):
    """Plain CG for a Hermitian positive definite operator.

    Stops after ``iters`` steps or when ``||r|| < tol * max(||b||, tiny)``.
    Three consecutive residual increases raise :class:`NumericalFailure`.
    """
    x = x0.copy()
    r = b - apply_a(x)
    p = r.copy()
    rs = np.vdot(r, r).real
    bnorm = max(np.sqrt(np.vdot(b, b).real), np.finfo(float).tiny)
    if history is not None:
        history.append(np.sqrt(rs))
    growth = 0
    prev = np.sqrt(rs)
    for k in range(iters):
        if np.sqrt(rs) < tol * bnorm:
            break
        ap = apply_a(p)
        denom = np.vdot(p, ap).real
        if denom <= 0:
            raise NumericalFailure(f"CG lost positive definiteness at step {k}", k)
        step = rs / denom
        x += step * p
        r -= step * ap
        rs_new = np.vdot(r, r).real
        res = np.sqrt(rs_new)
        if history is not None:
            history.append(res)
        growth = growth + 1 if res > prev else 0
        if growth >= 3 or not np.isfinite(res):
            raise NumericalFailure(f"CG residual grew for 3 consecutive steps at step {k}", k)
        prev = res
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def u_update(z, w, lam, mu, ms, config, u0=None, history=None, use_tv=True):
    """Approximately minimize the u-subproblem by CG on its normal equations.

    Minimizes ``sum_i rho_F/2 ||dft2(c_i u) - z_i + lam_i||^2
    + rho_TV/2 ||grad u - w + mu||^2 + eps/2 ||u||^2``.
    """
    prob = _problem(ms)
    rhs = normal_rhs(z, lam, w, mu, prob, config, use_tv)
    x0 = np.zeros(prob.shape, dtype=np.complex128) if u0 is None else np.asarray(u0, dtype=np.complex128)
    return conjugate_gradient(
        lambda v: normal_operator(v, prob, config, use_tv),
        rhs,
        x0,
        config.cg_iters,
        config.cg_tol,
        history,
    )


# -- driver --------------------------------------------------------------------


def initial_estimate(ms, config):
    """Flat zero-phase start whose energy matches the measured kept-band energy."""
    prob = _problem(ms)
    energy = sum(float(y.sum()) for y in prob.y)
    weight = float(sum(np.sum(np.abs(c) ** 2 * 1.0) for c in prob.c))
    amp = np.sqrt(energy / weight) if weight > 0 else 0.0
    if config.init_mode == "flat":
        return np.full(prob.shape, amp, dtype=np.complex128)
    gen = RandomStream(config.seed, "solver-init").generator
    phase = gen.uniform(-np.pi, np.pi, size=prob.shape)
    mag = gen.uniform(0.0, 2.0, size=prob.shape)
    return amp * mag * np.exp(1j * phase)


def solve_tv_map(ms, config=None, u0=None, callback=None):
    """Run ADMM on the TV-MAP objective; returns ``(u, trace)``."""
    config = config or SolverConfig()
    prob = _problem(ms, config.truncated_bins)
    use_tv = config.alpha > 0
    u = initial_estimate(prob, config) if u0 is None else np.array(u0, dtype=np.complex128)
    lam = [np.zeros(prob.shape, dtype=np.complex128) for _ in prob.c]
    z = [dft2(c * u) for c in prob.c]
    mu = np.zeros((2,) + prob.shape, dtype=np.complex128)
    w = grad(u)
    rho_f = config.rho_fourier
    trace = SolverTrace()

    for it in range(1, config.max_iters + 1):
        fz = [dft2(c * u) for c in prob.c]
        for i, (v0, y) in enumerate(zip(fz, prob.y)):
            v = v0 + lam[i]
            z[i] = np.where(prob.keep, fidelity_prox(v, y, rho_f), v)
        if use_tv:
            w = tv_shrink(grad(u) + mu, config.alpha / config.rho_tv)
        u_prev = u
        try:
            u = u_update(z, w, lam, mu, prob, config, u0=u, use_tv=use_tv)
        except NumericalFailure as exc:
            raise NumericalFailure(f"ADMM iteration {it}: {exc}", it) from exc
        fz = [dft2(c * u) for c in prob.c]
        res_f2 = 0.0
        for i in range(len(lam)):
            diff = fz[i] - z[i]
            lam[i] += diff
            res_f2 += np.vdot(diff, diff).real
        res_tv = 0.0
        if use_tv:
            gu = grad(u)
            diff = gu - w
            mu += diff
            res_tv = float(np.sqrt(np.vdot(diff, diff).real))
        unorm = np.linalg.norm(u)
        change = float(np.linalg.norm(u - u_prev) / unorm) if unorm > 0 else 0.0
        obj = objective(u, prob, config.alpha)
        if not np.isfinite(obj):
            raise NumericalFailure(f"objective became non-finite at iteration {it}", it)
        trace.objective.append(obj)
        trace.res_fourier.append(float(np.sqrt(res_f2)))
        trace.res_tv.append(res_tv)
        trace.rel_change.append(change)
        if callback is not None:
            callback(it, u, trace)
        if change < config.rel_tol:
            trace.converged = True
            break
    log.debug("ADMM stopped after %d iterations (converged=%s)", len(trace), trace.converged)
    trace.final = u
    return u, trace

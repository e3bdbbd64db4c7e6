"""Experiment pipeline shared by the CLI and the acceptance tests.

Everything here is a function of a resolved config dict (see
:mod:`greennoise.config`) and explicit seeds. Seeds are derived as follows:
replicate ``r`` of a run with ``experiment.seed = s`` uses base seed ``s + r``;
mask ``i`` of that replicate uses seed ``1000 * (s + r) + i``; the sensor noise
for measurement ``i`` uses stream ``sensor/i`` of the base seed.
"""

from concurrent.futures import ProcessPoolExecutor
import csv
import logging
import math
import os
from pathlib import Path

import numpy as np

from greennoise import config as cfgmod
from greennoise import imageio
from greennoise.core import CONVENTION_VERSION, InvalidInputError, NumericalFailure
from greennoise.maskgen import BinaryMask, generate_mask, high_freq_ratio, radial_power_spectrum
from greennoise.metrics import evaluate, wrap_phase, align_global_phase
from greennoise.optics import (
    DEFAULT_FULL_WELL_MARGIN,
    DefocusParams,
    Measurement,
    MeasurementSet,
    SensorParams,
    acquire,
    calibrate_photon_scale,
    calibrated_sensors,
    clean_intensities,
    defocus_kernel,
)
from greennoise.solver import SolverConfig, solve_tv_map
from greennoise.targets import load_target

log = logging.getLogger(__name__)

EVAL_COLUMNS = ["mask_kind", "sigma", "r1", "snr_db", "m", "sse_amp_db", "sse_phase_db"]
SWEEP_COLUMNS = EVAL_COLUMNS + ["repeats", "status", "message"]
KERNEL_COLUMNS = ["mask_kind", "m", "phase_profile_mse", "phase_mse", "sse_amp_db", "sse_phase_db"]


def mask_seed(base, index):
    return 1000 * int(base) + int(index)


def solver_config(cfg, alpha=None):
    return SolverConfig(
        alpha=cfg["solver.alpha"] if alpha is None else alpha,
        rho_fourier=cfg["solver.rho_fourier"],
        rho_tv=cfg["solver.rho_tv"],
        max_iters=cfg["solver.max_iters"],
        rel_tol=cfg["solver.rel_tol"],
        cg_iters=cfg["solver.cg_iters"],
        cg_tol=cfg["solver.cg_tol"],
        init_mode=cfg["solver.init_mode"],
        seed=cfg["experiment.seed"],
        epsilon=cfg["solver.epsilon"],
        truncated_bins=cfg["solver.truncated_bins"],
    )


def defocus_params(cfg):
    return DefocusParams(
        cfg["defocus.wavelength"], cfg["defocus.focal_length"], cfg["defocus.distance"], cfg["defocus.pitch"]
    )


def target(cfg):
    return load_target(
        cfg["target.kind"],
        cfg["target.size"],
        cfg["experiment.seed"],
        cfg["target.amplitude_file"],
        cfg["target.phase_file"],
    )


def make_masks(cfg, kind=None, sigma=None, r1=None, base_seed=None, count=None, size=None):
    kind = kind or cfg["mask.kind"]
    sigma = cfg["mask.sigma"] if sigma is None else sigma
    r1 = cfg["mask.r1"] if r1 is None else r1
    base = cfg["experiment.seed"] if base_seed is None else base_seed
    count = cfg["mask.count"] if count is None else count
    size = cfg["target.size"] if size is None else size
    return [generate_mask(kind, size, size, sigma, mask_seed(base, i), r1) for i in range(count)]


def base_sensor(cfg, seed, full_well=None):
    return SensorParams(
        photon_scale=cfg["sensor.photon_scale"] or 1.0,
        gaussian_sigma=cfg["sensor.read_noise"],
        bit_depth=cfg["sensor.bit_depth"],
        full_well=cfg["sensor.full_well"] if full_well is None else full_well,
        seed=seed,
    )


def sensors_for(cfg, clean, seed, snr_db="config"):
    """Per-measurement sensors: calibrated to the SNR target, fixed, or None (noiseless)."""
    if not cfg["sensor.enabled"]:
        return None
    snr_db = cfg["sensor.snr_db"] if snr_db == "config" else snr_db
    base = base_sensor(cfg, seed)
    if snr_db is None:
        return [base] * len(clean)
    return calibrated_sensors(clean, snr_db, base)


def shared_sensor(cfg, u, kernel, seed, snr_db=None):
    """One sensor calibrated on the reference cell, reused for every cell of a sweep.

    Photon scale is the joint calibration over the reference measurements;
    the full well (unless configured) is 1.2x their clean peak in photons, so
    cells that gather more light than the reference saturate.
    """
    snr_db = cfg["sensor.snr_db"] if snr_db is None else snr_db
    ref = make_masks(cfg, "green", cfg["sweep.reference_sigma"], cfg["sweep.reference_r1"], seed)
    clean = clean_intensities(u, ref, cfg["acquire.truncation"], kernel)
    base = base_sensor(cfg, seed)
    scale = calibrate_photon_scale(clean, snr_db, base) if snr_db is not None else base.photon_scale
    full_well = cfg["sensor.full_well"]
    if full_well is None:
        full_well = DEFAULT_FULL_WELL_MARGIN * max(float(c.max()) for c in clean) * scale
    return SensorParams(scale, base.gaussian_sigma, base.bit_depth, full_well, seed)


def simulate(cfg, kind=None, sigma=None, r1=None, snr_db="config", replicate=0, sensor=None, u=None):
    """Target, masks and measurements for one cell. Returns ``(truth, ms)``."""
    seed = cfg["experiment.seed"] + replicate
    u = target(cfg) if u is None else u
    kernel = defocus_kernel(u.shape[1], u.shape[0], defocus_params(cfg)) if cfg["defocus.enabled"] else None
    masks = make_masks(cfg, kind, sigma, r1, seed, size=u.shape[0])
    trunc = cfg["acquire.truncation"]
    if sensor is None:
        sensors = sensors_for(cfg, clean_intensities(u, masks, trunc, kernel), seed, snr_db)
    else:
        sensors = [sensor] * len(masks)
    ms = acquire(u, masks, sensors, trunc, kernel=kernel)
    if cfg["defocus.enabled"]:
        ms.defocus = defocus_params(cfg)
    return u, ms


def run_cell(cfg, kind=None, sigma=None, r1=None, snr_db="config", replicate=0, sensor=None):
    """Simulate, reconstruct and evaluate one configuration; returns a metrics dict."""
    truth, ms = simulate(cfg, kind, sigma, r1, snr_db, replicate, sensor)
    est, trace = solve_tv_map(ms, solver_config(cfg))
    report = evaluate(truth, est, align=cfg["eval.phase_align"])
    return {
        "sse_amp_db": report.sse_amplitude,
        "sse_phase_db": report.sse_phase,
        "iterations": len(trace),
        "snr_measured": [m.snr_db for m in ms.measurements],
    }


# -- persistence ---------------------------------------------------------------


def write_mask(path_stem, mask, bins=32):
    """Write ``stem.pbm``, ``stem.json`` sidecar and ``stem.spectrum.csv``; returns file list."""
    stem = Path(path_stem)
    imageio.write_pbm(stem.with_suffix(".pbm"), mask.bits)
    profile = radial_power_spectrum(mask, bins)
    side = dict(mask.metadata(), eta=profile.eta, width=mask.width, height=mask.height)
    imageio.write_json(stem.with_suffix(".json"), side)
    spec_path = stem.with_suffix(".spectrum.csv")
    with open(spec_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_center", "mean_power"])
        for c, p in zip(profile.bin_centers, profile.mean_power):
            writer.writerow([repr(float(c)), repr(float(p))])
    return [stem.with_suffix(".pbm"), stem.with_suffix(".json"), spec_path]


def read_mask(path_stem):
    stem = Path(path_stem)
    bits = imageio.read_pbm(stem.with_suffix(".pbm"))
    meta = imageio.read_json(stem.with_suffix(".json"))
    return BinaryMask(bits, meta["kind"], meta["sigma"], meta["seed"], meta.get("r1"))


def checksums(paths, root):
    root = Path(root)
    return {str(Path(p).relative_to(root)): imageio.sha256_file(p) for p in sorted(paths)}


def _manifest(command, cfg, derived, files, root):
    return {
        "command": command,
        "config": cfg,
        "derived": derived,
        "artifacts": checksums(files, root),
        "convention_version": CONVENTION_VERSION,
    }


def save_measurements(out, cfg, truth, ms):
    """Persist a measurement set as a directory with a manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    derived = {"measurements": []}
    for i, m in enumerate(ms.measurements):
        files += write_mask(out / f"mask_{i:03d}", m.mask, cfg["mask.spectrum_bins"])
        entry = {"index": i, "mask_seed": m.mask.seed, "eta": high_freq_ratio(m.mask)}
        if m.codes is not None:
            imageio.write_pgm(out / f"y_{i:03d}.pgm", m.codes, maxval=m.sensor.max_code)
            files.append(out / f"y_{i:03d}.pgm")
            entry.update(
                photon_scale=m.sensor.photon_scale,
                full_well=m.full_well,
                read_noise=m.sensor.gaussian_sigma,
                bit_depth=m.sensor.bit_depth,
                sensor_seed=m.sensor.seed,
                snr_db=m.snr_db,
            )
        else:
            imageio.write_float(out / f"y_{i:03d}.bin", m.intensity)
            files.append(out / f"y_{i:03d}.bin")
        derived["measurements"].append(entry)
    imageio.write_complex_image(out / "truth", truth)
    files += [out / "truth.json", out / "truth.amp.bin", out / "truth.phase.bin"]
    derived["truncation"] = ms.truncation
    derived["shape"] = list(ms.shape)
    imageio.write_json(out / "manifest.json", _manifest("simulate", cfg, derived, files, out))
    return out / "manifest.json"


def load_measurements(path):
    """Inverse of :func:`save_measurements`; returns ``(ms, truth, manifest)``."""
    path = Path(path)
    manifest = imageio.read_json(path / "manifest.json")
    cfg = cfgmod.resolve(manifest["config"])
    shape = tuple(manifest["derived"]["shape"])
    measurements = []
    for entry in manifest["derived"]["measurements"]:
        i = entry["index"]
        mask = read_mask(path / f"mask_{i:03d}")
        if "photon_scale" in entry:
            sensor = SensorParams(
                entry["photon_scale"], entry["read_noise"], entry["bit_depth"], entry["full_well"], entry["sensor_seed"]
            )
            codes = imageio.read_pgm(path / f"y_{i:03d}.pgm")
            intensity = codes.astype(np.float64) * (entry["full_well"] / sensor.max_code) / sensor.photon_scale
            measurements.append(
                Measurement(mask, intensity, codes=codes, full_well=entry["full_well"], snr_db=entry["snr_db"], sensor=sensor)
            )
        else:
            measurements.append(Measurement(mask, imageio.read_float(path / f"y_{i:03d}.bin", shape)))
    kernel = None
    defocus = None
    if cfg["defocus.enabled"]:
        defocus = defocus_params(cfg)
        kernel = defocus_kernel(shape[1], shape[0], defocus)
    ms = MeasurementSet(measurements, measurements[0].sensor, manifest["derived"]["truncation"], defocus, kernel)
    truth = imageio.read_complex_image(path / "truth")
    return ms, truth, manifest


def _render(values, lo, hi):
    scaled = np.clip((values - lo) / (hi - lo), 0, 1)
    return np.rint(scaled * 65535).astype(np.uint16)


def save_reconstruction(out, cfg, est, trace, source):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    imageio.write_complex_image(out / "estimate", est)
    amp = np.abs(est)
    imageio.write_pgm(out / "amplitude.pgm", _render(amp, 0.0, max(float(amp.max()), 1e-300)), 65535)
    imageio.write_pgm(out / "phase.pgm", _render(np.angle(est), -math.pi, math.pi), 65535)
    trace.write_csv(out / "trace.csv")
    files = [out / n for n in ("estimate.json", "estimate.amp.bin", "estimate.phase.bin", "amplitude.pgm", "phase.pgm", "trace.csv")]
    derived = {
        "measurement_dir": os.path.relpath(Path(source).resolve(), out.resolve()),
        "iterations": len(trace),
        "converged": trace.converged,
        "final_objective": trace.objective[-1],
        "final_rel_change": trace.rel_change[-1],
    }
    imageio.write_json(out / "manifest.json", _manifest("reconstruct", cfg, derived, files, out))
    return out / "manifest.json"


def reconstruct_dir(measurement_dir, out, overrides=None):
    ms, _, manifest = load_measurements(measurement_dir)
    raw = dict(manifest["config"])
    raw.update(overrides or {})
    cfg = cfgmod.resolve(raw)
    est, trace = solve_tv_map(ms, solver_config(cfg))
    save_reconstruction(out, cfg, est, trace, measurement_dir)
    return est, trace, cfg


def evaluate_dir(recon_dir, truth=None, align=None, out=None):
    """Evaluate a reconstruction directory; writes ``report.json`` and ``report.csv``."""
    recon_dir = Path(recon_dir)
    manifest = imageio.read_json(recon_dir / "manifest.json")
    cfg = cfgmod.resolve(manifest["config"])
    est = imageio.read_complex_image(recon_dir / "estimate")
    mdir = recon_dir / manifest["derived"]["measurement_dir"]
    if truth is None:
        truth = imageio.read_complex_image(mdir / "truth")
    elif isinstance(truth, (str, Path)):
        truth = imageio.read_complex_image(Path(truth).with_suffix(""))
    align = cfg["eval.phase_align"] if align is None else align
    row = cfg["eval.profile_row"]
    row = truth.shape[0] // 2 if row is None else row
    report = evaluate(truth, est, align=align, profile_row=row)
    out = Path(out) if out else recon_dir
    out.mkdir(parents=True, exist_ok=True)
    snr = None
    mman = mdir / "manifest.json"
    if mman.exists():
        entries = imageio.read_json(mman)["derived"]["measurements"]
        vals = [e["snr_db"] for e in entries if "snr_db" in e]
        snr = float(np.mean(vals)) if vals else None
    record = report.to_dict()
    record.update(
        mask_kind=cfg["mask.kind"],
        sigma=cfg["mask.sigma"],
        r1=cfg["mask.r1"] if cfg["mask.kind"] == "green" else None,
        snr_db=snr,
        m=cfg["mask.count"],
    )
    imageio.write_json(out / "report.json", record)
    write_rows(out / "report.csv", EVAL_COLUMNS, [_eval_row(record)])
    return report, record


def _eval_row(record):
    return {
        "mask_kind": record["mask_kind"],
        "sigma": record["sigma"],
        "r1": record["r1"],
        "snr_db": record["snr_db"],
        "m": record["m"],
        "sse_amp_db": record["sse_amplitude_db"],
        "sse_phase_db": record["sse_phase_db"],
    }


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rows(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])


# -- sweeps --------------------------------------------------------------------


def sweep_cells(cfg):
    """List of cell parameter dicts for the configured grid."""
    grid = cfg["sweep.grid"]
    if grid == "table1":
        return [
            {"kind": kind, "sigma": cfg["mask.sigma"], "r1": cfg["mask.r1"], "snr_db": snr}
            for snr in cfg["sweep.snrs"]
            for kind in cfg["sweep.kinds"]
        ]
    if grid == "table2":
        return [
            {"kind": "green", "sigma": s, "r1": r, "snr_db": cfg["sensor.snr_db"]}
            for s in cfg["sweep.sigmas"]
            for r in cfg["sweep.r1s"]
        ]
    return [{"kind": cfg["mask.kind"], "sigma": cfg["mask.sigma"], "r1": cfg["mask.r1"], "snr_db": cfg["sensor.snr_db"]}]


def _run_sweep_cell(args):
    cfg, cell = args
    amps, phases = [], []
    try:
        for rep in range(cfg["sweep.repeats"]):
            sensor = None
            if cfg["sweep.shared_sensor"] and cfg["sensor.enabled"]:
                sensor = shared_sensor(cfg, target(cfg), None, cfg["experiment.seed"] + rep, cell["snr_db"])
            res = run_cell(cfg, cell["kind"], cell["sigma"], cell["r1"], cell["snr_db"], rep, sensor)
            amps.append(res["sse_amp_db"])
            phases.append(res["sse_phase_db"])
    except (InvalidInputError, NumericalFailure, FloatingPointError) as exc:
        return dict(cell, status="failed", message=str(exc), amps=amps, phases=phases)
    return dict(cell, status="ok", message="", amps=amps, phases=phases)


def sweep(cfg, jobs=1):
    """Run every cell of the configured grid; one row per cell (mean over repeats)."""
    cells = sweep_cells(cfg)
    args = [(cfg, c) for c in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_sweep_cell, args))
    else:
        results = [_run_sweep_cell(a) for a in args]
    rows = []
    for res in results:
        ok = res["status"] == "ok"
        rows.append(
            {
                "mask_kind": res["kind"],
                "sigma": res["sigma"],
                "r1": res["r1"] if res["kind"] == "green" else None,
                "snr_db": res["snr_db"],
                "m": cfg["mask.count"],
                "sse_amp_db": float(np.mean(res["amps"])) if ok else float("nan"),
                "sse_phase_db": float(np.mean(res["phases"])) if ok else float("nan"),
                "repeats": cfg["sweep.repeats"],
                "status": res["status"],
                "message": res["message"],
                "replicates_amp": res["amps"],
                "replicates_phase": res["phases"],
            }
        )
    return rows


# -- defocus kernel recovery ---------------------------------------------------


def kernel_experiment(cfg, kinds=("green", "white", "blue")):
    """Recover a phase-only defocus kernel with the object fixed to all ones.

    The measured field is ``mask * h * 1``, so the unknown image the solver
    reconstructs is ``h`` itself. Returns one row per mask kind with the
    wrapped-phase MSE along the center row and over the whole image.
    """
    size = cfg["target.size"]
    h = defocus_kernel(size, size, defocus_params(cfg))
    ones = np.ones((size, size), dtype=np.complex128)
    scfg = solver_config(cfg, alpha=cfg["kernel.alpha"])
    rows, estimates = [], {}
    for kind in kinds:
        seed = cfg["experiment.seed"]
        masks = make_masks(cfg, kind, base_seed=seed, count=cfg["kernel.masks"], size=size)
        trunc = cfg["acquire.truncation"]
        sensors = sensors_for(cfg, clean_intensities(ones, masks, trunc, h), seed)
        ms = acquire(ones, masks, sensors, trunc, kernel=h)
        ms.kernel = None  # the kernel is the unknown
        est, _ = solve_tv_map(ms, scfg)
        aligned = align_global_phase(est, h)
        err = wrap_phase(np.angle(h) - np.angle(aligned))
        report = evaluate(h, aligned, align=False)
        rows.append(
            {
                "mask_kind": kind,
                "m": len(masks),
                "phase_profile_mse": float(np.mean(err[size // 2] ** 2)),
                "phase_mse": float(np.mean(err**2)),
                "sse_amp_db": report.sse_amplitude,
                "sse_phase_db": report.sse_phase,
            }
        )
        estimates[kind] = aligned
    return rows, h, estimates

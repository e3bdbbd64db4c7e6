"""Command line entry point: ``greennoise <command> [options]``.

Exit codes: 0 success, 2 invalid input or config, 3 numerical failure,
4 I/O error.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from greennoise import config as cfgmod
from greennoise import experiments as ex
from greennoise import imageio
from greennoise.core import InvalidInputError, NumericalFailure

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

log = logging.getLogger("greennoise")


def _overrides(args):
    raw = {}
    for item in args.set or []:
        if "=" not in item:
            raise cfgmod.ConfigError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        raw[key.strip()] = val.strip()
    if args.seed is not None:
        raw["experiment.seed"] = args.seed
    if getattr(args, "alpha", None) is not None:
        raw["kernel.alpha" if args.command == "kernel-experiment" else "solver.alpha"] = args.alpha
    if getattr(args, "no_phase_align", False):
        raw["eval.phase_align"] = False
    return raw


def resolve_config(args):
    base = cfgmod.load(args.config) if args.config else cfgmod.defaults()
    base.update(_overrides(args))
    return cfgmod.resolve(base)


def _out(args, cfg):
    return Path(args.out) if args.out else Path("out") / cfg["experiment.name"] / args.command


def cmd_generate_masks(args):
    cfg = resolve_config(args)
    out = _out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    files, derived = [], {"masks": []}
    for i, mask in enumerate(ex.make_masks(cfg)):
        files += ex.write_mask(out / f"mask_{i:03d}", mask, cfg["mask.spectrum_bins"])
        derived["masks"].append({"index": i, "seed": mask.seed})
    imageio.write_json(out / "manifest.json", ex._manifest("generate-masks", cfg, derived, files, out))
    print(out)
    return EXIT_OK


def cmd_simulate(args):
    cfg = resolve_config(args)
    out = _out(args, cfg)
    truth, ms = ex.simulate(cfg)
    ex.save_measurements(out, cfg, truth, ms)
    for i, m in enumerate(ms.measurements):
        if m.snr_db is not None:
            log.info("measurement %d: snr %.3f dB", i, m.snr_db)
    print(out)
    return EXIT_OK


def cmd_reconstruct(args):
    overrides = _overrides(args)
    if args.config:
        overrides = dict(cfgmod.load(args.config), **overrides)
    out = Path(args.out) if args.out else Path(args.measurements) / "recon"
    _, trace, _ = ex.reconstruct_dir(args.measurements, out, overrides)
    log.info("%d iterations, converged=%s", len(trace), trace.converged)
    print(out)
    return EXIT_OK


def cmd_evaluate(args):
    align = False if args.no_phase_align else None
    _, record = ex.evaluate_dir(args.recon, args.truth, align, args.out)
    print(f"sse_amp_db={record['sse_amplitude_db']:.4f} sse_phase_db={record['sse_phase_db']:.4f}")
    return EXIT_OK


def cmd_sweep(args):
    cfg = resolve_config(args)
    out = _out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    rows = ex.sweep(cfg, jobs=args.jobs)
    files = []
    for i, row in enumerate(rows):
        cell = out / f"cell_{i:03d}"
        cell.mkdir(exist_ok=True)
        imageio.write_json(cell / "report.json", row)
        files.append(cell / "report.json")
    ex.write_rows(out / "sweep.csv", ex.SWEEP_COLUMNS, rows)
    files.append(out / "sweep.csv")
    imageio.write_json(out / "manifest.json", ex._manifest("sweep", cfg, {"cells": len(rows)}, files, out))
    failed = sum(r["status"] != "ok" for r in rows)
    if failed:
        log.warning("%d of %d cells failed", failed, len(rows))
    print(out / "sweep.csv")
    return EXIT_OK


def cmd_kernel_experiment(args):
    cfg = resolve_config(args)
    out = _out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    rows, h, estimates = ex.kernel_experiment(cfg)
    imageio.write_complex_image(out / "kernel_truth", h)
    files = [out / "kernel_truth.json", out / "kernel_truth.amp.bin", out / "kernel_truth.phase.bin"]
    row = h.shape[0] // 2
    with open(out / "profiles.csv", "w") as fh:
        kinds = list(estimates)
        fh.write(",".join(["col", "truth"] + kinds) + "\n")
        for col in range(h.shape[1]):
            vals = [np.angle(h[row, col])] + [np.angle(estimates[k][row, col]) for k in kinds]
            fh.write(",".join([str(col)] + [repr(float(v)) for v in vals]) + "\n")
    ex.write_rows(out / "kernel.csv", ex.KERNEL_COLUMNS, rows)
    files += [out / "profiles.csv", out / "kernel.csv"]
    imageio.write_json(out / "manifest.json", ex._manifest("kernel-experiment", cfg, {"profile_row": row}, files, out))
    print(out / "kernel.csv")
    return EXIT_OK


COMMANDS = {
    "generate-masks": cmd_generate_masks,
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "kernel-experiment": cmd_kernel_experiment,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="greennoise", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, solver=True):
        p.add_argument("--config", help="config file or a manifest.json from an earlier run")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override experiment.seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        if solver:
            p.add_argument("--alpha", type=float, help="override the TV weight")
        return p

    common(sub.add_parser("generate-masks", help="write masks, sidecars and radial spectra"), solver=False)
    common(sub.add_parser("simulate", help="simulate a measurement directory"), solver=False)
    p = common(sub.add_parser("reconstruct", help="run the solver on a measurement directory"))
    p.add_argument("measurements", help="measurement directory written by simulate")
    p = sub.add_parser("evaluate", help="score a reconstruction against its ground truth")
    p.add_argument("recon", help="reconstruction directory")
    p.add_argument("--truth", help="complex image stem; defaults to the measurement directory's truth")
    p.add_argument("--out", help="where to write report.json/report.csv (default: recon dir)")
    p.add_argument("--no-phase-align", action="store_true", help="skip global-phase alignment")
    p = common(sub.add_parser("sweep", help="run a table grid and write one CSV row per cell"))
    p.add_argument("--jobs", type=int, default=1, help="cells run concurrently")
    p.add_argument("--no-phase-align", action="store_true", help="skip global-phase alignment")
    common(sub.add_parser("kernel-experiment", help="recover a defocus kernel with the object fixed to ones"))
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](args)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InvalidInputError, ValueError, KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

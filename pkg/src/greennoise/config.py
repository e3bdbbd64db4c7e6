"""Experiment configuration: flat ``key = value`` text with dotted namespaces.

Lines are ``section.name = value``; ``#`` starts a comment. Unknown keys are
rejected. Lists are comma separated, ``none`` means no value. A manifest
written by any command (JSON with a ``"config"`` object) is also accepted, so
a run can be replayed from its own manifest.

Every key, its type and default is listed in :data:`SCHEMA`; the resolved
configuration always contains all of them.
"""

import json
from pathlib import Path

from greennoise.core import InvalidInputError


class ConfigError(InvalidInputError):
    pass


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(conv):
    def parse(text):
        if text is None or str(text).strip().lower() in ("none", "auto", ""):
            return None
        return conv(text)

    parse.__name__ = f"optional {conv.__name__}"
    return parse


def _list(conv):
    def parse(text):
        if isinstance(text, (list, tuple)):
            return [conv(t) for t in text]
        return [conv(t.strip()) for t in str(text).split(",") if t.strip()]

    parse.__name__ = f"list of {conv.__name__}"
    return parse


def _choice(*options):
    def parse(text):
        val = str(text).strip()
        if val not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {val!r}")
        return val

    parse.__name__ = "|".join(options)
    return parse


def _str(text):
    return str(text).strip()


# key: (parser, default, help)
SCHEMA = {
    "experiment.name": (_str, "run", "label used for output subdirectories"),
    "experiment.seed": (int, 0, "base seed; masks, noise and solver init derive from it"),
    "target.kind": (_choice("cameraman-barbara", "uniform", "random", "file"), "cameraman-barbara", "test object"),
    "target.size": (int, 64, "object and mask size in pixels (built-in images: 64 or 200)"),
    "target.amplitude_file": (_opt(_str), None, "PGM amplitude image for target.kind = file"),
    "target.phase_file": (_opt(_str), None, "PGM phase image for target.kind = file"),
    "mask.kind": (_choice("green", "white", "blue"), "green", "mask family"),
    "mask.sigma": (float, 0.5, "on-off ratio"),
    "mask.r1": (float, 1.5, "inner ring radius for green masks"),
    "mask.count": (int, 3, "number of measurements M"),
    "mask.spectrum_bins": (int, 32, "radial bins in exported spectra"),
    "acquire.truncation": (float, 0.2, "fraction of the band zeroed at the high-frequency edge"),
    "sensor.enabled": (_bool, True, "false gives noiseless float measurements"),
    "sensor.snr_db": (_opt(float), 26.5, "target SNR; photon scale is calibrated per measurement"),
    "sensor.photon_scale": (_opt(float), None, "fixed photon scale (used when snr_db is none)"),
    "sensor.read_noise": (float, 2.0, "Gaussian read noise std in photons"),
    "sensor.bit_depth": (int, 12, "ADC bit depth"),
    "sensor.full_well": (_opt(float), None, "full well in photons; none = 1.2x clean peak per image"),
    "defocus.enabled": (_bool, False, "apply the quadratic defocus kernel"),
    "defocus.wavelength": (float, 632.8e-9, "metres"),
    "defocus.focal_length": (float, 0.1, "metres"),
    "defocus.distance": (float, 0.13, "lens to camera distance in metres"),
    "defocus.pitch": (float, 13.68e-6, "mask pixel pitch in metres"),
    "solver.alpha": (float, 0.1, "TV weight"),
    "solver.rho_fourier": (float, 1.0, "ADMM penalty, Fourier block"),
    "solver.rho_tv": (float, 1.0, "ADMM penalty, TV block"),
    "solver.max_iters": (int, 300, ""),
    "solver.rel_tol": (float, 1e-6, ""),
    "solver.cg_iters": (int, 10, ""),
    "solver.cg_tol": (float, 1e-8, ""),
    "solver.init_mode": (_choice("flat", "seeded-random"), "flat", ""),
    "solver.epsilon": (float, 1e-8, "diagonal regularizer of the u-step"),
    "solver.truncated_bins": (_choice("ignore", "zero"), "zero", "treatment of band-truncated bins"),
    "eval.phase_align": (_bool, True, "remove global phase before the phase SSE"),
    "eval.profile_row": (_opt(int), None, "row for the line-profile MSE; none = center row"),
    "sweep.grid": (_choice("table1", "table2", "single"), "table1", "which axes to sweep"),
    "sweep.kinds": (_list(_choice("green", "white", "blue")), ["green", "white", "blue"], "table1 mask axis"),
    "sweep.snrs": (_list(float), [22.5, 24.5, 26.5], "table1 SNR axis"),
    "sweep.sigmas": (_list(float), [0.3, 0.4, 0.5, 0.6, 0.7], "table2 sigma axis"),
    "sweep.r1s": (_list(float), [1.0, 1.5, 2.0, 2.5], "table2 r1 axis"),
    "sweep.repeats": (int, 1, "seed replicates per cell; rows report the mean"),
    "sweep.shared_sensor": (_bool, False, "calibrate one sensor on the reference cell and reuse it"),
    "sweep.reference_sigma": (float, 0.5, "reference cell sigma for shared_sensor"),
    "sweep.reference_r1": (float, 1.5, "reference cell r1 for shared_sensor"),
    "kernel.masks": (int, 2, "measurements per mask kind in the kernel experiment"),
    "kernel.alpha": (float, 0.01, "TV weight in the kernel experiment"),
}


def defaults():
    return {key: spec[1] for key, spec in SCHEMA.items()}


def _parse_value(key, raw):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    parser = SCHEMA[key][0]
    try:
        return parser(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def parse_text(text, source="<config>"):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _parse_value(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return values


def resolve(overrides=None):
    """Defaults updated with validated ``overrides`` (already-parsed or raw strings)."""
    cfg = defaults()
    for key, raw in (overrides or {}).items():
        cfg[key] = _parse_value(key, raw)
    validate(cfg)
    return cfg


def load(path):
    """Read a config file or a manifest and return the fully resolved dict."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        raw = data.get("config", data)
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: manifest has no config object")
        return resolve(raw)
    return resolve(parse_text(text, str(path)))


def validate(cfg):
    if cfg["target.size"] < 2:
        raise ConfigError("target.size must be at least 2")
    if not 0 <= cfg["mask.sigma"] <= 1:
        raise ConfigError("mask.sigma must lie in [0, 1]")
    if cfg["mask.count"] < 1:
        raise ConfigError("mask.count must be at least 1")
    if not 0 <= cfg["acquire.truncation"] < 1:
        raise ConfigError("acquire.truncation must lie in [0, 1)")
    if cfg["sensor.enabled"] and cfg["sensor.snr_db"] is None and cfg["sensor.photon_scale"] is None:
        raise ConfigError("sensor needs either snr_db or photon_scale")
    if cfg["sweep.repeats"] < 1:
        raise ConfigError("sweep.repeats must be at least 1")
    if cfg["target.kind"] == "file" and not cfg["target.amplitude_file"]:
        raise ConfigError("target.kind = file needs target.amplitude_file")
    return cfg


def dump(cfg):
    """Config as ``key = value`` text in schema order."""
    lines = []
    for key in SCHEMA:
        val = cfg[key]
        if val is None:
            text = "none"
        elif isinstance(val, bool):
            text = "true" if val else "false"
        elif isinstance(val, list):
            text = ", ".join(repr(v) if isinstance(v, float) else str(v) for v in val)
        elif isinstance(val, float):
            text = repr(val)
        else:
            text = str(val)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"

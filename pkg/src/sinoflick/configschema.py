"""Flat `key = value` configuration schema for pipeline runs.

Kept free of heavy imports so the CLI can render help and parse flags
before numerical libraries (and their thread pools) are loaded.
"""

from __future__ import annotations

from dataclasses import dataclass

# Water attenuation (1/mm) used by default; representative of ~50 keV.
DEFAULT_MU_WATER = 0.0227


@dataclass(frozen=True)
class ConfigKey:
    name: str
    type: type
    default: object
    bounds: str  # human-readable range, shown in help
    help: str


CONFIG_SCHEMA: tuple[ConfigKey, ...] = (
    ConfigKey("views", int, 1160, "even, >= 2", "projection views over 360 degrees"),
    ConfigKey("dets", int, 672, ">= 1", "detector bins per view"),
    ConfigKey("det_spacing", float, 0.6, "> 0", "detector bin width in mm"),
    ConfigKey("size", int, 512, ">= 16", "reconstruction grid size in pixels"),
    ConfigKey("pixel_spacing", float, 0.78125, "> 0", "pixel size in mm"),
    ConfigKey("mu_water", float, DEFAULT_MU_WATER, "> 0", "water attenuation in 1/mm"),
    ConfigKey("i0", float, 25000.0, "> 0", "expected photons per ray"),
    ConfigKey("noise_seed", int, 1, ">= 0", "seed of the photon-noise stream"),
    ConfigKey("flick_l", int, 400_000, ">= 0", "conjugate-pair swap draws per plan"),
    ConfigKey("seed", int, 1, ">= 0", "master seed for flicking and training"),
    ConfigKey("steps", int, 2000, ">= 0", "training steps per pass"),
    ConfigKey("channels", int, 48, ">= 1", "hidden channels of the denoiser"),
    ConfigKey("lr", float, 1e-3, "> 0", "base Adam learning rate"),
    ConfigKey("lr_halve_every", int, 1000, ">= 0 (0 = constant)", "steps between halvings"),
    ConfigKey("alpha", float, 1.0, ">= 0", "consistency-term weight"),
    ConfigKey("passes", int, 2, ">= 1", "number of denoising passes"),
    ConfigKey("reflick_every", int, 0, ">= 0 (0 = fixed pair)", "steps between fresh flick plans"),
    ConfigKey("sart_iters", int, 50, ">= 1", "SART sweeps per reconstruction"),
    ConfigKey("sart_relaxation", float, 1.0, "in (0, 2]", "SART relaxation factor"),
    ConfigKey("sart_nonneg", bool, True, "true/false", "clamp reconstructions at 0"),
    ConfigKey("out_dir", str, "runs/experiment", "path", "output directory"),
    ConfigKey("phantom_table", str, "", "path ('' = built-in)", "ellipse table file"),
)

CONFIG_KEYS = tuple(k.name for k in CONFIG_SCHEMA)
SCHEMA_BY_NAME = {k.name: k for k in CONFIG_SCHEMA}


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_value(key: ConfigKey, text: str):
    text = text.strip()
    if key.type is bool:
        lowered = text.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ValueError(f"{key.name}: expected true/false, got {text!r}")
    if key.type is int:
        return int(text)
    if key.type is float:
        return float(text)
    return text


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines ('#' comments); unknown keys are rejected."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        name, _, raw = body.partition("=")
        name = name.strip()
        if name not in SCHEMA_BY_NAME:
            raise ValueError(f"config line {lineno}: unknown key {name!r}")
        values[name] = parse_value(SCHEMA_BY_NAME[name], raw)
    return values


def config_help_text() -> str:
    """One line per key: name, default, range, description (help epilog)."""
    lines = ["configuration keys (config file and --set overrides):"]
    width = max(len(k.name) for k in CONFIG_SCHEMA)
    for k in CONFIG_SCHEMA:
        lines.append(
            f"  {k.name.ljust(width)}  default {format_value(k.default)!s:>10}"
            f"  [{k.bounds}]  {k.help}"
        )
    return "\n".join(lines) + "\n"

"""Experiment configuration: JSON files, shipped presets, hashing, echo.

A config document has up to five sections::

    {
      "system": {"name": "dubins", "overrides": {...physical params...}},
      "sysid":  {...SysIdConfig fields...},
      "hjb":    {...HjbConfig fields (transition, epochs, alphas, ...)...},
      "rho":    {"kind": "box"|"gaussian", "lo": [...], "hi": [...],
                 "mean": [...], "std": [...]},
      "eval":   {"starts": 1000, "threshold": 0.15, "metric": "position",
                 "seed": 0}
    }

Precedence: package defaults < preset < user config file < CLI flags.
The effective merged config is echoed next to every command's outputs and
can be re-fed verbatim via --config.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from importlib import resources
from pathlib import Path

from .hjbtrain import HjbConfig, InitialStateDist
from .sysid import SysIdConfig

import numpy as np


class ConfigError(Exception):
    """Unreadable, unknown, or inconsistent configuration."""


DEFAULTS: dict = {
    "system": {"name": None, "overrides": {}},
    "sysid": {},
    "hjb": {},
    "rho": None,
    "eval": {"starts": 1000, "threshold": 0.15, "metric": "position", "seed": 0},
}


def preset_names() -> list[str]:
    files = resources.files("hjbctrl").joinpath("presets")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    path = resources.files("hjbctrl").joinpath("presets", f"{name}.json")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(
            f"unknown preset '{name}'; shipped presets: {', '.join(preset_names())}"
        )


def load_config_file(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")


def _deep_merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def effective_config(preset: str | None = None, config_path=None,
                     overrides: dict | None = None) -> dict:
    """Merge defaults, preset, user file and CLI overrides (in that order)."""
    cfg = json.loads(json.dumps(DEFAULTS))
    if preset:
        cfg = _deep_merge(cfg, load_preset(preset))
    if config_path:
        cfg = _deep_merge(cfg, load_config_file(config_path))
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    return cfg


def config_hash(cfg: dict) -> str:
    """Short stable digest of the effective config."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def echo_config(cfg: dict, outdir) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "effective_config.json"
    path.write_text(json.dumps(cfg, indent=2, sort_keys=True), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Section parsers
# ---------------------------------------------------------------------------


def _known_fields(dc_type) -> set[str]:
    return {f.name for f in dataclasses.fields(dc_type)}


def sysid_config(cfg: dict) -> SysIdConfig:
    section = dict(cfg.get("sysid") or {})
    unknown = set(section) - _known_fields(SysIdConfig)
    if unknown:
        raise ConfigError(f"unknown sysid option(s): {sorted(unknown)}")
    if "hidden" in section:
        section["hidden"] = tuple(section["hidden"])
    try:
        return SysIdConfig(**section)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad sysid config: {e}")


def rho_from_section(section: dict | None) -> InitialStateDist | None:
    if not section:
        return None
    kind = section.get("kind")
    try:
        if kind == "box":
            return InitialStateDist(
                kind="box",
                lo=np.asarray(section["lo"], dtype=np.float64),
                hi=np.asarray(section["hi"], dtype=np.float64),
            )
        if kind == "gaussian":
            return InitialStateDist(
                kind="gaussian",
                mean=np.asarray(section["mean"], dtype=np.float64),
                std=np.asarray(section["std"], dtype=np.float64),
            )
    except KeyError as e:
        raise ConfigError(f"rho section missing field {e}")
    raise ConfigError(f"rho kind must be 'box' or 'gaussian', got {kind!r}")


def hjb_config(cfg: dict) -> HjbConfig:
    section = dict(cfg.get("hjb") or {})
    unknown = set(section) - _known_fields(HjbConfig)
    if unknown:
        raise ConfigError(f"unknown hjb option(s): {sorted(unknown)}")
    for key in ("controller_hidden", "value_hidden"):
        if key in section:
            section[key] = tuple(section[key])
    section["rho"] = rho_from_section(cfg.get("rho"))
    try:
        return HjbConfig(**section)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad hjb config: {e}")

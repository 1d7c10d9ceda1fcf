"""Run configuration: INI (or JSON) tables checked against a per-command schema.

Every key has a type and a default; ``REQUIRED`` marks keys without one.
A section may be declared optional, in which case it only takes part when
present in the file.  Unknown sections and keys are errors.

The JSON form is exactly what the CLI writes to ``effective-config.json``,
so a run can be repeated from that file alone.
"""
from __future__ import annotations

import configparser
import json
import math
import os

from .errors import ConfigurationError

REQUIRED = object()
OPTIONAL = None


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def _ints(text):
    if isinstance(text, (list, tuple)):
        vals = list(text)
    else:
        vals = [v for v in str(text).replace(";", ",").split(",") if v.strip()]
    out = []
    for v in vals:
        f = float(v)
        if f != int(f):
            raise ValueError(f"{v!r} is not an integer")
        out.append(int(f))
    return out


def _int(v):
    f = float(v)
    if not math.isfinite(f) or f != int(f):
        raise ValueError(f"{v!r} is not an integer")
    return int(f)


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{v!r} is not a boolean")


def _str(v):
    return str(v).strip()


TYPES = {"float": float, "int": _int, "str": _str, "floats": _floats, "ints": _ints,
         "bool": _bool}

_COMBO = {
    "protocol": ("str", REQUIRED),
    "node_dims": ("ints", REQUIRED),
    "n_df": ("int", REQUIRED),
    "n_ct": ("int", 0),
    "n_f": ("int", 0),
    "quantizer": ("str", "zoom"),
    "delta": ("floats", OPTIONAL),
    "m": ("floats", OPTIONAL),
    "omega": ("floats", OPTIONAL),
    "n_levels": ("ints", OPTIONAL),
    "deadzone": ("floats", [0.0]),
    "varpi": ("float", REQUIRED),
    "alpha": ("float", 0.9),
    "M_e": ("float", OPTIONAL),
    "M_f": ("float", 0.0),
}

_TRADEOFF_KEYS = ("L0", "L1", "gamma0", "gamma1", "lam", "rho0", "rho1", "phi00", "phi10")

SCHEMA = {
    "tradeoff": {
        "tradeoff": (True, {
            "preset": ("str", ""),
            "protocol": ("str", "RR"),
            **{k: ("float", OPTIONAL) for k in _TRADEOFF_KEYS},
            "n_grid": ("int", 100_000),
            "curve_stride": ("int", 1),
        }),
        "combo": (False, _COMBO),
    },
    "simulate": {
        "system": (True, {
            "preset": ("str", "manipulator"),
            "m": ("float", 4.905),
            "a": ("float", 2.0),
            "uf_amp": ("float", 2.0),
            "uf_freq": ("float", 5.0),
        }),
        "protocol": (True, {"tag": ("str", "TODTracking")}),
        "quantizer": (True, {
            "kind": ("str", "zoom"),
            "delta": ("float", 0.05),
            "m": ("float", 4.0),
            "omega": ("float", 0.6),
            "mu0": ("float", 1.0),
            "policy": ("str", "adaptive"),
        }),
        "network": (True, {
            "h_mati": ("float", REQUIRED),
            "h_mad": ("float", REQUIRED),
            "eps": ("float", OPTIONAL),
            "dropouts": ("int", 0),
            "interval_policy": ("str", "constant"),
            "delay_policy": ("str", "constant"),
            "h": ("float", OPTIONAL),
            "tau_d": ("float", OPTIONAL),
        }),
        "run": (True, {
            "T": ("float", 10.0),
            "step": ("float", 1e-3),
            "seed": ("int", 0),
            "eta0": ("floats", [0.5, 0.0]),
            "xrf0": ("floats", [-math.pi / 2, 0.0]),
            "check": ("bool", True),
        }),
    },
    "verify": {
        "combo": (True, _COMBO),
        "verify": (True, {
            "suites": ("str", "uges,sector"),
            "samples": ("int", 100_000),
            "sector_points": ("int", 10_000),
            "mu": ("float", 1.0),
            "seed": ("int", 0),
            "slack": ("float", 1e-12),
            "lam": ("float", OPTIONAL),
        }),
    },
    "example": {
        "example": (True, {
            "preset": ("str", "manipulator"),
            "T": ("float", 10.0),
            "step": ("float", 1e-3),
            "n_grid": ("int", 100_000),
            "curve_stride": ("int", 50),
        }),
    },
}


def _read_raw(path):
    """{section: {key: raw value}} from an INI or JSON file."""
    if not os.path.isfile(path):
        raise ConfigurationError(f"config file not found: {path}")
    if path.lower().endswith(".json"):
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"malformed JSON config: {exc}") from None
        data.pop("command", None)
        if not isinstance(data, dict) or not all(isinstance(v, dict) for v in data.values()):
            raise ConfigurationError("JSON config must map section names to tables")
        return {s: dict(v) for s, v in data.items()}
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive (L0, T, M_e)
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None
    return {s: dict(cp.items(s)) for s in cp.sections()}


def parse_override(text):
    """'section.key=value' -> (section, key, value)."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} is not section.key=value")
    lhs, value = text.split("=", 1)
    if "." not in lhs:
        raise ConfigurationError(f"override {text!r} is not section.key=value")
    section, key = lhs.strip().split(".", 1)
    return section, key.strip(), value.strip()


def load(command, path=None, overrides=()):
    """Validated, fully defaulted config dict for ``command``."""
    if command not in SCHEMA:
        raise ConfigurationError(f"unknown command {command!r}")
    raw = _read_raw(path) if path else {}
    for section, key, value in (parse_override(o) if isinstance(o, str) else o
                                for o in overrides):
        raw.setdefault(section, {})[key] = value
    schema = SCHEMA[command]
    for section, table in raw.items():
        if section not in schema:
            raise ConfigurationError(f"unknown section [{section}]")
        for key in table:
            if key not in schema[section][1]:
                raise ConfigurationError(f"unknown key '{section}.{key}'")
    out = {}
    for section, (always, keys) in schema.items():
        if section not in raw and not always:
            continue
        given = raw.get(section, {})
        table = {}
        for key, (typ, default) in keys.items():
            if key in given and given[key] is not None and given[key] != "":
                try:
                    table[key] = TYPES[typ](given[key])
                except (TypeError, ValueError) as exc:
                    raise ConfigurationError(
                        f"bad value for '{section}.{key}': {given[key]!r} ({exc})") from None
            elif default is REQUIRED:
                raise ConfigurationError(f"missing required key '{section}.{key}'")
            else:
                table[key] = default
        out[section] = table
    return out

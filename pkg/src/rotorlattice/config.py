"""Sectioned INI configuration with typed keys, defaults and env overrides.

Every key must be declared in ``SCHEMA``; unknown sections or keys are errors.
Any key can be overridden by an environment variable named
``RLAT_<SECTION>_<KEY>`` (upper case), e.g. ``RLAT_RUN_SEED=7``.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lattice import build_lattice
from .model import (
    AssumptionWarning,
    Dissipation,
    ModelSpec,
    linear_potential,
    power_frequency,
    sqrt_potential,
)
from .sde import SdeRun

ENV_PREFIX = "RLAT_"


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(x) for x in str(text).replace(";", ",").split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in str(text).replace(";", ",").split(",") if x.strip()]


def _strs(text: str) -> list[str]:
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _nodes(text: str) -> list[list[int]]:
    """Nodes separated by ';', coordinates by ','; e.g. '3;4' or '1,2;2,2'."""
    return [[int(c) for c in part.split(",")] for part in str(text).split(";") if part.strip()]


def _bool(text) -> bool:
    t = str(text).strip().lower()
    if t in {"1", "true", "yes", "on"}:
        return True
    if t in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {text!r}")


# (parser, default) per key
SCHEMA: dict[str, dict[str, tuple]] = {
    "lattice": {
        "d": (int, 1),
        "extents": (_ints, [8]),
        "defects": (_nodes, []),
        "defect_signs": (_ints, []),
    },
    "model": {
        "frequency": (str, "power"),
        "k": (int, 1),
        "potential": (str, "linear"),
        "potential_shift": (float, 1.0),
        "dissipation": (str, "diagonal"),
        "p": (int, 2),
        "coupling": (float, 0.0),
        "temperatures": (_floats, [1.0]),
        "eps": (float, 0.01),
        "a": (float, 0.5),
        "check_assumptions": (_bool, True),
    },
    "run": {
        "kind": (str, "full"),
        "scheme": (str, "splitting"),
        "dt": (float, 1e-3),
        "horizon": (float, 1.0),
        "frame": (str, "fast"),
        "seed": (int, 0),
        "ensemble": (int, 1),
        "stride": (int, 1),
        "averaged_dt": (float, 1e-3),
        "initial_action": (float, 1.0),
    },
    "experiment": {
        "tolerance": (float, 1e-6),
        "phi_tolerance": (float, 1e-10),
        "states": (int, 20),
        "vectors": (int, 50),
        "action_min": (float, 0.2),
        "action_max": (float, 2.0),
        "quad_points": (int, 256),
        "averaging_points": (int, 16),
        "potentials": (_strs, ["linear", "sqrt"]),
        "cases": (_strs, ["diagonal2", "diagonal4", "linear", "example2"]),
        "epsilons": (_floats, [0.1, 0.05, 0.025]),
        "values": (_floats, []),
        "tau": (float, 1.0),
        "w1_tol": (float, 0.05),
        "ks_level": (float, 0.01),
        "mean_rel_tol": (float, 0.1),
        "chains": (int, 200),
        "burn_in": (float, 3.0),
        "sample_interval": (float, 1.0),
        "samples_per_chain": (int, 10),
        "autocorr_max": (float, 0.2),
        "min_samples": (int, 2000),
        "bootstrap": (int, 200),
        "se_multiplier": (float, 2.0),
        "ratio_bound": (float, 10.0),
        "ratio_variation": (float, 0.2),
        "inverse_tol": (float, 1e-8),
        "substeps": (int, 32),
        "out": (str, ""),
    },
}


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    # ------------------------------------------------------------------
    def build_lattice(self):
        lat = self["lattice"]
        signs = dict(zip(map(tuple, lat["defects"]), lat["defect_signs"])) if lat["defect_signs"] else None
        if lat["defect_signs"] and len(lat["defect_signs"]) != len(lat["defects"]):
            raise ConfigError("lattice.defect_signs must list one sign per defect")
        try:
            return build_lattice(lat["d"], lat["extents"], [tuple(n) for n in lat["defects"]], signs)
        except ValueError as exc:
            raise ConfigError(f"lattice: {exc}") from None

    def build_spec(self, lattice=None, **overrides) -> ModelSpec:
        """ModelSpec from the [model] section; keyword arguments replace keys."""
        m = dict(self["model"])
        m.update(overrides)
        lattice = lattice or self.build_lattice()
        if m["frequency"] != "power":
            raise ConfigError(f"model.frequency: unknown built-in {m['frequency']!r}")
        freq = power_frequency(m["k"])
        if m["potential"] == "linear":
            pot = linear_potential()
        elif m["potential"] == "sqrt":
            pot = sqrt_potential(m["potential_shift"])
        else:
            raise ConfigError(f"model.potential: unknown built-in {m['potential']!r}")
        kind = m["dissipation"]
        try:
            if kind == "diagonal":
                dis = Dissipation("diagonal", p=m["p"])
            elif kind == "linear":
                dis = Dissipation("linear", p=2, coupling=m["coupling"])
            elif kind == "example2":
                dis = Dissipation("example2", p=4)
            elif kind == "none":
                dis = Dissipation("none", p=m["p"])
            else:
                raise ConfigError(f"model.dissipation: unknown built-in {kind!r}")
            T = np.resize(np.asarray(m["temperatures"], dtype=float), lattice.N)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", AssumptionWarning)
                return ModelSpec(lattice, freq, pot, dis, T, eps=m["eps"], a=m["a"],
                                 check_assumptions=m["check_assumptions"])
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from None

    def sde_run(self, workers: int = 1, **overrides) -> SdeRun:
        r = dict(self["run"])
        kw = dict(kind=r["kind"], scheme=r["scheme"], dt=r["dt"], horizon=r["horizon"],
                  seed=r["seed"], stride=r["stride"], frame=r["frame"],
                  ensemble=r["ensemble"], workers=workers)
        kw.update(overrides)
        try:
            return SdeRun(**kw)
        except ValueError as exc:
            raise ConfigError(f"run: {exc}") from None

    # ------------------------------------------------------------------
    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.values))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_values(self, section: str, **changes) -> "RunConfig":
        vals = self.to_dict()
        vals[section].update(changes)
        return RunConfig(vals)


def _parse_value(section: str, key: str, raw):
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {section}.{key}")
    parser, _ = SCHEMA[section][key]
    if not isinstance(raw, str):
        return raw  # already typed (JSON input)
    try:
        return parser(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} ({exc})") from None


def defaults() -> dict:
    return {s: {k: (list(v[1]) if isinstance(v[1], list) else v[1]) for k, v in keys.items()}
            for s, keys in SCHEMA.items()}


def from_mapping(mapping: dict, env: dict | None = None) -> RunConfig:
    vals = defaults()
    for section, keys in mapping.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in keys.items():
            vals[section][key] = _parse_value(section, key, raw)
    for name, raw in (os.environ if env is None else env).items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        if section not in SCHEMA:
            raise ConfigError(f"environment override {name}: unknown section")
        vals[section][key] = _parse_value(section, key, raw)
    return RunConfig(vals)


def load_config(path, env: dict | None = None) -> RunConfig:
    """Read an INI file, or a JSON summary previously written by the CLI."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return from_mapping(data.get("config", data), env)
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_mapping({s: dict(cp[s]) for s in cp.sections()}, env)

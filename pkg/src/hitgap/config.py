"""Config-file front end: TOML sections [diffusion], [window], [tolerances],
[anchors], [simulation] resolved into spec objects.

Coefficients are expression strings over the small arithmetic grammar (see
``expr``); alternatively ``scale_table`` / ``speed_table`` name CSV files with
columns x,value (value = S(x) resp. the speed density)."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError
from .expr import parse_expression
from .model import DiffusionSpec, Tolerances
from .montecarlo import SimConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["RunConfig", "load_config"]


@dataclass(frozen=True)
class RunConfig:
    spec: DiffusionSpec
    anchor_points: Optional[tuple[float, ...]]
    anchor_quantiles: tuple[float, ...]
    sim: Optional[SimConfig]
    path: str
    raw: dict


def _read_table(path: Path) -> tuple[np.ndarray, np.ndarray]:
    try:
        first = path.read_text(encoding="utf-8").splitlines()[0]
    except (OSError, IndexError) as exc:
        raise ConfigError(f"cannot read table {path}: {exc}") from exc
    skip = 1 if any(ch.isalpha() for ch in first) else 0
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"malformed table {path}: {exc}") from exc
    if data.shape[1] < 2:
        raise ConfigError(f"table {path} needs columns x,value")
    return data[:, 0], data[:, 1]


def load_config(path) -> RunConfig:
    """Parse a TOML config into a DiffusionSpec plus run settings."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    diff = raw.get("diffusion")
    if not isinstance(diff, dict):
        raise ConfigError("config needs a [diffusion] section")

    window = None
    if "window" in raw:
        try:
            window = (float(raw["window"]["lo"]), float(raw["window"]["hi"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"[window] needs numeric lo and hi: {exc}") from exc

    tol_kwargs = {}
    for key, value in raw.get("tolerances", {}).items():
        if key not in {f.name for f in dataclasses.fields(Tolerances)}:
            raise ConfigError(f"unknown tolerance {key!r}")
        tol_kwargs[key] = type(getattr(Tolerances(), key))(value)
    tolerances = Tolerances(**tol_kwargs)

    common = dict(
        x0=float(diff.get("x0", 0.0)),
        window=window,
        domain=str(diff.get("domain", "line")),
        atoms=tuple((float(p), float(m)) for p, m in diff.get("atoms", [])),
        tolerances=tolerances,
        label=str(raw.get("label", path.stem)),
    )

    has_sde = "drift" in diff or "sigma" in diff
    has_tables = "scale_table" in diff or "speed_table" in diff
    if has_sde == has_tables:
        raise ConfigError("[diffusion] needs either drift+sigma or scale_table+speed_table")
    if has_sde:
        if "drift" not in diff or "sigma" not in diff:
            raise ConfigError("[diffusion] needs both drift and sigma")
        spec = DiffusionSpec.from_sde(parse_expression(str(diff["drift"])),
                                      parse_expression(str(diff["sigma"])), **common)
    else:
        if "scale_table" not in diff or "speed_table" not in diff:
            raise ConfigError("[diffusion] needs both scale_table and speed_table")
        base = path.parent
        scale_table = _read_table(base / str(diff["scale_table"]))
        speed_table = _read_table(base / str(diff["speed_table"]))
        if common["window"] is None:
            common.pop("window")
        spec = DiffusionSpec.from_tables(scale_table, speed_table, **common)

    anchors_raw = raw.get("anchors", {})
    points = anchors_raw.get("points")
    anchor_points = tuple(float(p) for p in points) if points is not None else None
    quantiles = tuple(float(q) for q in anchors_raw.get("quantiles", (0.10, 0.25, 0.50, 0.75, 0.90)))
    if any(not 0 < q < 1 for q in quantiles):
        raise ConfigError("anchor quantiles must lie in (0, 1)")

    sim = None
    if "simulation" in raw:
        s = raw["simulation"]
        try:
            sim = SimConfig(
                start=float(s["start"]), target=float(s["target"]),
                step=float(s.get("step", 1e-3)), t_max=float(s.get("t_max", 20.0)),
                paths=int(s.get("paths", 10_000)), seed=int(s.get("seed", 0)),
                crossing=str(s.get("crossing", "bridge")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid [simulation] section: {exc}") from exc

    return RunConfig(spec=spec, anchor_points=anchor_points, anchor_quantiles=quantiles,
                     sim=sim, path=str(path), raw=raw)

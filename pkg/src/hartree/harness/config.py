"""Flat ``key = value`` run configuration with '#' comments."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from ..dynamics import SimConfig
from ..spectral import GridSpec

MODES = ("run", "sweep_N", "convergence", "inequality_batch", "scaling_check")


class ConfigError(ValueError):
    pass


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _floats(v: str) -> list[float]:
    return [float(x) for x in v.replace(";", ",").split(",") if x.strip()]


def _pairs(v: str) -> list[tuple[float, float]]:
    out = []
    for item in v.replace(";", ",").split(","):
        if not item.strip():
            continue
        q, r = item.split(":")
        out.append((float(q), float(r)))
    return out


def _mode(v: str) -> str:
    v = v.strip()
    if v not in MODES:
        raise ValueError(f"mode must be one of {', '.join(MODES)}")
    return v


# key -> (parser, default); None default means required
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "mode": (_mode, None),
    "mu": (float, 1.0),
    "n": (int, 3),
    "M": (int, 64),
    "L": (float, 16.0),
    "dt": (float, 5e-4),
    "T": (float, 1.0),
    "s": (float, 0.8),
    "N": (float, 8.0),
    "seed": (int, 0),
    "sample_every": (int, 20),
    "output_dir": (str, "out"),
    "checkpoint_every": (int, 0),
    "pairs": (_pairs, []),
    "morawetz": (_bool, False),
    "sampler.budget": (int, 20_000),
    "sampler.seed": (int, 0),
    "data.kind": (str, "gaussian"),
    "data.amplitude": (float, None),
    "data.sigma": (float, None),
    "data.center": (_floats, None),
    "data.boost": (_floats, None),
    "data.mode": (_floats, None),
    "data.s": (float, None),
    "data.target": (float, None),
    "data.eps": (float, None),
    "data.radius": (float, None),
    "N_list": (_floats, [4.0, 8.0, 16.0, 32.0]),
    "convergence.levels": (int, 2),
    "batch.size": (int, 10),
    "batch.amplitude_spread": (float, 0.5),
    "batch.center_spread": (float, 1.0),
    "batch.boost_spread": (float, 0.5),
    "batch.refine_M": (int, 0),
    "lambda": (float, 2.0),
}
OPTIONAL_NONE = {k for k, (_, d) in SCHEMA.items() if d is None and k.startswith("data.")}

DATA_KEYS = {
    "gaussian": ("amplitude", "sigma", "center", "boost"),
    "plane_wave": ("amplitude", "mode"),
    "rough_Hs": ("s", "target", "eps", "radius"),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict[str, Any]
    text: str

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def mode(self) -> str:
        return self.values["mode"]

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self["n"], self["M"], self["L"])

    def sim(self, grid: GridSpec | None = None, dt: float | None = None, T: float | None = None) -> SimConfig:
        return SimConfig(
            mu=self["mu"],
            grid=grid or self.grid,
            dt=self["dt"] if dt is None else dt,
            T=self["T"] if T is None else T,
            s=self["s"],
            N=self["N"],
            seed=self["seed"],
            sample_every=self["sample_every"],
        )

    @property
    def data_kind(self) -> str:
        return self.values["data.kind"]

    def data_params(self) -> dict[str, Any]:
        out = {}
        for name in DATA_KEYS[self.data_kind]:
            v = self.values.get(f"data.{name}")
            if v is not None:
                out[name] = v
        return out

    @property
    def hash(self) -> str:
        return hashlib.sha256(canonical_text(self.values).encode()).hexdigest()

    def with_overrides(self, overrides: dict[str, Any]) -> RunConfig:
        vals = dict(self.values)
        vals.update({k: v for k, v in overrides.items() if v is not None})
        cfg = RunConfig(vals, self.text)
        validate(cfg)
        return cfg

    def to_json(self) -> dict[str, Any]:
        return {k: v for k, v in sorted(self.values.items())}


def canonical_text(values: dict[str, Any]) -> str:
    return "\n".join(f"{k} = {values[k]!r}" for k in sorted(values))


def parse_config(text: str) -> RunConfig:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    values: dict[str, Any] = {}
    for key, (conv, default) in SCHEMA.items():
        if key in raw:
            try:
                values[key] = conv(raw[key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from None
        elif default is None and key not in OPTIONAL_NONE:
            raise ConfigError(f"missing required key {key!r}")
        else:
            values[key] = default
    cfg = RunConfig(values, text)
    validate(cfg)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def validate(cfg: RunConfig) -> None:
    """Cross-key checks; raises :class:`ConfigError`."""
    v = cfg.values
    kind = v["data.kind"]
    if kind not in DATA_KEYS:
        raise ConfigError(f"unknown data.kind {kind!r}")
    for key, val in v.items():
        if key.startswith("data.") and key != "data.kind" and val is not None:
            if key[5:] not in DATA_KEYS[kind]:
                raise ConfigError(f"{key} does not apply to data.kind = {kind}")
    if kind == "rough_Hs" and v["data.s"] is None:
        raise ConfigError("rough_Hs data needs data.s")
    try:
        cfg.sim()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if v["n"] < 3 and v["mu"] != 0:
        raise ConfigError("the Hartree nonlinearity needs n >= 3")
    radius = v["data.sigma"] if kind == "gaussian" else v["data.radius"]
    if kind == "gaussian" and radius is None:
        radius = 1.0
    if radius is not None and v["L"] < 12 * radius:
        raise ConfigError(f"box L={v['L']} must be at least 12x the data radius {radius}")
    ce = v["checkpoint_every"]
    if ce < 0 or (ce and ce % v["sample_every"]):
        raise ConfigError("checkpoint_every must be a nonnegative multiple of sample_every")
    for q, r in v["pairs"]:
        if q < 1 or r < 1:
            raise ConfigError(f"space-time pair ({q}, {r}) needs exponents >= 1")
    if v["sampler.budget"] <= 0:
        raise ConfigError("sampler.budget must be positive")
    mode = v["mode"]
    if mode == "sweep_N":
        if len(v["N_list"]) < 2:
            raise ConfigError("sweep_N needs at least two cutoffs in N_list")
        if v["mu"] != 1:
            raise ConfigError("sweep_N is defined for the defocusing flow (mu = 1)")
    if mode == "convergence" and v["convergence.levels"] < 2:
        raise ConfigError("convergence.levels must be >= 2")
    if mode == "inequality_batch":
        if v["batch.size"] < 1:
            raise ConfigError("batch.size must be positive")
        rm = v["batch.refine_M"]
        if rm:
            try:
                GridSpec(v["n"], rm, v["L"])
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
    if mode == "scaling_check":
        lam = v["lambda"]
        if not lam > 0 or abs(math.log2(lam) - round(math.log2(lam))) > 1e-12:
            raise ConfigError(f"scaling_check needs a dyadic lambda, got {lam}")

"""Run configuration: flat ``key = value`` files, presets and validation."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .basis import default_nq
from .filters import EXPONENT_FORMS

METHODS = ("sg", "fsg", "dlra-psi", "dlra-ui", "fdlra-psi", "fdlra-ui", "dlra-psi-nodal")
BC_MODES = ("project", "fixed-basis")
FILTERED = ("fsg", "fdlra-psi", "fdlra-ui")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    method: str = "dlra-psi"
    rank: int = 9
    degree: int = 9
    nq: int = 16
    nx: int = 600
    cfl: float = 0.5
    t_end: float = 0.01
    lam: float = 1e-5
    exponent_form: str = "i2(i+1)2"
    bc_mode: str = "project"
    stabilizers: bool = True
    x_left: float = 0.0
    x_right: float = 1.0
    x0: float = 0.5
    u_left: float = 12.0
    u_right: float = 1.0
    sigma1: float = 0.2
    sigma2: float = 5.0
    out: str = "out"
    basis_points: int = 41
    cache_dir: str = field(default="")

    @property
    def moments(self) -> int:
        return (self.degree + 1) ** 2

    @property
    def filtered(self) -> bool:
        return self.method in FILTERED

    @property
    def is_dlra(self) -> bool:
        return "dlra" in self.method

    @property
    def integrator(self) -> str:
        return "ui" if self.method.endswith("-ui") else "psi"

    def validate(self) -> "RunConfig":
        if self.method not in METHODS:
            raise ConfigError("method", f"must be one of {', '.join(METHODS)}")
        if self.bc_mode not in BC_MODES:
            raise ConfigError("bc_mode", f"must be one of {', '.join(BC_MODES)}")
        if self.exponent_form not in EXPONENT_FORMS:
            raise ConfigError("exponent_form", f"must be one of {', '.join(EXPONENT_FORMS)}")
        if self.degree < 0:
            raise ConfigError("degree", "must be non-negative")
        for key in ("nq", "nx", "rank", "basis_points"):
            if getattr(self, key) < 1:
                raise ConfigError(key, "must be positive")
        if self.is_dlra and self.rank > self.moments:
            raise ConfigError("rank", f"r={self.rank} exceeds (N+1)^2={self.moments}")
        if self.is_dlra and self.rank > self.nx:
            raise ConfigError("rank", f"r={self.rank} exceeds N_x={self.nx}")
        if not 0.0 < self.cfl <= 1.0:
            raise ConfigError("cfl", "must lie in (0, 1]")
        if self.t_end < 0.0:
            raise ConfigError("t_end", "must be non-negative")
        if self.lam < 0.0:
            raise ConfigError("lambda", "must be non-negative")
        if self.bc_mode == "fixed-basis" and self.method not in ("dlra-psi", "dlra-ui"):
            raise ConfigError("bc_mode", "fixed-basis is available for dlra-psi and dlra-ui only")
        if not self.x_left < self.x_right:
            raise ConfigError("x_right", "must exceed x_left")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        return d


# file keys that differ from attribute names
ALIASES = {"lambda": "lam", "n": "degree", "r": "rank", "n_x": "nx"}

PRESETS = {
    "fig1": {"method": "dlra-psi", "rank": 9, "degree": 9, "nq": 16},
    "fig2": {"method": "dlra-ui", "rank": 9, "degree": 9, "nq": 16, "bc_mode": "fixed-basis"},
    "fig3": {"method": "fdlra-psi", "rank": 25, "degree": 19, "nq": default_nq(19), "lam": 1e-5},
    "fig4": {"method": "dlra-psi", "rank": 9, "degree": 9, "nq": 16},
    "fig6": {"method": "dlra-psi", "degree": 9, "nq": 16},
}

_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw):
    kind = _TYPES[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
    except ValueError:
        raise ConfigError(key, f"cannot parse {text!r} as {kind}") from None
    return text


def canonical_key(key: str) -> str:
    k = key.strip().lower().replace("-", "_")
    k = ALIASES.get(k, k)
    if k not in _TYPES:
        raise ConfigError(key, "unknown key")
    return k


def read_config_file(path) -> dict:
    """Flat ``key = value`` pairs; ``[section]`` headers and ``#``/``;`` comments are ignored."""
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].split(";", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key = value, got {line!r}")
        key, value = line.split("=", 1)
        out[canonical_key(key)] = value.strip()
    return out


def build_config(values: dict | None = None, preset: str | None = None, overrides: dict | None = None) -> RunConfig:
    """
    Defaults, then preset, then file values, then overrides (``None`` entries
    skipped). Without an explicit ``nq`` the per-dimension quadrature size
    follows the degree.
    """
    merged = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("preset", f"must be one of {', '.join(PRESETS)}")
        merged.update(PRESETS[preset])
    for src in (values or {}, overrides or {}):
        for key, value in src.items():
            if value is not None:
                merged[canonical_key(key)] = value
    typed = {k: _coerce(k, v) for k, v in merged.items()}
    if "nq" not in typed and "degree" in typed:
        # enough points for the cubic flux integrals unless set explicitly
        typed["nq"] = default_nq(max(int(typed["degree"]), 0))
    return replace(RunConfig(), **typed).validate()


def parse_config(path=None, overrides: dict | None = None, preset: str | None = None) -> RunConfig:
    values = read_config_file(path) if path is not None else {}
    return build_config(values, preset=preset, overrides=overrides)

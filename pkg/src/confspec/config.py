"""Run configuration: a JSON-serializable description of one analysis."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .domains import FactorSpec
from .perturb import DEFAULT_EPS_GRID


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


def _default_operator() -> dict[str, Any]:
    return {"name": "conformal_laplacian", "kind": "torus2", "resolution": 16}


def _default_factors() -> list[dict[str, Any]]:
    return [FactorSpec.single(2).to_dict()]


@dataclass
class Tolerances:
    cluster_tol: float = 1e-8
    zero_tol: float | None = None  # None: 1e-9 * spectral scale
    spread_tol: float | None = None  # None: 1e-9 * |lambda|
    gamma: float = 1e-3
    guard: float | None = None  # None: 1e-3 * window width

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None and f.name in ("zero_tol", "spread_tol", "guard"):
                continue
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v) or v <= 0:
                raise ConfigError(f"tolerance {f.name} must be a positive number, got {v!r}")


@dataclass
class RunConfig:
    operator: dict[str, Any] = field(default_factory=_default_operator)
    factors: list[dict[str, Any]] = field(default_factory=_default_factors)
    eps_grid: list[float] = field(default_factory=lambda: list(DEFAULT_EPS_GRID))
    window: list[float] | None = field(default_factory=lambda: [0.5, 4.5])
    alpha: float = 4.5
    continuity_c: float = 0.5
    index_count: int = 12
    max_steps: int = 10
    tolerances: Tolerances = field(default_factory=Tolerances)
    seed: int = 0
    out: str = "out"

    def validate(self) -> "RunConfig":
        if not isinstance(self.operator, Mapping) or "name" not in self.operator:
            raise ConfigError("operator must be an object with at least a 'name'")
        if not self.factors:
            raise ConfigError("at least one factor spec is required")
        for spec in self.factors:
            try:
                FactorSpec.parse(spec)
            except (ValueError, TypeError, AttributeError, KeyError) as exc:
                raise ConfigError(f"bad factor spec {spec!r}: {exc}") from exc
        try:
            grid = [float(e) for e in self.eps_grid]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"eps_grid must be a list of numbers: {exc}") from exc
        if 0.0 not in grid:
            raise ConfigError("eps_grid must contain 0")
        if not all(math.isfinite(e) for e in grid):
            raise ConfigError("eps_grid entries must be finite")
        if self.window is not None:
            if len(self.window) != 2 or not float(self.window[0]) < float(self.window[1]):
                raise ConfigError(f"window must be [lo, hi] with lo < hi, got {self.window!r}")
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if int(self.index_count) != self.index_count or self.index_count < 1:
            raise ConfigError("index_count must be a positive integer")
        if int(self.max_steps) != self.max_steps or self.max_steps < 0:
            raise ConfigError("max_steps must be a nonnegative integer")
        if int(self.seed) != self.seed:
            raise ConfigError("seed must be an integer")
        self.tolerances.validate()
        return self

    def to_dict(self) -> dict[str, Any]:
        return {"schema": 1, **asdict(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        if not isinstance(data, Mapping):
            raise ConfigError("config must be a JSON object")
        data = dict(data)
        schema = data.pop("schema", 1)
        if schema != 1:
            raise ConfigError(f"unsupported config schema {schema!r}")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        tol = data.pop("tolerances", {}) or {}
        if not isinstance(tol, Mapping):
            raise ConfigError("tolerances must be an object")
        tol_known = {f.name for f in fields(Tolerances)}
        if set(tol) - tol_known:
            raise ConfigError(f"unknown tolerance keys: {sorted(set(tol) - tol_known)}")
        try:
            cfg = cls(tolerances=Tolerances(**tol), **data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate()

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(text)

"""Periodic grids, trapezoid quadrature and band-limited conformal factors.

Domains are the circle S^1 and the flat torus T^2, both with period 2*pi in
every direction. Nodes are uniformly spaced and every node carries the same
trapezoid weight, so multiplication operators are diagonal in node space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

KINDS = ("circle", "torus2")
PHASES = ("cos", "sin")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Domain:
    kind: str
    resolution: int
    nodes: np.ndarray = field(repr=False)
    quad_weights: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return 1 if self.kind == "circle" else 2

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def volume(self) -> float:
        return (2.0 * math.pi) ** self.dim

    def axis(self) -> np.ndarray:
        """1-D coordinate axis shared by every direction."""
        return 2.0 * math.pi * np.arange(self.resolution) / self.resolution

    def coords(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays ``(x,)`` or ``(x, y)`` over the flattened nodes."""
        return tuple(self.nodes[:, i] for i in range(self.dim))

    def vector_weights(self, rank: int = 1) -> np.ndarray:
        """Quadrature weights expanded to a flat section of the given rank.

        Flat sections are stored component-major: all nodes of component 0,
        then all nodes of component 1, and so on.
        """
        return np.tile(self.quad_weights, rank)


def make_domain(kind: str, resolution: int) -> Domain:
    if kind not in KINDS:
        raise ValueError(f"unknown domain kind {kind!r}; expected one of {KINDS}")
    if int(resolution) != resolution or resolution < 8 or resolution % 2:
        raise ValueError(f"resolution must be an even integer >= 8, got {resolution}")
    resolution = int(resolution)
    ax = 2.0 * math.pi * np.arange(resolution) / resolution
    h = 2.0 * math.pi / resolution
    if kind == "circle":
        nodes = ax[:, None]
        weights = np.full(resolution, h)
    else:
        # x is the slow index: node (i, j) sits at flat position i * N + j
        xx, yy = np.meshgrid(ax, ax, indexing="ij")
        nodes = np.column_stack([xx.ravel(), yy.ravel()])
        weights = np.full(resolution * resolution, h * h)
    return Domain(kind, resolution, _frozen(nodes), _frozen(weights))


@dataclass(frozen=True)
class Term:
    kx: int
    ky: int
    phase: str
    coef: float

    def __post_init__(self) -> None:
        if self.phase not in PHASES:
            raise ValueError(f"phase must be 'cos' or 'sin', got {self.phase!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"kx": self.kx, "ky": self.ky, "phase": self.phase, "coef": self.coef}

    def describe(self) -> str:
        parts = []
        if self.kx:
            parts.append(f"{self.kx}x" if self.kx != 1 else "x")
        if self.ky:
            sign = "+" if parts and self.ky > 0 else ""
            mag = f"{self.ky}y" if abs(self.ky) != 1 else ("y" if self.ky > 0 else "-y")
            parts.append(sign + mag)
        arg = "".join(parts) or "0"
        return f"{self.coef:g}*{self.phase}({arg})"


@dataclass(frozen=True)
class FactorSpec:
    """Finite real trigonometric polynomial given by mode/coefficient terms."""

    terms: tuple[Term, ...]

    @classmethod
    def parse(cls, obj: "FactorSpec | Mapping[str, Any] | str") -> "FactorSpec":
        if isinstance(obj, FactorSpec):
            return obj
        if isinstance(obj, str):
            obj = json.loads(obj)
        if not isinstance(obj, Mapping) or "terms" not in obj:
            raise ValueError("factor spec must be an object with a 'terms' list")
        terms = []
        for t in obj["terms"]:
            terms.append(
                Term(
                    int(t.get("kx", 0)),
                    int(t.get("ky", 0)),
                    str(t.get("phase", "cos")),
                    float(t.get("coef", 1.0)),
                )
            )
        return cls(tuple(terms))

    @classmethod
    def single(cls, kx: int, ky: int = 0, phase: str = "cos", coef: float = 1.0) -> "FactorSpec":
        return cls((Term(kx, ky, phase, coef),))

    @classmethod
    def constant(cls, value: float) -> "FactorSpec":
        return cls((Term(0, 0, "cos", float(value)),))

    def to_dict(self) -> dict[str, Any]:
        return {"terms": [t.to_dict() for t in self.terms]}

    def describe(self) -> str:
        return " + ".join(t.describe() for t in self.terms) or "0"


@dataclass(frozen=True)
class ConformalFactor:
    values: np.ndarray = field(repr=False)
    sup_norm: float
    description: str
    spec: FactorSpec | None = None


def factor_from_values(values: Iterable[float], description: str = "custom") -> ConformalFactor:
    vals = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("conformal factor values must be finite")
    return ConformalFactor(_frozen(vals.copy()), float(np.max(np.abs(vals))), description)


def make_factor(domain: Domain, spec: "FactorSpec | Mapping[str, Any] | str") -> ConformalFactor:
    """Evaluate a trigonometric polynomial at the nodes of ``domain``.

    Modes at or above Nyquist are rejected since they alias on the grid.
    """
    spec = FactorSpec.parse(spec)
    nyq = domain.resolution // 2
    coords = domain.coords()
    values = np.zeros(domain.n_nodes)
    for t in spec.terms:
        if domain.kind == "circle" and t.ky != 0:
            raise ValueError("circle factors must have ky == 0")
        if abs(t.kx) >= nyq or abs(t.ky) >= nyq:
            raise ValueError(
                f"mode ({t.kx}, {t.ky}) at or above Nyquist {nyq} for resolution {domain.resolution}"
            )
        arg = t.kx * coords[0]
        if domain.dim == 2:
            arg = arg + t.ky * coords[1]
        values += t.coef * (np.cos(arg) if t.phase == "cos" else np.sin(arg))
    factor = factor_from_values(values, spec.describe())
    return ConformalFactor(factor.values, factor.sup_norm, factor.description, spec)


@dataclass(frozen=True)
class Section:
    components: np.ndarray  # shape (rank, n_nodes)
    domain: Domain

    @property
    def rank(self) -> int:
        return self.components.shape[0]

    @classmethod
    def from_flat(cls, vec: np.ndarray, domain: Domain, rank: int = 1) -> "Section":
        return cls(np.asarray(vec, dtype=float).reshape(rank, domain.n_nodes), domain)

    def flat(self) -> np.ndarray:
        return self.components.reshape(-1)

    def pointwise_norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.components**2, axis=0))


def inner_product(u: Section, v: Section, domain: Domain | None = None) -> float:
    """Quadrature approximation of the integral of the fiberwise product."""
    domain = domain or u.domain
    if u.domain is not domain or v.domain is not domain:
        if not (_same_domain(u.domain, domain) and _same_domain(v.domain, domain)):
            raise ValueError("sections live on different domains")
    if u.components.shape != v.components.shape:
        raise ValueError(f"rank/shape mismatch: {u.components.shape} vs {v.components.shape}")
    pointwise = np.sum(u.components * v.components, axis=0)
    return float(np.dot(domain.quad_weights, pointwise))


def _same_domain(a: Domain, b: Domain) -> bool:
    return a.kind == b.kind and a.resolution == b.resolution


def weighted_dot(x: np.ndarray, y: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``x^T W y`` for flat vectors or column blocks."""
    return x.T @ (weights[:, None] * y if y.ndim == 2 else weights * y)


def weighted_norm(x: np.ndarray, weights: np.ndarray) -> float:
    return float(math.sqrt(np.dot(weights, x * x)))


def candidate_modes(domain: Domain, max_mode: int = 4) -> list[FactorSpec]:
    """Non-constant unit cos/sin modes with |kx|, |ky| <= max_mode.

    Ordered by total degree |kx|+|ky|, then cos before sin, then the
    x-direction first (descending kx). One representative per +/- pair.
    """
    nyq = domain.resolution // 2
    kmax = min(max_mode, nyq - 1)
    modes = []
    if domain.kind == "circle":
        modes = [(kx, 0) for kx in range(1, kmax + 1)]
    else:
        for kx in range(0, kmax + 1):
            for ky in range(-kmax, kmax + 1):
                if kx > 0 or ky > 0:
                    modes.append((kx, ky))
    out = []
    for kx, ky in modes:
        for phase in PHASES:
            out.append((abs(kx) + abs(ky), PHASES.index(phase), -kx, -ky, kx, ky, phase))
    out.sort()
    return [FactorSpec.single(kx, ky, phase) for *_, kx, ky, phase in out]

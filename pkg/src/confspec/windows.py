"""Spectral windows: guarded interval counts, their local constancy, and continuity envelopes."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Sequence

import numpy as np

from .eigensolve import DEFAULT_CLUSTER_TOL, Spectrum, cluster_indices, solve_symmetric
from .operators import ConjugatedFamily, CovariantOperator, family_matrix
from .perturb import DEFAULT_EPS_GRID, growth_envelope, solve_family


@dataclass(frozen=True)
class SpectralWindow:
    lo: float
    hi: float
    guard: float | None = None  # default 1e-3 * width

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or self.lo >= self.hi:
            raise ValueError(f"window needs finite lo < hi, got [{self.lo}, {self.hi}]")
        if self.guard is None:
            object.__setattr__(self, "guard", 1e-3 * (self.hi - self.lo))
        elif self.guard < 0:
            raise ValueError("guard must be nonnegative")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def endpoint_distance(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        return np.minimum(np.abs(v - self.lo), np.abs(v - self.hi))

    def is_clean(self, values) -> bool:
        v = _values(values)
        return bool(v.size == 0 or np.min(self.endpoint_distance(v)) > self.guard)

    def to_dict(self) -> dict[str, float]:
        return {"lo": self.lo, "hi": self.hi, "guard": self.guard}


class WindowCount(NamedTuple):
    count: int
    clean: bool


def _values(spectrum_or_values) -> np.ndarray:
    vals = getattr(spectrum_or_values, "eigenvalues", spectrum_or_values)
    return np.asarray(vals, dtype=float)


def count_in_window(spectrum, window: SpectralWindow) -> WindowCount:
    """Eigenvalues in the closed interval, with multiplicity, plus the clean flag."""
    v = _values(spectrum)
    n = int(np.count_nonzero((v >= window.lo) & (v <= window.hi)))
    return WindowCount(n, window.is_clean(v))


def count_from_clusters(spectrum, window: SpectralWindow, cluster_tol: float = DEFAULT_CLUSTER_TOL) -> int:
    """Same count assembled from clustered eigenspaces (multiplicity per cluster mean)."""
    v = _values(spectrum)
    return sum(len(g) for g in cluster_indices(v, cluster_tol) if window.lo <= np.mean(v[g]) <= window.hi)


def certified_radius(values, window: SpectralWindow, eta: float, sup_norm: float) -> float:
    """Largest |eps| for which the growth bound keeps every eigenvalue off the guarded endpoints.

    Zero eigenvalues never move, so they impose no constraint.
    """
    v = _values(values)
    rate = 2.0 * abs(eta) * sup_norm
    if rate == 0:
        return math.inf
    radius = math.inf
    for lam in v:
        if lam == 0 or abs(lam) < 1e-300:
            continue
        room = float(window.endpoint_distance(lam)) - window.guard
        if room <= 0:
            return 0.0
        radius = min(radius, math.log1p(room / abs(lam)) / rate)
    return radius


@dataclass
class Crossing:
    bracket: tuple[float, float]
    counts: tuple[int, int]
    refined: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"bracket": list(self.bracket), "counts": list(self.counts), "refined": self.refined}


@dataclass
class WindowStabilityReport:
    window: SpectralWindow
    eps: np.ndarray
    counts: np.ndarray
    clean: np.ndarray
    base_count: int
    radius: float
    crossings: list[Crossing]
    passed: bool

    def certified_mask(self) -> np.ndarray:
        return np.abs(self.eps) <= self.radius

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": 1,
            "window": self.window.to_dict(),
            "base_count": self.base_count,
            "certified_radius": self.radius,
            "eps": [float(e) for e in self.eps],
            "counts": [int(c) for c in self.counts],
            "clean": [bool(c) for c in self.clean],
            "certified": [bool(c) for c in self.certified_mask()],
            "crossings": [c.to_dict() for c in self.crossings],
            "passed": self.passed,
        }

    def sweep_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["eps", "count", "clean"])
        for e, n, c in zip(self.eps, self.counts, self.clean):
            writer.writerow([f"{e:.17g}", int(n), int(bool(c))])
        return buf.getvalue()


def _count_at(family: ConjugatedFamily, window: SpectralWindow, eps: float) -> int:
    spec = solve_symmetric(family_matrix(family, eps), family.weights, rank=family.operator.rank)
    return count_in_window(spec, window).count


def _bisect_crossing(family: ConjugatedFamily, window: SpectralWindow, a: float, b: float, ca: int, tol: float) -> float:
    while abs(b - a) > tol:
        m = 0.5 * (a + b)
        if _count_at(family, window, m) == ca:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def window_stability(
    family: ConjugatedFamily,
    window: SpectralWindow,
    eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
    *,
    refine: bool = True,
    refine_tol: float = 1e-6,
) -> WindowStabilityReport:
    """Sweep the window count over eps.

    Passes iff the count is constant on the grid points inside the radius
    where the growth bound certifies that no eigenvalue reaches a guarded
    endpoint. Count changes between neighbouring grid points are reported
    as crossings, optionally refined by bisection.
    """
    eps = np.array(sorted(set(float(e) for e in eps_grid) | {0.0}))
    spectra = solve_family(family, eps)
    base = spectra[int(np.flatnonzero(eps == 0.0)[0])]
    base_count, base_clean = count_in_window(base, window)
    if not base_clean:
        raise ValueError(f"window [{window.lo}, {window.hi}] is not clean at eps = 0 (guard {window.guard})")
    radius = certified_radius(base, window, family.eta, family.factor.sup_norm)
    results = [count_in_window(s, window) for s in spectra]
    counts = np.array([r.count for r in results])
    clean = np.array([r.clean for r in results])
    crossings = []
    for i in range(len(eps) - 1):
        if counts[i] != counts[i + 1]:
            # bisect from the side nearer zero so the bracket reads outward
            a, b, ca = (eps[i], eps[i + 1], counts[i]) if eps[i + 1] > 0 else (eps[i + 1], eps[i], counts[i + 1])
            refined = float(_bisect_crossing(family, window, a, b, int(ca), refine_tol)) if refine else None
            crossings.append(Crossing((float(eps[i]), float(eps[i + 1])), (int(counts[i]), int(counts[i + 1])), refined))
    inside = np.abs(eps) <= radius
    passed = bool(np.all(counts[inside] == base_count))
    return WindowStabilityReport(window, eps, counts, clean, int(base_count), radius, crossings, passed)


@dataclass
class ContinuityReport:
    c: float
    eps: np.ndarray
    base_values: np.ndarray
    values: np.ndarray = field(repr=False)  # (len(eps), index_count)
    max_deviation: np.ndarray
    envelope_margin: np.ndarray  # min over eps of envelope + slack - deviation, per index
    passed: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": 1,
            "c": self.c,
            "eps": [float(e) for e in self.eps],
            "mu0": [float(v) for v in self.base_values],
            "max_deviation": [float(v) for v in self.max_deviation],
            "envelope_margin": [float(v) for v in self.envelope_margin],
            "passed": self.passed,
        }


def continuity_check(
    family: ConjugatedFamily,
    c: float,
    index_count: int,
    eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
    guard: float | None = None,
    slack: float = 1e-8,
) -> ContinuityReport:
    """Track mu_1 <= mu_2 <= ... , the eigenvalues above ``c``, over eps.

    mu_i(eps) is the sorted eigenvalue at the position mu_i occupies at
    eps = 0, and must stay within |mu_i| (e^{2|eta| ||f|| |eps|} - 1) + slack
    of its starting value.
    """
    if index_count < 1:
        raise ValueError("index_count must be positive")
    eps = np.array(sorted(set(float(e) for e in eps_grid) | {0.0}))
    spectra = solve_family(family, eps)
    base = spectra[int(np.flatnonzero(eps == 0.0)[0])].eigenvalues
    g = guard if guard is not None else 1e-6 * max(1.0, abs(c))
    if np.min(np.abs(base - c)) <= g:
        raise ValueError(f"c = {c} lies within {g:.3e} of the spectrum; it must not be an eigenvalue")
    first = int(np.searchsorted(base, c, side="right"))
    if first + index_count > base.size:
        raise ValueError(f"only {base.size - first} eigenvalues above c = {c}")
    idx = slice(first, first + index_count)
    mu0 = base[idx]
    values = np.array([s.eigenvalues[idx] for s in spectra])
    dev = np.abs(values - mu0[None, :])
    env = np.array([growth_envelope(m, family.eta, family.factor.sup_norm, eps) for m in mu0]).T
    margin = np.min(env + slack - dev, axis=0)
    return ContinuityReport(float(c), eps, mu0, values, dev.max(axis=0), margin, bool(np.all(margin >= 0)))


@dataclass
class MultiplicityRow:
    value: float
    multiplicity: int
    within_rank: bool

    def to_dict(self) -> dict[str, Any]:
        return {"value": self.value, "multiplicity": self.multiplicity, "within_rank": self.within_rank}


@dataclass
class MultiplicityReport:
    rank: int
    rows: list[MultiplicityRow]

    @property
    def flagged(self) -> list[MultiplicityRow]:
        return [r for r in self.rows if not r.within_rank]

    @property
    def all_within_rank(self) -> bool:
        return not self.flagged

    def to_dict(self) -> dict[str, Any]:
        return {"schema": 1, "rank": self.rank, "rows": [r.to_dict() for r in self.rows],
                "all_within_rank": self.all_within_rank}


def multiplicity_report(
    spectrum: Spectrum,
    operator: CovariantOperator,
    cluster_tol: float = DEFAULT_CLUSTER_TOL,
    zero_tol: float | None = None,
    window: SpectralWindow | None = None,
) -> MultiplicityReport:
    """Nonzero cluster multiplicities against the fiber rank (observational)."""
    v = spectrum.eigenvalues
    ztol = zero_tol if zero_tol is not None else 1e-9 * spectrum.scale
    rows = []
    for g in cluster_indices(v, cluster_tol):
        value = float(np.mean(v[g]))
        if abs(value) <= ztol:
            continue
        if window is not None and not window.lo <= value <= window.hi:
            continue
        rows.append(MultiplicityRow(value, len(g), len(g) <= operator.rank))
    return MultiplicityReport(operator.rank, rows)

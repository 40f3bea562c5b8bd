"""Conformally covariant operator instances and the conjugated deformation family.

For a conformal change g -> e^{eps f} g, an operator of bidegree (a, b)
transforms as ``P_{e^{eps f} g} = e^{-b eps f/2} P_g e^{a eps f/2}`` (up to a
length-preserving bundle map, which is the identity for every instance here).
The family ``A_f(eps) = e^{eta eps f} P_g e^{eta eps f}`` with
``eta = (a - b)/4`` is self-adjoint in the background inner product and has the
same spectrum as the deformed operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .domains import ConformalFactor, Domain, make_domain, weighted_norm


@dataclass(frozen=True)
class Bidegree:
    a: float
    b: float

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise ValueError(f"bidegree requires a != b, got a = b = {self.a}")

    @property
    def c(self) -> float:
        return (self.a + self.b) / 4.0

    @property
    def eta(self) -> float:
        return (self.a - self.b) / 4.0

    def to_dict(self) -> dict[str, float]:
        return {"a": self.a, "b": self.b}


# (factor, eps) -> sorted exact eigenvalues of the deformed operator in a band
ExactOracle = Callable[[ConformalFactor, float, int], np.ndarray]


@dataclass(frozen=True)
class CovariantOperator:
    name: str
    bidegree: Bidegree
    rank: int
    order: int
    background_matrix: np.ndarray = field(repr=False)
    domain: Domain = field(repr=False)
    exact_oracle: ExactOracle | None = field(default=None, repr=False)
    synthetic: bool = False
    descriptor: Mapping[str, Any] = field(default_factory=dict, repr=False)

    @property
    def eta(self) -> float:
        return self.bidegree.eta

    @property
    def weights(self) -> np.ndarray:
        return self.domain.vector_weights(self.rank)

    @property
    def size(self) -> int:
        return self.background_matrix.shape[0]

    def expand(self, node_values: np.ndarray) -> np.ndarray:
        """Repeat a per-node function over every fiber component."""
        return np.tile(node_values, self.rank)


def weighted_asymmetry(matrix: np.ndarray, weights: np.ndarray) -> float:
    """Max entry of |B - B^T| for ``B = W^{1/2} A W^{-1/2}``, relative to max(1, max|B|)."""
    s = np.sqrt(weights)
    b = s[:, None] * matrix / s[None, :]
    return float(np.max(np.abs(b - b.T)) / max(1.0, float(np.max(np.abs(b)))))


def _circulant(col: np.ndarray) -> np.ndarray:
    n = col.shape[0]
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return col[idx]


def fourier_symbol_matrix(symbol: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Real and imaginary parts of ``F^{-1} diag(symbol) F`` on an N-point grid.

    ``symbol`` is indexed in FFT order. For a real symbol the complex matrix is
    Hermitian, so the real part comes out symmetric and the imaginary part
    skew; both are enforced exactly.
    """
    n = symbol.shape[0]
    col = np.fft.ifft(symbol)  # first column: (1/N) sum_k s_k e^{i k theta_m}
    rev = np.roll(col[::-1], 1)  # col[-m mod N]
    re = 0.5 * (col.real + rev.real)
    im = 0.5 * (col.imag - rev.imag)
    return _circulant(re), _circulant(im)


def _wavenumbers(n: int) -> np.ndarray:
    # FFT order; the Nyquist slot carries -n/2
    return np.fft.fftfreq(n, d=1.0 / n)


def laplacian_1d(n: int) -> np.ndarray:
    """Fourier matrix of -d^2/dx^2; Nyquist mode carries (n/2)^2."""
    re, _ = fourier_symbol_matrix(_wavenumbers(n) ** 2)
    return re


def conformal_laplacian_torus(domain: Domain) -> CovariantOperator:
    """Flat-torus Laplacian, the n = 2 conformal Laplacian (no curvature term).

    Bidegree ((n-2)/2, (n+2)/2) = (0, 2).
    """
    if domain.kind != "torus2":
        raise ValueError(f"conformal_laplacian_torus needs a torus2 domain, got {domain.kind}")
    n = domain.resolution
    lap = laplacian_1d(n)
    eye = np.eye(n)
    matrix = np.kron(lap, eye) + np.kron(eye, lap)
    desc = {"name": "conformal_laplacian", "kind": "torus2", "resolution": n,
            "bidegree": {"a": 0.0, "b": 2.0}}
    return CovariantOperator("conformal_laplacian", Bidegree(0.0, 2.0), 1, 2,
                             _frozen(matrix), domain, descriptor=desc)


def dirac_circle(domain: Domain, spin: str = "antiperiodic") -> CovariantOperator:
    """Circle Dirac operator -i d/dtheta as a real symmetric rank-2 operator.

    Antiperiodic spinors are handled in the periodic gauge v = e^{-i theta/2} u,
    where the operator becomes -i d/dtheta + 1/2. The gauge is a pointwise
    rotation of the fiber, so it commutes with real multiplication operators
    and preserves pointwise norms. The complex matrix H = R + iS acts on
    (Re v, Im v) as [[R, -S], [S, R]].
    """
    if domain.kind != "circle":
        raise ValueError(f"dirac_circle needs a circle domain, got {domain.kind}")
    if spin not in ("periodic", "antiperiodic"):
        raise ValueError(f"spin must be 'periodic' or 'antiperiodic', got {spin!r}")
    n = domain.resolution
    k = _wavenumbers(n)
    if spin == "antiperiodic":
        symbol = k + 0.5  # modes -n/2 .. n/2-1 -> spectrum symmetric about 0
        shift = 0.5
    else:
        k[n // 2] = n / 2  # Nyquist assigned +n/2 so the kernel is constants only
        symbol = k
        shift = 0.0
    re, im = fourier_symbol_matrix(symbol)
    matrix = np.block([[re, -im], [im, re]])

    def oracle(factor: ConformalFactor, eps: float, kmax: int) -> np.ndarray:
        # metric e^{eps f} dtheta^2 has length L; spectrum (2 pi / L)(Z + shift)
        length = float(np.dot(domain.quad_weights, np.exp(0.5 * eps * factor.values)))
        ks = np.arange(-kmax, kmax) + shift if shift else np.arange(-kmax, kmax + 1)
        return np.sort(2.0 * math.pi / length * ks)

    desc = {"name": "dirac", "kind": "circle", "resolution": n, "spin": spin,
            "bidegree": {"a": 0.0, "b": 1.0}}
    # bundle map kappa: identity on the trivialized spinor bundle
    return CovariantOperator(f"dirac_{spin}", Bidegree(0.0, 1.0), 2, 1,
                             _frozen(matrix), domain, exact_oracle=oracle, descriptor=desc)


def synthetic_power(base: CovariantOperator, power: int, bidegree: Bidegree | tuple[float, float]) -> CovariantOperator:
    """Higher-order test instance: the matrix power of ``base`` with a chosen bidegree.

    Only the conjugation family is meaningful for it; no geometric deformed
    operator is claimed.
    """
    if int(power) != power or power < 1:
        raise ValueError(f"power must be a positive integer, got {power}")
    if not isinstance(bidegree, Bidegree):
        bidegree = Bidegree(*bidegree)
    matrix = np.linalg.matrix_power(np.asarray(base.background_matrix), int(power))
    # weighted symmetric since the weights are uniform per operator
    matrix = 0.5 * (matrix + matrix.T)
    desc = dict(base.descriptor)
    desc["power"] = int(power)
    desc["bidegree"] = bidegree.to_dict()
    return CovariantOperator(f"{base.name}^{power}", bidegree, base.rank, base.order * int(power),
                             _frozen(matrix), base.domain, synthetic=power > 1 or base.synthetic,
                             descriptor=desc)


def operator_from_descriptor(desc: Mapping[str, Any]) -> CovariantOperator:
    """Build an operator from its JSON descriptor."""
    try:
        name = desc["name"]
        kind = desc["kind"]
        resolution = int(desc["resolution"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"invalid operator descriptor: {exc}") from exc
    domain = make_domain(kind, resolution)
    if name in ("conformal_laplacian", "laplacian"):
        op = conformal_laplacian_torus(domain)
    elif name == "dirac":
        op = dirac_circle(domain, desc.get("spin", "antiperiodic"))
    else:
        raise ValueError(f"unknown operator name {name!r}")
    power = int(desc.get("power", 1))
    bd = desc.get("bidegree")
    if power != 1 or (bd and (bd["a"], bd["b"]) != (op.bidegree.a, op.bidegree.b)):
        bidegree = Bidegree(float(bd["a"]), float(bd["b"])) if bd else op.bidegree
        op = synthetic_power(op, power, bidegree)
    return op


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ConjugatedFamily:
    operator: CovariantOperator
    factor: ConformalFactor

    @property
    def eta(self) -> float:
        return self.operator.eta

    @property
    def exponent(self) -> np.ndarray:
        """eta * f expanded over the fiber components."""
        return self.operator.expand(self.eta * self.factor.values)

    @property
    def weights(self) -> np.ndarray:
        return self.operator.weights

    def conjugator(self, eps: float) -> np.ndarray:
        return np.exp(eps * self.exponent)


def family_matrix(family: ConjugatedFamily, eps: float) -> np.ndarray:
    """A_f(eps) = E P E with E = diag(e^{eta eps f})."""
    if not math.isfinite(eps):
        raise ValueError(f"eps must be finite, got {eps}")
    p = family.operator.background_matrix
    if eps == 0.0:
        return np.array(p)
    e = family.conjugator(eps)
    return e[:, None] * p * e[None, :]


def derivative_matrix(family: ConjugatedFamily, k: int, eps: float = 0.0) -> np.ndarray:
    """k-th eps-derivative of A_f at ``eps``.

    eta^k * sum_l C(k, l) f^{k-l} A_f(eps) f^l. This is the raw derivative;
    divide by k! for the Taylor coefficient.
    """
    if int(k) != k or k < 1:
        raise ValueError(f"derivative order must be a positive integer, got {k}")
    a = family_matrix(family, eps)
    f = family.operator.expand(family.factor.values)
    out = np.zeros_like(a)
    for l in range(k + 1):
        out += math.comb(k, l) * (f ** (k - l))[:, None] * a * (f**l)[None, :]
    out *= family.eta**k
    return 0.5 * (out + out.T)


@dataclass
class BoundRow:
    lhs: float
    rhs: float
    passed: bool


@dataclass
class DerivativeBoundReport:
    k: int
    rows: list[BoundRow]

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)


def derivative_bound_check(family: ConjugatedFamily, k: int, samples, rel_slack: float = 1e-8) -> DerivativeBoundReport:
    """Check ||A^(k) u|| <= (2|eta| ||f||_inf)^k / k! * ||A u|| on sample sections.

    ``A^(k)`` is the Taylor coefficient (derivative over k!) at eps = 0.
    """
    w = family.weights
    a = family_matrix(family, 0.0)
    dk = derivative_matrix(family, k) / math.factorial(k)
    const = (2.0 * abs(family.eta) * family.factor.sup_norm) ** k / math.factorial(k)
    rows = []
    for u in samples:
        u = np.asarray(getattr(u, "components", u), dtype=float).reshape(-1)
        if not np.any(u):
            raise ValueError("sample sections must be nonzero")
        lhs = weighted_norm(dk @ u, w)
        rhs = const * weighted_norm(a @ u, w)
        rows.append(BoundRow(lhs, rhs, lhs <= rhs * (1.0 + rel_slack)))
    return DerivativeBoundReport(int(k), rows)

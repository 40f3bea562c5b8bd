"""Dense symmetric eigensolvers, weighted and generalized reductions, clustering.

A matrix ``A`` is symmetric with respect to positive weights ``w`` when
``diag(w) A`` is symmetric. The similarity ``B = W^{1/2} A W^{-1/2}`` turns
it into an ordinary symmetric matrix, and eigenvectors are mapped back so
they are orthonormal in the weighted inner product.

Three backends solve the reduced problem:

* ``"lapack"``  -- numpy's ``eigh`` (default, fast)
* ``"ql"``      -- Householder tridiagonalization + implicit-shift QL
* ``"jacobi"``  -- cyclic Jacobi rotations, used as an independent cross-check
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

SYM_TOL = 1e-8
DEFAULT_CLUSTER_TOL = 1e-8


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    rank: int = 1

    def __len__(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def scale(self) -> float:
        return max(1.0, float(np.max(np.abs(self.eigenvalues)))) if len(self) else 1.0


@dataclass(frozen=True)
class Eigenspace:
    value: float
    basis: np.ndarray = field(repr=False)  # columns, weighted-orthonormal
    multiplicity: int
    cluster_tol: float
    indices: tuple[int, ...]
    eigenvalues: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    rank: int = 1
    cluster_id: int = 0


# ---------------------------------------------------------------- backends


def householder_tridiagonalize(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reduce symmetric ``a`` to tridiagonal form, ``a = Q T Q^T``.

    Returns the diagonal ``d``, the subdiagonal ``e`` (length n, last entry 0)
    and the orthogonal ``Q``.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    q = np.eye(n)
    for k in range(n - 2):
        x = a[k + 1 :, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        if x[0] > 0:
            alpha = -alpha
        v = x.copy()
        v[0] -= alpha
        vnorm = np.linalg.norm(v)
        if vnorm == 0.0:
            continue
        v /= vnorm
        # H = I - 2 v v^T; H S H = S - 2 v q^T - 2 q v^T with q = S v - (v.S v) v
        a[k + 1 :, k] = 0.0
        a[k, k + 1 :] = 0.0
        a[k + 1, k] = a[k, k + 1] = alpha
        sub = a[k + 1 :, k + 1 :]
        p = sub @ v
        qv = p - (v @ p) * v
        sub -= 2.0 * (np.outer(v, qv) + np.outer(qv, v))
        q[:, k + 1 :] -= 2.0 * np.outer(q[:, k + 1 :] @ v, v)
    d = np.diag(a).copy()
    e = np.zeros(n)
    e[: n - 1] = np.diag(a, -1)
    return d, e, q


def tridiagonal_ql(d: np.ndarray, e: np.ndarray, z: np.ndarray, max_iter: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Implicit-shift QL on a symmetric tridiagonal matrix.

    ``e[i]`` couples rows i and i+1. Rotations are accumulated into the
    columns of ``z`` (pass the Householder ``Q`` to get eigenvectors of the
    original matrix).
    """
    d = np.array(d, dtype=float)
    e = np.array(e, dtype=float)
    z = np.array(z, dtype=float)
    n = d.shape[0]
    tiny = np.finfo(float).eps
    # absolute floor: couplings below eps * ||T|| are negligible backward errors
    floor = tiny * (float(np.max(np.abs(d)) + np.max(np.abs(e))) if n else 0.0)
    for l in range(n):
        it = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= tiny * dd or abs(e[m]) <= floor:
                    break
                m += 1
            if m == l:
                break
            it += 1
            if it > max_iter:
                raise RuntimeError("QL iteration failed to converge")
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = c = 1.0
            p = 0.0
            i = m - 1
            underflow = False
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                zi1 = z[:, i + 1].copy()
                z[:, i + 1] = s * z[:, i] + c * zi1
                z[:, i] = c * z[:, i] - s * zi1
                i -= 1
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    order = np.argsort(d, kind="stable")
    return d[order], z[:, order]


def jacobi_eigh(a: np.ndarray, tol: float | None = None, max_sweeps: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigenvalue algorithm for a symmetric matrix."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    scale = max(np.linalg.norm(a), 1e-300)
    if tol is None:
        tol = max(n, 1) * np.finfo(float).eps
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.hypot(t, 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise RuntimeError("Jacobi iteration failed to converge")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def _eigh(b: np.ndarray, method: str) -> tuple[np.ndarray, np.ndarray]:
    if method == "lapack":
        return np.linalg.eigh(b)
    if method not in ("ql", "jacobi"):
        raise ValueError(f"unknown eigensolver method {method!r}")
    # unit scaling keeps the in-house convergence tests away from under/overflow
    scale = float(np.max(np.abs(b))) if b.size else 0.0
    if scale == 0.0:
        return np.zeros(b.shape[0]), np.eye(b.shape[0])
    if method == "ql":
        d, e, q = householder_tridiagonalize(b / scale)
        vals, vecs = tridiagonal_ql(d, e, q)
    else:
        vals, vecs = jacobi_eigh(b / scale)
    return vals * scale, vecs


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the first component of significant size positive in every column."""
    if vectors.size == 0:
        return vectors
    mags = np.abs(vectors)
    thresh = 1e-8 * mags.max(axis=0, keepdims=True)
    first = np.argmax(mags > thresh, axis=0)
    signs = np.sign(vectors[first, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


# ---------------------------------------------------------------- solvers


def _validate(matrix: np.ndarray, weights: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    w = np.ones(a.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (a.shape[0],):
        raise ValueError(f"weights must have shape ({a.shape[0]},), got {w.shape}")
    if not np.all(w > 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive and finite")
    return a, w


def solve_symmetric(matrix: np.ndarray, weights: np.ndarray | None = None, *, method: str = "lapack", rank: int = 1) -> Spectrum:
    """Full eigendecomposition of a weighted-symmetric matrix.

    Eigenvectors are orthonormal in ``<x, y> = sum w x y`` and sign-fixed so
    identical input gives identical output.
    """
    a, w = _validate(matrix, weights)
    s = np.sqrt(w)
    b = s[:, None] * a / s[None, :]
    asym = float(np.max(np.abs(b - b.T))) if b.size else 0.0
    if asym > SYM_TOL * max(1.0, float(np.max(np.abs(b))) if b.size else 1.0):
        raise ValueError(f"matrix is not symmetric in the weighted inner product (asymmetry {asym:.3e})")
    b = 0.5 * (b + b.T)
    vals, vecs = _eigh(b, method)
    vecs = _fix_signs(vecs / s[:, None])
    return Spectrum(vals, vecs, w, rank)


def solve_generalized(stiffness: np.ndarray, mass_diagonal: np.ndarray, weights: np.ndarray | None = None, *, method: str = "lapack", rank: int = 1) -> Spectrum:
    """Solve ``K u = lambda M u`` with diagonal positive mass ``M``.

    Reduced symmetrically by ``M^{-1/2}``; eigenvectors are orthonormal in the
    mass-weighted inner product ``sum w m x y``.
    """
    k, w = _validate(stiffness, weights)
    m = np.asarray(mass_diagonal, dtype=float)
    if m.shape != (k.shape[0],):
        raise ValueError(f"mass_diagonal must have shape ({k.shape[0]},), got {m.shape}")
    if not np.all(m > 0):
        raise ValueError("mass entries must be positive")
    r = 1.0 / np.sqrt(m)
    inner = solve_symmetric(r[:, None] * k * r[None, :], w, method=method, rank=rank)
    vecs = _fix_signs(inner.eigenvectors * r[:, None])
    return Spectrum(inner.eigenvalues, vecs, w * m, rank)


def residuals(matrix: np.ndarray, spectrum: Spectrum) -> np.ndarray:
    """Per-pair residual ``||A v - lambda v||`` in the weighted norm."""
    r = matrix @ spectrum.eigenvectors - spectrum.eigenvectors * spectrum.eigenvalues[None, :]
    return np.sqrt(np.sum(spectrum.weights[:, None] * r * r, axis=0))


def gram(spectrum_or_basis, weights: np.ndarray | None = None) -> np.ndarray:
    if isinstance(spectrum_or_basis, Spectrum):
        v, w = spectrum_or_basis.eigenvectors, spectrum_or_basis.weights
    else:
        v, w = spectrum_or_basis, weights
    return v.T @ (w[:, None] * v)


# ---------------------------------------------------------------- clustering


def cluster_indices(eigenvalues: np.ndarray, cluster_tol: float = DEFAULT_CLUSTER_TOL) -> list[list[int]]:
    """Group ascending eigenvalues whose consecutive gap is <= tol * max(1, |value|)."""
    if cluster_tol <= 0:
        raise ValueError("cluster_tol must be positive")
    groups: list[list[int]] = []
    for i, lam in enumerate(eigenvalues):
        if groups:
            prev = eigenvalues[groups[-1][-1]]
            if lam - prev <= cluster_tol * max(1.0, abs(prev), abs(lam)):
                groups[-1].append(i)
                continue
        groups.append([i])
    return groups


def gauge_fix(basis: np.ndarray, weights: np.ndarray, observable: np.ndarray | None) -> np.ndarray:
    """Rotate a cluster basis to diagonalize a multiplication observable, then fix signs."""
    if observable is not None and basis.shape[1] > 1:
        obs = basis.T @ ((weights * observable)[:, None] * basis)
        _, rot = np.linalg.eigh(0.5 * (obs + obs.T))
        basis = basis @ rot
    return _fix_signs(basis)


def cluster(spectrum: Spectrum, cluster_tol: float = DEFAULT_CLUSTER_TOL, gauge: np.ndarray | None = None) -> list[Eigenspace]:
    """Split a spectrum into clustered eigenspaces.

    ``gauge`` is an optional per-entry multiplication observable (already
    expanded over fiber components) used to fix the basis inside each cluster.
    """
    out = []
    for cid, idx in enumerate(cluster_indices(spectrum.eigenvalues, cluster_tol)):
        vals = spectrum.eigenvalues[idx]
        basis = gauge_fix(spectrum.eigenvectors[:, idx], spectrum.weights, gauge)
        out.append(
            Eigenspace(
                value=float(np.mean(vals)),
                basis=basis,
                multiplicity=len(idx),
                cluster_tol=cluster_tol,
                indices=tuple(idx),
                eigenvalues=vals,
                weights=spectrum.weights,
                rank=spectrum.rank,
                cluster_id=cid,
            )
        )
    return out


def multiplicities(spectrum: Spectrum, cluster_tol: float = DEFAULT_CLUSTER_TOL) -> list[tuple[float, int]]:
    return [(float(np.mean(spectrum.eigenvalues[g])), len(g))
            for g in cluster_indices(spectrum.eigenvalues, cluster_tol)]


def spectrum_csv(spectrum: Spectrum, cluster_tol: float = DEFAULT_CLUSTER_TOL) -> str:
    """CSV text with columns index,eigenvalue,multiplicity_cluster_id."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "eigenvalue", "multiplicity_cluster_id"])
    for cid, idx in enumerate(cluster_indices(spectrum.eigenvalues, cluster_tol)):
        for i in idx:
            writer.writerow([i, f"{spectrum.eigenvalues[i]:.17g}", cid])
    return buf.getvalue()

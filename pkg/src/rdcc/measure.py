"""Discrete probability measures on Euclidean or finite alphabets.

Atoms are stored as numpy arrays: shape ``(n, d)`` floats for a Euclidean
alphabet of dimension ``d`` and shape ``(n,)`` integers for a finite
alphabet with the discrete 0/1 metric.  Balls are closed everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError

WEIGHT_FLOOR = 1e-15
MASS_TOL = 1e-12


@dataclass(frozen=True)
class MetricAlphabet:
    """Either ``euclidean`` of dimension ``size`` or ``finite`` with ``size`` symbols."""

    kind: str
    size: int

    def __post_init__(self):
        if self.kind not in ("euclidean", "finite"):
            raise InputError(f"alphabet.kind must be 'euclidean' or 'finite', got {self.kind!r}")
        if int(self.size) < 1:
            raise InputError("alphabet.size must be >= 1")

    @classmethod
    def euclidean(cls, dim: int = 1) -> "MetricAlphabet":
        return cls("euclidean", int(dim))

    @classmethod
    def finite(cls, n: int) -> "MetricAlphabet":
        return cls("finite", int(n))

    @property
    def is_finite(self) -> bool:
        return self.kind == "finite"

    def coerce(self, points) -> np.ndarray:
        """Return ``points`` as an atom array for this alphabet, validating it."""
        if self.is_finite:
            arr = np.asarray(points)
            if arr.ndim == 2 and arr.shape[1] == 1:
                arr = arr[:, 0]
            arr = np.atleast_1d(arr)
            if arr.ndim != 1:
                raise InputError("finite-alphabet points must be symbol indices")
            if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
                raise InputError("finite-alphabet symbols must be integers")
            arr = arr.astype(np.int64)
            if arr.size and (arr.min() < 0 or arr.max() >= self.size):
                raise InputError(f"symbol index outside alphabet of size {self.size}")
            return arr
        arr = np.asarray(points, dtype=float)
        if arr.ndim <= 1 and self.size == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2 or arr.shape[1] != self.size:
            raise InputError(
                f"dimension mismatch: expected points of dimension {self.size}, got shape {np.shape(points)}"
            )
        if not np.all(np.isfinite(arr)):
            raise InputError("point coordinates must be finite")
        return arr

    def point(self, p) -> np.ndarray:
        """Coerce a single point; returns shape ``(d,)`` or a 0-d integer array."""
        arr = self.coerce([p])
        if len(arr) != 1:
            raise InputError("expected a single point")
        return arr[0]

    def sq_distance(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Pairwise squared distances between atom arrays ``a`` and ``b``."""
        if self.is_finite:
            return (a[:, None] != b[None, :]).astype(float)
        diff = a[:, None, :] - b[None, :, :]
        if self.size == 1:
            return diff[..., 0] ** 2
        return np.einsum("ijk,ijk->ij", diff, diff)

    def distance(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Pairwise distances between atom arrays ``a`` and ``b``."""
        if self.is_finite:
            return (a[:, None] != b[None, :]).astype(float)
        if self.size == 1:
            return np.abs(a[:, None, 0] - b[None, :, 0])
        return np.sqrt(self.sq_distance(a, b))

    def to_json(self) -> dict:
        key = "size" if self.is_finite else "dim"
        return {"kind": self.kind, key: self.size}

    @classmethod
    def from_json(cls, obj: dict) -> "MetricAlphabet":
        if not isinstance(obj, dict) or "kind" not in obj:
            raise InputError("alphabet must be an object with a 'kind' field")
        if obj["kind"] == "finite":
            return cls.finite(obj.get("size", 0))
        if obj["kind"] == "euclidean":
            return cls.euclidean(obj.get("dim", 1))
        raise InputError(f"alphabet.kind must be 'euclidean' or 'finite', got {obj['kind']!r}")


def _lex_order(atoms: np.ndarray) -> np.ndarray:
    if atoms.ndim == 1:
        return np.argsort(atoms, kind="stable")
    return np.lexsort(atoms.T[::-1])


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """A probability measure ``sum_j w_j delta_{a_j}``.

    Weights below ``WEIGHT_FLOOR`` are dropped and the rest renormalised, so
    the stored weights always sum to one.  Pass ``normalize=True`` to accept
    unnormalised nonnegative weights.
    """

    atoms: np.ndarray
    weights: np.ndarray
    alphabet: MetricAlphabet

    def __init__(self, atoms, weights=None, alphabet: MetricAlphabet | None = None, *, normalize=False):
        if alphabet is None:
            arr = np.asarray(atoms, dtype=float)
            alphabet = MetricAlphabet.euclidean(1 if arr.ndim <= 1 else arr.shape[1])
        atoms = alphabet.coerce(atoms)
        n = len(atoms)
        w = np.full(n, 1.0 / n) if weights is None and n else np.asarray(weights, dtype=float).ravel()
        if w.shape != (n,):
            raise InputError(f"atoms and weights differ in length ({n} vs {w.size})")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise InputError("weights must be finite and nonnegative")
        atoms, w = self._check_mass(atoms, w, normalize)
        atoms = atoms.copy()
        atoms.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "alphabet", alphabet)

    def _check_mass(self, atoms, w, normalize):
        total = w.sum()
        if not normalize and abs(total - 1.0) > MASS_TOL:
            raise InputError(f"weights must sum to 1 (got {total!r})")
        keep = w >= WEIGHT_FLOOR
        atoms, w = atoms[keep], w[keep]
        if len(w) == 0:
            raise InputError("a probability measure needs at least one atom")
        return atoms, w / w.sum()

    # constructors -----------------------------------------------------
    @classmethod
    def point_mass(cls, point, alphabet: MetricAlphabet | None = None) -> "DiscreteMeasure":
        if alphabet is None:
            alphabet = MetricAlphabet.euclidean(max(1, np.size(point)))
        return cls([alphabet.point(point)], [1.0], alphabet)

    @classmethod
    def uniform(cls, atoms, alphabet: MetricAlphabet | None = None) -> "DiscreteMeasure":
        return cls(atoms, None, alphabet)

    # basic properties --------------------------------------------------
    def __len__(self) -> int:
        return len(self.weights)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def dim(self) -> int:
        return self.alphabet.size

    def mean(self) -> np.ndarray:
        if self.alphabet.is_finite:
            raise InputError("mean is undefined on a finite alphabet")
        return self.weights @ self.atoms / self.weights.sum()

    def diameter(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(self.alphabet.distance(self.atoms, self.atoms).max())

    def restrict(self, mask: np.ndarray) -> "SubMeasure":
        return SubMeasure(self.atoms[mask], self.weights[mask], self.alphabet)

    def canonical(self) -> "DiscreteMeasure":
        """Same measure with exact duplicate atoms merged and atoms in lexicographic order."""
        return _merge_exact(self)

    def allclose(self, other: "DiscreteMeasure", atol: float = 1e-12) -> bool:
        a, b = self.canonical(), other.canonical()
        return (
            a.alphabet == b.alphabet
            and len(a) == len(b)
            and np.allclose(a.atoms, b.atoms, atol=atol, rtol=0)
            and np.allclose(a.weights, b.weights, atol=atol, rtol=0)
        )

    # serialisation -----------------------------------------------------
    def to_json(self) -> dict:
        c = self.canonical()
        atoms = c.atoms.tolist()
        return {"alphabet": self.alphabet.to_json(), "atoms": atoms, "weights": c.weights.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "DiscreteMeasure":
        for key in ("alphabet", "atoms", "weights"):
            if key not in obj:
                raise InputError(f"measure object is missing '{key}'")
        return cls(obj["atoms"], obj["weights"], MetricAlphabet.from_json(obj["alphabet"]))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={len(self)}, alphabet={self.alphabet.kind}:{self.alphabet.size}, mass={self.mass:.6g})"


class SubMeasure(DiscreteMeasure):
    """Nonnegative measure with total mass at most one (restrictions, split parts)."""

    def _check_mass(self, atoms, w, normalize):
        if w.sum() > 1.0 + MASS_TOL:
            raise InputError("sub-measure mass exceeds 1")
        return atoms, w.copy()

    @classmethod
    def empty(cls, alphabet: MetricAlphabet) -> "SubMeasure":
        shape = (0,) if alphabet.is_finite else (0, alphabet.size)
        return cls(np.zeros(shape), np.zeros(0), alphabet)

    def canonical(self) -> "SubMeasure":
        return _merge_exact(self)


def _merge_exact(m: DiscreteMeasure):
    if len(m) == 0:
        return m
    order = _lex_order(m.atoms)
    atoms, w = m.atoms[order], m.weights[order]
    if atoms.ndim == 1:
        new = np.r_[True, atoms[1:] != atoms[:-1]]
    else:
        new = np.r_[True, np.any(atoms[1:] != atoms[:-1], axis=1)]
    groups = np.cumsum(new) - 1
    merged = np.bincount(groups, weights=w)
    cls = type(m)
    if cls is DiscreteMeasure:
        return DiscreteMeasure(atoms[new], merged, m.alphabet, normalize=True)
    return cls(atoms[new], merged, m.alphabet)


def ball_mass(m: DiscreteMeasure, center, r: float) -> float:
    """Mass of the closed ball of radius ``r`` around ``center``."""
    if r < 0:
        raise InputError("radius must be nonnegative")
    c = m.alphabet.point(center)
    if len(m) == 0:
        return 0.0
    d = m.alphabet.distance(np.asarray([c]), m.atoms)[0]
    return float(m.weights[d <= r].sum())


@dataclass(frozen=True, eq=False)
class ConcentrationProfile:
    """``Q(r)`` on a radius grid with the atom that realises each maximum."""

    radii: np.ndarray
    values: np.ndarray
    centers: np.ndarray

    def at(self, r: float) -> float:
        i = np.searchsorted(self.radii, r, side="right") - 1
        return 0.0 if i < 0 else float(self.values[i])

    def to_json(self) -> dict:
        return {"radii": self.radii.tolist(), "values": self.values.tolist(), "centers": self.centers.tolist()}


class CenterTable:
    """Sorted distances and cumulative masses from every atom of a measure.

    ``mass(r)[c]`` is the closed-ball mass of radius ``r`` around atom ``c``;
    ``radius(q)[c]`` is the smallest radius whose ball around atom ``c``
    carries mass at least ``q``.  Extra ``centers`` may replace the atoms.
    """

    def __init__(self, m: DiscreteMeasure, centers: np.ndarray | None = None):
        self.measure = m
        self.centers = m.atoms if centers is None else centers
        dist = m.alphabet.distance(self.centers, m.atoms)
        order = np.argsort(dist, axis=1, kind="stable")
        self.sorted_dist = np.take_along_axis(dist, order, axis=1)
        self.cum_mass = np.cumsum(m.weights[order], axis=1)

    def mass(self, r: float) -> np.ndarray:
        # count of atoms with distance <= r, per center
        k = (self.sorted_dist <= r).sum(axis=1)
        out = np.zeros(len(self.centers))
        hit = k > 0
        out[hit] = self.cum_mass[hit, k[hit] - 1]
        return out

    def radius(self, q: float) -> np.ndarray:
        k = (self.cum_mass < q - MASS_TOL).sum(axis=1)
        out = np.full(len(self.centers), np.inf)
        ok = k < self.cum_mass.shape[1]
        out[ok] = self.sorted_dist[ok, k[ok]]
        return out

    def best_center(self, r: float) -> tuple[float, int]:
        """Largest ball mass at radius ``r`` and the index of the center achieving it.

        Ties go to the center closest to the measure's mean (Euclidean) or the
        lowest index (finite), which keeps the choice deterministic.
        """
        masses = self.mass(r)
        best = masses.max()
        tied = np.flatnonzero(masses >= best - 1e-15)
        if len(tied) > 1 and not self.measure.alphabet.is_finite:
            mean = self.measure.mean()
            d = self.measure.alphabet.distance(np.asarray([mean]), self.centers[tied])[0]
            idx = int(tied[np.argmin(d)])
        else:
            idx = int(tied[0])
        return float(best), idx


def concentration_function(m: DiscreteMeasure, radii: Sequence[float]) -> ConcentrationProfile:
    """Atom-centred concentration function ``Q(r) = max_a mass(B_r(a))``.

    Restricting centers to atoms loses at most a factor of two in radius: any
    ball of radius ``r`` with positive mass contains an atom, and the ball of
    radius ``2r`` around that atom covers it.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size == 0:
        raise InputError("radius grid must be a nonempty 1-d sequence")
    if np.any(radii < 0) or np.any(np.diff(radii) <= 0):
        raise InputError("radius grid must be nonnegative and strictly increasing")
    table = CenterTable(m)
    values = np.empty(len(radii))
    centers = []
    for k, r in enumerate(radii):
        values[k], idx = table.best_center(r)
        centers.append(m.atoms[idx])
    # guard against rounding in cumulative sums
    values = np.minimum(np.maximum.accumulate(values), 1.0 if type(m) is DiscreteMeasure else np.inf)
    return ConcentrationProfile(radii, values, np.asarray(centers))


def merge_atoms(m: DiscreteMeasure, eps: float) -> DiscreteMeasure:
    """Merge atoms closer than ``eps`` (single linkage).

    Merged Euclidean atoms sit at their weight-weighted centroid; finite
    symbols keep the heaviest member.  Total mass is preserved exactly up to
    floating-point summation.
    """
    if eps < 0:
        raise InputError("eps must be nonnegative")
    n = len(m)
    if n <= 1:
        return m
    close = m.alphabet.distance(m.atoms, m.atoms) <= eps
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in zip(*np.nonzero(np.triu(close, 1))):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(n)])
    labels, groups = np.unique(roots, return_inverse=True)
    weights = np.bincount(groups, weights=m.weights)
    if m.alphabet.is_finite:
        atoms = np.array([m.atoms[groups == g][np.argmax(m.weights[groups == g])] for g in range(len(labels))])
    else:
        atoms = np.vstack([
            m.weights[groups == g] @ m.atoms[groups == g] / weights[g] for g in range(len(labels))
        ])
    cls = type(m)
    if cls is DiscreteMeasure:
        # bincount sums are exact up to rounding; renormalising keeps sum == 1
        return DiscreteMeasure(atoms, weights, m.alphabet, normalize=True)
    return cls(atoms, weights, m.alphabet)

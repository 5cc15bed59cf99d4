"""Distortion functions, truncation, coercivity probes and cover witnesses.

Infinite distortion is represented by ``numpy.inf`` and never by a large
sentinel.  Euclidean kinds depend on ``(x, y)`` only through ``|x - y|``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError
from .measure import DiscreteMeasure, MetricAlphabet

KINDS = ("squared_error", "hamming", "dead_zone", "jump_penalty", "bounded_cap", "custom_table")
_PARAMS = {
    "squared_error": (),
    "hamming": (),
    "dead_zone": ("tau",),
    "jump_penalty": ("tau1", "tau2", "J"),
    "bounded_cap": ("C",),
    "custom_table": (),
}


@dataclass(frozen=True, eq=False)
class DistortionSpec:
    """A distortion ``rho(x, y)`` with values in ``[0, inf]``.

    ``truncation`` holds the cap ``K`` of ``min(rho, K)`` when the spec came
    from :func:`truncate`.
    """

    kind: str
    params: dict = field(default_factory=dict)
    table: np.ndarray | None = None
    truncation: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"distortion.kind must be one of {', '.join(KINDS)}; got {self.kind!r}")
        params = {k: float(v) for k, v in dict(self.params).items()}
        missing = [p for p in _PARAMS[self.kind] if p not in params]
        if missing:
            raise InputError(f"distortion.params missing {missing} for kind {self.kind}")
        extra = set(params) - set(_PARAMS[self.kind])
        if extra:
            raise InputError(f"distortion.params has unknown keys {sorted(extra)} for kind {self.kind}")
        if any(v < 0 or math.isnan(v) for v in params.values()):
            raise InputError("distortion.params must be nonnegative")
        if self.kind == "jump_penalty" and not params["tau1"] < params["tau2"]:
            raise InputError("distortion.params requires tau1 < tau2")
        if self.kind == "bounded_cap" and params["C"] <= 0:
            raise InputError("distortion.params.C must be positive")
        object.__setattr__(self, "params", params)
        if self.kind == "custom_table":
            if self.table is None:
                raise InputError("custom_table distortion needs a table")
            t = np.array(self.table, dtype=float)
            if t.ndim != 2 or t.size == 0 or np.any(np.isnan(t)) or np.any(t < 0):
                raise InputError("distortion table must be a nonempty matrix of values in [0, inf]")
            t.flags.writeable = False
            object.__setattr__(self, "table", t)
        if self.truncation is not None and not self.truncation > 0:
            raise InputError("truncation level must be positive")

    # constructors ----------------------------------------------------------
    @classmethod
    def squared_error(cls):
        return cls("squared_error")

    @classmethod
    def hamming(cls):
        return cls("hamming")

    @classmethod
    def dead_zone(cls, tau: float):
        return cls("dead_zone", {"tau": tau})

    @classmethod
    def jump_penalty(cls, tau1: float, tau2: float, J: float):
        return cls("jump_penalty", {"tau1": tau1, "tau2": tau2, "J": J})

    @classmethod
    def bounded_cap(cls, C: float):
        return cls("bounded_cap", {"C": C})

    @classmethod
    def custom_table(cls, table):
        return cls("custom_table", {}, np.asarray(table, dtype=float))

    # evaluation ------------------------------------------------------------
    @property
    def is_table(self) -> bool:
        return self.kind == "custom_table"

    def check_alphabets(self, source: MetricAlphabet, repro: MetricAlphabet) -> None:
        if self.is_table:
            rows, cols = self.table.shape
            if source != MetricAlphabet.finite(rows) or repro != MetricAlphabet.finite(cols):
                raise InputError(
                    f"custom_table of shape {rows}x{cols} needs finite alphabets of sizes {rows} and {cols}"
                )
        elif source != repro:
            raise InputError(f"alphabet mismatch: {source} vs {repro}")
        elif source.is_finite and self.kind != "hamming":
            raise InputError(f"{self.kind} needs a Euclidean alphabet")

    def _radial(self, dist: np.ndarray, sq: np.ndarray) -> np.ndarray:
        p = self.params
        if self.kind == "squared_error":
            return sq
        if self.kind == "dead_zone":
            return np.where(dist > p["tau"], sq, 0.0)
        if self.kind == "jump_penalty":
            out = np.where(dist <= p["tau1"], sq, sq + p["J"])
            return np.where(dist <= p["tau2"], out, np.inf)
        if self.kind == "bounded_cap":
            return np.minimum(sq, p["C"])
        if self.kind == "hamming":
            return (dist > 0).astype(float)
        raise AssertionError(self.kind)

    def matrix(self, xs: np.ndarray, ys: np.ndarray, source: MetricAlphabet, repro: MetricAlphabet | None = None) -> np.ndarray:
        """Distortion matrix ``rho[i, j] = rho(xs[i], ys[j])`` for atom arrays."""
        repro = source if repro is None else repro
        self.check_alphabets(source, repro)
        if self.is_table:
            out = self.table[np.ix_(xs, ys)]
        else:
            out = self._radial(source.distance(xs, ys), source.sq_distance(xs, ys))
        if self.truncation is not None:
            out = np.minimum(out, self.truncation)
        return np.asarray(out, dtype=float)

    def profile(self, t) -> np.ndarray:
        """Radial profile ``rho`` as a function of the distance ``t`` (Euclidean kinds)."""
        if self.is_table:
            raise InputError("custom_table has no radial profile")
        t = np.asarray(t, dtype=float)
        out = self._radial(t, t * t)
        if self.truncation is not None:
            out = np.minimum(out, self.truncation)
        return out

    def between(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> np.ndarray:
        return self.matrix(mu.atoms, nu.atoms, mu.alphabet, nu.alphabet)

    # serialisation ---------------------------------------------------------
    def to_json(self) -> dict:
        out = {"kind": self.kind, "params": dict(self.params)}
        if self.is_table:
            out["table"] = [["inf" if math.isinf(v) else v for v in row] for row in self.table.tolist()]
        if self.truncation is not None:
            out["truncation"] = self.truncation
        return out

    @classmethod
    def from_json(cls, obj: dict, base_dir=None) -> "DistortionSpec":
        if not isinstance(obj, dict):
            raise InputError("distortion must be an object")
        kind = obj.get("kind")
        if kind not in KINDS:
            raise InputError(f"distortion.kind must be one of {', '.join(KINDS)}; got {kind!r}")
        table = None
        if kind == "custom_table":
            if "table" in obj:
                table = np.array([[float(v) for v in row] for row in obj["table"]], dtype=float)
            elif "table_csv" in obj:
                path = obj["table_csv"]
                if base_dir is not None:
                    path = Path(base_dir) / path
                table = load_table_csv(path)
            else:
                raise InputError("distortion.table or distortion.table_csv is required for custom_table")
        params = obj.get("params", {})
        if not isinstance(params, dict):
            raise InputError("distortion.params must be an object")
        return cls(kind, params, table, obj.get("truncation"))

    def __repr__(self):
        extra = f", K={self.truncation}" if self.truncation is not None else ""
        if self.is_table:
            return f"DistortionSpec(custom_table {self.table.shape}{extra})"
        return f"DistortionSpec({self.kind}, {self.params}{extra})"


def load_table_csv(path) -> np.ndarray:
    """Read a distortion matrix: rows are source symbols, columns reproduction symbols."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c.strip()) for c in row])
            except ValueError as exc:
                raise InputError(f"{path}: non-numeric entry ({exc})") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise InputError(f"{path}: table must be a nonempty rectangular matrix")
    return np.array(rows)


def evaluate(rho: DistortionSpec, x, y, alphabet: MetricAlphabet | None = None, repro: MetricAlphabet | None = None) -> float:
    """``rho(x, y)`` for single points."""
    if alphabet is None:
        if rho.is_table:
            alphabet = MetricAlphabet.finite(rho.table.shape[0])
        else:
            alphabet = MetricAlphabet.euclidean(max(1, np.size(x)))
    if repro is None:
        repro = MetricAlphabet.finite(rho.table.shape[1]) if rho.is_table else alphabet
    xs = alphabet.coerce([x] if not alphabet.is_finite else [int(x)])
    ys = repro.coerce([y] if not repro.is_finite else [int(y)])
    return float(rho.matrix(xs, ys, alphabet, repro)[0, 0])


def truncate(rho: DistortionSpec, K: float) -> DistortionSpec:
    """``min(rho, K)``; never infinite."""
    if not K > 0:
        raise InputError("truncation level K must be positive")
    level = K if rho.truncation is None else min(K, rho.truncation)
    return replace(rho, truncation=float(level))


# ---------------------------------------------------------------------------
# coercivity


@dataclass(frozen=True)
class CoercivityReport:
    reference: list
    level: float
    radius: float | None
    verdict: str
    note: str = ""

    def to_json(self) -> dict:
        return {"reference": self.reference, "level": self.level, "radius": self.radius,
                "verdict": self.verdict, "note": self.note}


def level_radius(rho: DistortionSpec, M: float) -> float | None:
    """Smallest ``t`` such that every distance beyond ``t`` has ``rho >= M``.

    Closed form for the built-in radial kinds, all of which are
    non-decreasing in the distance.  ``None`` when the level is never reached.
    """
    p = rho.params
    if rho.truncation is not None and M > rho.truncation:
        return None
    if rho.kind == "squared_error":
        return math.sqrt(M)
    if rho.kind == "dead_zone":
        # rho = t^2 only for t > tau; the threshold itself sits in the zero branch
        return max(math.sqrt(M), p["tau"])
    if rho.kind == "jump_penalty":
        t1, t2, J = p["tau1"], p["tau2"], p["J"]
        if M <= t1 * t1:
            return math.sqrt(M)
        if M <= t1 * t1 + J:
            return t1
        if M - J <= t2 * t2:
            return math.sqrt(M - J)
        return t2
    if rho.kind == "bounded_cap":
        return math.sqrt(M) if M <= p["C"] else None
    if rho.kind == "hamming":
        return 0.0 if M <= 1 else None
    raise InputError(f"no closed-form level radius for {rho.kind}")


def coercivity_probe(rho: DistortionSpec, x, y0, M: float, probe_budget: int = 1000,
                     alphabet: MetricAlphabet | None = None, seed: int = 0) -> CoercivityReport:
    """Find ``K_M`` with ``rho(x, y) >= M`` whenever ``d(y0, y) > K_M``.

    For radial kinds ``K_M = t_M + d(x, y0)`` where ``t_M`` is the level
    radius of the profile (triangle inequality).  Finite alphabets are
    compact, so the probe is reported inconclusive there.
    """
    if not M > 0:
        raise InputError("probe level M must be positive")
    if probe_budget < 1:
        raise InputError("probe_budget must be >= 1")
    if rho.is_table or (alphabet is not None and alphabet.is_finite):
        ref = [int(y0)] if np.ndim(y0) == 0 else list(y0)
        return CoercivityReport(ref, float(M), None, "inconclusive",
                                "finite alphabet is compact; coercivity is not needed")
    alphabet = alphabet or MetricAlphabet.euclidean(max(1, np.size(x)))
    xp, yp = alphabet.point(x), alphabet.point(y0)
    offset = float(alphabet.distance(xp[None], yp[None])[0, 0])
    ref = yp.tolist()
    if rho.kind in ("squared_error", "dead_zone", "jump_penalty", "bounded_cap", "hamming"):
        t = level_radius(rho, M)
        if t is None:
            return CoercivityReport(ref, float(M), None, "not_coercive",
                                    f"{rho.kind} is bounded below level {M}")
        return CoercivityReport(ref, float(M), t + offset, "coercive", "closed form")
    return _sampled_probe(rho, xp, yp, M, probe_budget, alphabet, seed)


def _sampled_probe(rho, xp, yp, M, budget, alphabet, seed) -> CoercivityReport:
    # fallback for kinds without a closed form: sampling can refute but not certify
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(budget, alphabet.size))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.geomspace(1e-3, 1e6, budget)
    ys = yp + dirs * radii[:, None]
    vals = rho.matrix(xp[None], ys, alphabet)[0]
    below = radii[vals < M]
    note = f"sampled {budget} probes"
    if below.size and below.max() >= radii[-1] * 0.5:
        return CoercivityReport(yp.tolist(), float(M), None, "not_coercive", note + "; far probes stay below M")
    return CoercivityReport(yp.tolist(), float(M), None, "inconclusive", note)


# ---------------------------------------------------------------------------
# finite cover and maximal distortion


@dataclass(frozen=True, eq=False)
class CoverWitness:
    points: np.ndarray
    covered_mass: float
    eps: float
    covered: np.ndarray  # boolean mask over source atoms

    def to_json(self) -> dict:
        return {"B": self.points.tolist(), "covered_mass": self.covered_mass, "eps": self.eps}


def finite_cover_witness(mu: DiscreteMeasure, rho: DistortionSpec, eps: float, max_size: int = 10,
                         candidates: np.ndarray | None = None, repro: MetricAlphabet | None = None) -> CoverWitness:
    """Greedy finite set ``B`` with ``min_{y in B} rho(x, y) < eps`` on as much mass as possible.

    Candidates default to the source atoms (or the whole reproduction
    alphabet for tables).  Each step adds the candidate covering the most
    still-uncovered mass; ties go to the lowest index.
    """
    if not eps > 0:
        raise InputError("eps must be positive")
    if repro is None:
        repro = MetricAlphabet.finite(rho.table.shape[1]) if rho.is_table else mu.alphabet
    if candidates is None:
        candidates = np.arange(repro.size) if rho.is_table else mu.atoms
    candidates = repro.coerce(candidates)
    hits = rho.matrix(mu.atoms, candidates, mu.alphabet, repro) < eps
    covered = np.zeros(len(mu), dtype=bool)
    chosen: list[int] = []
    while len(chosen) < max_size and not covered.all():
        gain = mu.weights @ (hits & ~covered[:, None])
        j = int(np.argmax(gain))
        if gain[j] <= 0:
            break
        chosen.append(j)
        covered |= hits[:, j]
    pts = candidates[chosen] if chosen else candidates[:0]
    return CoverWitness(pts, float(mu.weights[covered].sum()), float(eps), covered)


def default_candidates(mu: DiscreteMeasure, rho: DistortionSpec, count: int = 2001) -> np.ndarray:
    """Reproduction points to search: the whole finite alphabet, or the source atoms plus a fine
    grid over their hull on the line (the mean in higher dimension)."""
    if rho.is_table:
        return np.arange(rho.table.shape[1])
    if mu.alphabet.is_finite:
        return np.arange(mu.alphabet.size)
    if mu.alphabet.size == 1:
        lo, hi = float(mu.atoms.min()), float(mu.atoms.max())
        return np.unique(np.concatenate([mu.atoms[:, 0], np.linspace(lo, hi, count)]))[:, None]
    return np.vstack([mu.atoms, mu.mean()[None]])


def d_max_estimate(mu: DiscreteMeasure, rho: DistortionSpec, K_grid: Sequence[float], candidates,
                   repro: MetricAlphabet | None = None) -> list[tuple[float, float]]:
    """``min_y sum_i mu_i min(rho(x_i, y), K)`` over candidate points, per ``K``."""
    if repro is None:
        repro = MetricAlphabet.finite(rho.table.shape[1]) if rho.is_table else mu.alphabet
    cand = repro.coerce(candidates)
    if len(cand) == 0:
        raise InputError("candidates must be nonempty")
    K_grid = [float(k) for k in K_grid]
    if any(k <= 0 for k in K_grid) or any(b <= a for a, b in zip(K_grid, K_grid[1:])):
        raise InputError("K grid must be positive and increasing")
    base = rho.matrix(mu.atoms, cand, mu.alphabet, repro)
    return [(K, float((mu.weights @ np.minimum(base, K)).min())) for K in K_grid]


def zero_distortion_gap(rho: DistortionSpec, mu: DiscreteMeasure, candidates=None, repro=None) -> np.ndarray:
    """Per source atom, ``min_y rho(x, y)`` over the candidates; zero where a perfect reproduction exists."""
    if repro is None:
        repro = MetricAlphabet.finite(rho.table.shape[1]) if rho.is_table else mu.alphabet
    if candidates is None:
        candidates = np.arange(repro.size) if rho.is_table else mu.atoms
    return rho.matrix(mu.atoms, repro.coerce(candidates), mu.alphabet, repro).min(axis=1)

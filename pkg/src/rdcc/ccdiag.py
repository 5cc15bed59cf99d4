"""Concentration-compactness diagnostics for finite sequences of measures.

The asymptotic alternatives (compactness, vanishing, dichotomy) are read off
a finite horizon through the radius profile ``R_m(q)``: the smallest grid
radius at which some atom-centred ball of ``mu_m`` carries mass ``q``.  A mass
level whose radius stays bounded along the sequence is "held"; the largest held
level plays the role of the limit ``lambda`` of the concentration function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .distortion import DistortionSpec
from .errors import InputError, PerturbationInfeasible
from .measure import CenterTable, DiscreteMeasure, MetricAlphabet, SubMeasure
from .variational import dual_functional, scaled_distortion

VERDICTS = ("compactness", "vanishing", "dichotomy", "inconclusive")
GROWTH_FACTOR = 1.5
DECAY_EXPONENT = -0.5
SPLIT_MASS_SLACK = 0.01


@dataclass(frozen=True)
class MeasureSequence:
    measures: tuple
    alphabet: MetricAlphabet

    def __init__(self, measures: Sequence[DiscreteMeasure], alphabet: MetricAlphabet | None = None):
        measures = tuple(measures)
        if not measures:
            raise InputError("sequence must contain at least one measure")
        alphabet = alphabet or measures[0].alphabet
        for k, m in enumerate(measures):
            if m.alphabet != alphabet:
                raise InputError(f"measure {k} lives on {m.alphabet}, expected {alphabet}: mixed alphabets")
            if abs(m.mass - 1.0) > 1e-9:
                raise InputError(f"measure {k} has mass {m.mass}, expected 1")
        object.__setattr__(self, "measures", measures)
        object.__setattr__(self, "alphabet", alphabet)

    def __len__(self) -> int:
        return len(self.measures)

    def __iter__(self):
        return iter(self.measures)

    def to_json(self) -> list:
        return [m.to_json() for m in self.measures]

    @classmethod
    def from_json(cls, obj) -> "MeasureSequence":
        if not isinstance(obj, list):
            raise InputError("a sequence file must hold a JSON array of measures")
        return cls([DiscreteMeasure.from_json(o) for o in obj])


def tail_indices(M: int, tail_fraction: float) -> np.ndarray:
    if not 0 < tail_fraction <= 1:
        raise InputError("tail_fraction must lie in (0, 1]")
    k = min(M, max(1, math.ceil(tail_fraction * M)))
    return np.arange(M - k, M)


def default_radius_grid(seq: MeasureSequence, count: int = 64) -> np.ndarray:
    """``0`` plus a geometric grid from half the closest atom spacing to twice the largest diameter."""
    gaps, diam = [], 0.0
    for m in seq:
        if len(m) > 1:
            d = m.alphabet.distance(m.atoms, m.atoms)
            pos = d[d > 0]
            if pos.size:
                gaps.append(pos.min())
        diam = max(diam, m.diameter())
    if not gaps or diam == 0:
        return np.array([0.0, 1.0])
    lo, hi = 0.5 * min(gaps), 2.0 * diam
    return np.concatenate([[0.0], np.geomspace(lo, hi, count)])


def _check_grid(radius_grid) -> np.ndarray:
    g = np.asarray(radius_grid, dtype=float)
    if g.ndim != 1 or g.size == 0 or np.any(g < 0) or np.any(np.diff(g) <= 0):
        raise InputError("radius grid must be nonnegative and strictly increasing")
    return g


def _grid_ceil(grid: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Smallest grid value ``>= r`` (``inf`` beyond the grid)."""
    idx = np.searchsorted(grid, r - 1e-12, side="left")
    out = np.full(np.shape(r), np.inf)
    ok = idx < len(grid)
    out[ok] = grid[idx[ok]]
    return out


@dataclass(eq=False)
class SequenceDiagnosis:
    verdict: str
    lambda_hat: float
    scale_radius: float
    centers: list
    radius_for_eps: dict
    decay_exponent: float
    split: list | None
    thresholds: dict
    profile: list = field(default_factory=list)

    def radius_for(self, eps: float) -> float:
        if eps not in self.radius_for_eps:
            raise KeyError(f"no compactness radius recorded for eps={eps}")
        return self.radius_for_eps[eps]

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "lambda_hat": self.lambda_hat,
            "scale_radius": self.scale_radius,
            "decay_exponent": self.decay_exponent,
            "centers": [np.asarray(c).tolist() for c in self.centers],
            "radius_for": {format(k, ".17g"): v for k, v in sorted(self.radius_for_eps.items())},
            "split": self.split,
            "thresholds": self.thresholds,
            "profile": self.profile,
        }


def _radius_profile(tables, grid, q):
    """Per measure: smallest grid radius at which some atom-centred ball reaches mass ``q``."""
    return np.array([_grid_ceil(grid, t.radius(q)).min() for t in tables])


def classify(seq: MeasureSequence, radius_grid=None, tail_fraction: float = 0.5,
             eps_v: float = 0.05, eps_c: float = 0.05, compact_eps: Sequence[float] = (0.05, 0.01, 1e-3)) -> SequenceDiagnosis:
    """Sort a finite sequence into compactness, vanishing or dichotomy.

    A mass level ``q`` is held when the tail's radius ``max R_m(q)`` is at most
    ``1.5`` times the head's (plus one grid step).  ``lambda_hat`` is the tail
    mean of ``Q_m`` at the radius of the largest held level.  The sequence
    vanishes when ``lambda_hat < eps_v`` or when that held mass decays along
    the tail at least like ``m^-0.5``.
    """
    M = len(seq)
    if M < 3:
        raise InputError("classification needs at least 3 measures")
    grid = _check_grid(default_radius_grid(seq) if radius_grid is None else radius_grid)
    thresholds = {"tail_fraction": tail_fraction, "eps_v": eps_v, "eps_c": eps_c,
                  "growth_factor": GROWTH_FACTOR, "decay_exponent": DECAY_EXPONENT}
    tail = tail_indices(M, tail_fraction)
    head = np.arange(0, tail[0]) if tail[0] > 0 else np.array([0])
    pos = grid[grid > 0]
    step = float(pos.min()) if pos.size else 0.0
    diam = max(m.diameter() for m in seq)

    def empty(verdict, note):
        return SequenceDiagnosis(verdict, math.nan, math.nan, [], {}, math.nan, None,
                                 {**thresholds, "note": note})

    if grid[-1] < diam:
        return empty("inconclusive", f"radius grid ends at {grid[-1]:g} below the diameter {diam:g}")

    tables = [CenterTable(m) for m in seq]
    levels = sorted({float(t.mass(r).max()) for t in tables for r in grid} | {1.0})
    held = None
    profile = []
    for q in levels:
        if q <= 0:
            continue
        Rq = _radius_profile(tables, grid, q)
        ok = bool(np.all(np.isfinite(Rq)) and Rq[tail].max() <= GROWTH_FACTOR * Rq[head].max() + step)
        profile.append({"level": q, "radius": Rq.tolist(), "held": ok})
        if not ok:
            break
        held = (q, Rq)
    if held is None:
        return empty("inconclusive", "no mass level is held on the grid")

    R_hat = float(held[1].max())
    best = [t.best_center(R_hat) for t in tables]
    Q = np.array([b[0] for b in best])
    centers = [m.atoms[b[1]] for m, b in zip(seq.measures, best)]
    lam = float(Q[tail].mean())
    idx = tail + 1
    if len(tail) >= 2 and np.all(Q[tail] > 0):
        decay = float(np.polyfit(np.log(idx), np.log(Q[tail]), 1)[0])
    else:
        decay = -math.inf if np.any(Q[tail] == 0) else 0.0

    def diag(verdict, radius_for=None, split=None):
        return SequenceDiagnosis(verdict, lam, R_hat, centers, radius_for or {}, decay, split, thresholds, profile)

    if lam >= 1 - eps_c:
        radius_for = {}
        for eps in sorted(set(compact_eps) | {eps_c}):
            # exact radius around the recorded per-m center
            r = max(float(CenterTable(m, m.atoms[[b[1]]]).radius(1 - eps)[0]) for m, b in zip(seq.measures, best))
            radius_for[eps] = r
        if radius_for[eps_c] <= grid[-1]:
            return diag("compactness", radius_for)
    if lam < eps_v or decay <= DECAY_EXPONENT:
        return diag("vanishing")

    R = R_hat if R_hat > 0 else step
    split = []
    for m, t, b in zip(seq.measures, tables, best):
        c = m.atoms[b[1]]
        inner = float(CenterTable(m, m.atoms[[b[1]]]).mass(R)[0])
        above = grid[grid > R]
        masses = np.array([CenterTable(m, m.atoms[[b[1]]]).mass(r)[0] for r in above])
        okr = above[masses <= inner + SPLIT_MASS_SLACK]
        R_prime = float(okr.max()) if okr.size else float(above[0]) if above.size else 2 * R
        nu1, nu2 = dichotomy_split(m, c, R, R_prime)
        split.append({
            "center": np.asarray(c).tolist(), "R": R, "R_prime": R_prime,
            "mass_near": nu1.mass, "mass_far": nu2.mass,
            "separation": support_distance(nu1, nu2),
        })
    return diag("dichotomy", split=split)


def support_distance(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    if len(a) == 0 or len(b) == 0:
        return math.inf
    return float(a.alphabet.distance(a.atoms, b.atoms).min())


def dichotomy_split(m: DiscreteMeasure, center, R: float, R_prime: float) -> tuple[SubMeasure, SubMeasure]:
    """``m`` restricted to the closed ball ``B_R(center)`` and to the complement of ``B_R'(center)``."""
    if not 0 < R < R_prime:
        raise InputError("dichotomy split needs 0 < R < R_prime")
    c = m.alphabet.point(center)
    d = m.alphabet.distance(np.asarray([c]), m.atoms)[0]
    return m.restrict(d <= R), m.restrict(d > R_prime)


@dataclass(eq=False)
class PerturbationResult:
    nu_tilde: DiscreteMeasure
    alpha_scale: float
    beta_scale: float
    J_before: float
    J_after: float
    improvement: float
    component_masses: tuple
    far_share_max: float
    mid_share_max: float
    improvement_floor: float

    def to_json(self) -> dict:
        return {
            "alpha_scale": self.alpha_scale,
            "beta_scale": self.beta_scale,
            "J_before": self.J_before,
            "J_after": self.J_after,
            "improvement": self.improvement,
            "component_masses": list(self.component_masses),
            "far_share_max": self.far_share_max,
            "mid_share_max": self.mid_share_max,
            "improvement_floor": self.improvement_floor,
            "nu_tilde": self.nu_tilde.to_json(),
        }


def dichotomy_perturbation(mu: DiscreteMeasure, nu: DiscreteMeasure, rho: DistortionSpec, beta: float,
                           center, R: float, R_prime: float, lambda_val: float) -> PerturbationResult:
    """Rescale the near part of a split reproduction measure by ``(1 + lambda) / (2 lambda)``.

    The far part is scaled by ``b`` so the total mass stays one; the middle
    part is untouched.  ``far_share_max`` is the largest fraction of any
    ``Phi(x_i)`` contributed by the far part, and ``improvement_floor`` is the
    improvement with that contribution dropped, so
    ``improvement >= improvement_floor`` always.
    """
    if not 0 < lambda_val <= 1:
        raise InputError("lambda must lie in (0, 1]")
    if not math.isfinite(dual_functional(mu, nu, rho, beta).J):
        raise InputError("J_beta(nu) must be finite")
    c = nu.alphabet.point(center)
    d = nu.alphabet.distance(np.asarray([c]), nu.atoms)[0]
    near, far = d <= R, d > R_prime
    if not 0 < R < R_prime:
        raise InputError("dichotomy split needs 0 < R < R_prime")
    mid = ~near & ~far
    m1, m2, m3 = (float(nu.weights[k].sum()) for k in (near, far, mid))
    alpha = (1 + lambda_val) / (2 * lambda_val)
    if m2 <= 0:
        raise PerturbationInfeasible("far component is empty; nothing to rescale")
    b = (1 - alpha * m1 - m3) / m2
    if b <= 0:
        raise PerturbationInfeasible(f"far scale b={b:.3g} <= 0: lambda={lambda_val} does not match the near mass {m1:.3g}")
    scale = np.where(near, alpha, np.where(far, b, 1.0))
    w = nu.weights * scale
    nu_tilde = DiscreteMeasure(nu.atoms, w, nu.alphabet, normalize=True)

    rho_m = rho.between(mu, nu)
    K = np.exp(-scaled_distortion(rho_m, beta))
    phi_parts = [K[:, k] @ nu.weights[k] for k in (near, far, mid)]
    phi = sum(phi_parts)
    pos = (mu.weights > 0) & (phi > 0)
    far_share = np.where(pos, phi_parts[1] / np.where(pos, phi, 1), 0.0)
    mid_share = np.where(pos, phi_parts[2] / np.where(pos, phi, 1), 0.0)
    near_share = 1 - far_share - mid_share
    floor_ratio = np.maximum(alpha * near_share + mid_share, 1e-300)
    floor = float(mu.weights[pos] @ np.log(floor_ratio[pos]))

    J0 = dual_functional(mu, nu, rho, beta).J
    J1 = dual_functional(mu, nu_tilde, rho, beta).J
    # the log-ratio form avoids cancellation between two large J values
    ratio = alpha * near_share + b * far_share + mid_share
    improvement = float(mu.weights[pos] @ np.log(ratio[pos]))
    return PerturbationResult(nu_tilde, alpha, b, J0, J1, improvement, (m1, m2, m3),
                              float(far_share.max()), float(mid_share.max()), floor)


@dataclass
class TightnessReport:
    status: str  # certified | refuted | inconclusive
    entries: list  # (eps, K, center)
    growth: dict
    note: str = ""

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "entries": [{"eps": e, "K": k, "center": np.asarray(c).tolist() if c is not None else None}
                        for e, k, c in self.entries],
            "growth": {format(k, ".17g"): v for k, v in self.growth.items()},
            "note": self.note,
        }


TIGHTNESS_GROWTH = 1.1


def tightness_certificate(seq: MeasureSequence, eps_list: Sequence[float], radius_grid=None,
                          tail_fraction: float = 0.5, check_classification: bool = True) -> TightnessReport:
    """Fixed center ``c`` and radius ``K`` with ``ball_mass(mu_m, c, K) >= 1 - eps`` for every ``m``.

    ``K(h)`` is the best such radius for the first ``h`` measures, centers
    ranging over all atoms of the sequence.  If ``K`` keeps growing over the
    tail (``K(M) > 1.1 K(h0)`` with ``h0`` the tail start) mass is escaping
    every fixed ball and tightness is refuted.
    """
    if not eps_list or any(not 0 < e < 1 for e in eps_list):
        raise InputError("eps values must lie in (0, 1)")
    M = len(seq)
    grid = None if radius_grid is None else _check_grid(radius_grid)
    cands = np.concatenate([m.atoms for m in seq])
    cands = np.unique(cands, axis=0) if cands.ndim > 1 else np.unique(cands)
    tables = [CenterTable(m, cands) for m in seq]
    h0 = int(tail_indices(M, tail_fraction)[0]) + 1
    tol = 1e-9 if grid is None else float(grid[grid > 0].min(initial=0.0))
    entries, growth, refuted, off_grid = [], {}, False, False
    for eps in eps_list:
        radii = np.vstack([t.radius(1 - eps) for t in tables])  # (M, n_cands)
        if grid is not None:
            radii = _grid_ceil(grid, radii)
        running = np.maximum.accumulate(radii, axis=0)
        K_h = running.min(axis=1)
        K, K0 = float(K_h[-1]), float(K_h[h0 - 1])
        growth[eps] = K_h.tolist()
        if not math.isfinite(K):
            off_grid = True
            entries.append((eps, math.inf, None))
            continue
        c = cands[int(np.argmin(running[-1]))]
        entries.append((eps, K, c))
        if M > 1 and K > TIGHTNESS_GROWTH * K0 + tol:
            refuted = True
    if refuted:
        return TightnessReport("refuted", entries, growth, "the best fixed radius keeps growing over the tail")
    if off_grid:
        return TightnessReport("inconclusive", entries, growth, "some eps needs a radius beyond the grid")
    if check_classification and M >= 3:
        verdict = classify(seq, tail_fraction=tail_fraction).verdict
        if verdict != "compactness":
            return TightnessReport("inconclusive", entries, growth, f"classification verdict is {verdict}")
    return TightnessReport("certified", entries, growth)


def vanishing_divergence_trace(mu: DiscreteMeasure, rho: DistortionSpec, beta: float,
                               seq: MeasureSequence) -> list:
    """``J_beta(nu_m)`` along a sequence of reproduction measures."""
    return [dual_functional(mu, nu, rho, beta).J for nu in seq]


__all__ = [
    "MeasureSequence", "SequenceDiagnosis", "PerturbationResult", "TightnessReport",
    "classify", "dichotomy_split", "dichotomy_perturbation", "tightness_certificate",
    "default_radius_grid", "support_distance", "vanishing_divergence_trace",
]

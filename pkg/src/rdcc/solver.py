"""Minimisation of the dual functional over reproduction measures.

``F(beta) = inf_nu J_beta(nu)`` is computed by the Blahut-Arimoto weight
fixed point on a finite support, optionally alternated with atom
relocation.  The curve ``R(D)`` is assembled from parametric points
``(D(beta), F(beta) - beta D(beta))`` and from the envelope
``max_beta {F(beta) - beta D}``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .distortion import DistortionSpec, d_max_estimate, default_candidates, finite_cover_witness
from .errors import InputError, SolverError
from .measure import DiscreteMeasure, MetricAlphabet, merge_atoms
from .variational import dual_from_log_partition, log_partition, scaled_distortion

log = logging.getLogger(__name__)

RELOCATION_MODES = ("off", "centroid", "local_search")
PRUNE_WEIGHT = 1e-12
MERGE_RADIUS = 1e-6


@dataclass
class SolverConfig:
    tol: float = 1e-9
    max_iter: int = 20_000
    support: object = None  # DiscreteMeasure, {"min", "max", "count"} grid, or None
    relocation: str = "off"
    step: float = 0.5
    shrink: float = 0.5
    min_step: float = 1e-6
    max_rounds: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise InputError("solver.tol must be positive")
        if int(self.max_iter) < 1:
            raise InputError("solver.max_iter must be >= 1")
        if self.relocation not in RELOCATION_MODES:
            raise InputError(f"solver.relocation must be one of {RELOCATION_MODES}")
        if not (self.step > 0 and 0 < self.shrink < 1 and self.min_step > 0):
            raise InputError("solver.step, solver.shrink and solver.min_step must satisfy step > 0, 0 < shrink < 1")
        if isinstance(self.support, dict):
            for key in ("min", "max", "count"):
                if key not in self.support:
                    raise InputError(f"solver.support grid needs '{key}'")

    def to_json(self) -> dict:
        out = asdict(self) if not isinstance(self.support, DiscreteMeasure) else {
            **{k: v for k, v in self.__dict__.items() if k != "support"}, "support": self.support.to_json()}
        return out

    @classmethod
    def from_json(cls, obj: dict | None) -> "SolverConfig":
        obj = dict(obj or {})
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"solver has unknown keys {sorted(unknown)}")
        sup = obj.get("support")
        if isinstance(sup, dict) and "atoms" in sup:
            obj["support"] = DiscreteMeasure.from_json(sup)
        return cls(**obj)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(eq=False)
class DualSolveReport:
    beta: float
    nu_star: DiscreteMeasure
    F: float
    D: float
    R: float
    kernel: np.ndarray
    gap: float
    iterations: int
    converged: bool
    flags: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    rounds: int = 0

    def to_json(self) -> dict:
        return {
            "beta": self.beta,
            "F": self.F,
            "D": self.D,
            "R_nats": self.R,
            "R_bits": self.R / math.log(2),
            "gap": self.gap,
            "iterations": self.iterations,
            "rounds": self.rounds,
            "converged": self.converged,
            "flags": list(self.flags),
            "nu_star": self.nu_star.to_json(),
        }

    def kernel_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["source_index", "repro_index", "weight"])
        for i, j in zip(*np.nonzero(self.kernel)):
            w.writerow([int(i), int(j), format(float(self.kernel[i, j]), ".17g")])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# support handling


def default_support(mu: DiscreteMeasure, rho: DistortionSpec) -> DiscreteMeasure:
    """Uniform weights on the source atoms (Euclidean) or on the whole reproduction alphabet."""
    if rho.is_table:
        n = rho.table.shape[1]
        return DiscreteMeasure(np.arange(n), None, MetricAlphabet.finite(n))
    if mu.alphabet.is_finite:
        return DiscreteMeasure(np.arange(mu.alphabet.size), None, mu.alphabet)
    return DiscreteMeasure(mu.atoms, None, mu.alphabet)


def initial_support(mu: DiscreteMeasure, rho: DistortionSpec, config: SolverConfig) -> DiscreteMeasure:
    sup = config.support
    if sup is None:
        return default_support(mu, rho)
    if isinstance(sup, DiscreteMeasure):
        return sup
    if mu.alphabet.is_finite or mu.alphabet.size != 1:
        raise InputError("solver.support grid is only available on the real line")
    grid = np.linspace(float(sup["min"]), float(sup["max"]), int(sup["count"]))
    return DiscreteMeasure(grid, None, mu.alphabet)


def _repair_support(mu, rho, nu, br) -> DiscreteMeasure:
    """Add finite-cover points when some source atom sees infinite distortion everywhere."""
    rho_m = rho.between(mu, nu)
    finite = rho_m[np.isfinite(rho_m)]
    eps = float(np.median(finite)) if finite.size else 1.0
    eps = max(eps, 1e-12)
    repro = nu.alphabet
    cands = np.arange(repro.size) if repro.is_finite else mu.atoms
    wit = finite_cover_witness(mu, rho, eps, max_size=len(cands), candidates=cands, repro=repro)
    if len(wit.points) == 0:
        raise SolverError("J is infinite on the initial support and no finite cover exists; add reproduction points")
    atoms = np.concatenate([nu.atoms, wit.points])
    log.info("support repaired with %d cover points at eps=%g", len(wit.points), eps)
    return DiscreteMeasure(atoms, None, repro).canonical()


# ---------------------------------------------------------------------------
# Blahut-Arimoto weight iteration


def _ba_quantities(log_mu, br, log_nu):
    """Return ``(log Phi, J, log c)`` for the current weights."""
    log_phi = log_partition(log_nu, br)
    J = dual_from_log_partition(np.exp(log_mu), log_phi)
    log_c = log_partition(log_mu - log_phi, br.T)
    return log_phi, J, log_c


def _log(w):
    with np.errstate(divide="ignore"):
        return np.log(w)


def ba_step(mu: DiscreteMeasure, nu: DiscreteMeasure, rho: DistortionSpec, beta: float):
    """One weight update ``nu_j <- nu_j c_j`` with ``c_j = sum_i mu_i exp(-beta rho_ij) / Phi_i``.

    Returns the new measure and ``log max_j c_j``, which bounds the
    suboptimality of ``nu`` on its support.
    """
    br = scaled_distortion(rho.between(mu, nu), beta)
    log_nu = _log(nu.weights)
    if not math.isfinite(dual_from_log_partition(mu.weights, log_partition(log_nu, br))):
        raise SolverError("J_beta(nu) is infinite; repair the support with finite_cover_witness")
    _, _, log_c = _ba_quantities(np.log(mu.weights), br, log_nu)
    log_new = log_nu + log_c
    w = np.exp(log_new - log_new.max())
    return DiscreteMeasure(nu.atoms, w, nu.alphabet, normalize=True), float(log_c.max())


def evaluate_measure(mu: DiscreteMeasure, nu: DiscreteMeasure, rho: DistortionSpec, beta: float):
    """``(F, D, R, kernel)`` of ``nu``: the Gibbs kernel ``w(j|i) = nu_j exp(-beta rho_ij) / Phi_i``."""
    rho_m = rho.between(mu, nu)
    br = scaled_distortion(rho_m, beta)
    log_nu = _log(nu.weights)
    log_phi = log_partition(log_nu, br)
    F = dual_from_log_partition(mu.weights, log_phi)
    if not math.isfinite(F):
        return math.inf, math.nan, math.nan, None
    kernel = np.exp(log_nu[None, :] - br - log_phi[:, None])
    contrib = np.where(kernel > 0, kernel * np.where(np.isfinite(rho_m), rho_m, 0.0), 0.0)
    D = float(mu.weights @ contrib.sum(axis=1))
    if beta == 0 and np.any((kernel > 0) & ~np.isfinite(rho_m)):
        D = math.inf
    F = F if F > 0 else 0.0
    R = F - beta * D if math.isfinite(D) else 0.0
    R = R if R > 0 else 0.0
    return F, D, R, kernel


def _iterate(log_mu, br, log_nu, config):
    """Run the weight fixed point; returns ``(log_nu, J trace, gap, iterations, converged)``.

    Each step is two matrix-vector products with the row-shifted kernel
    ``exp(-(beta rho_ij - min_j beta rho_ij))``.  Entries that underflow are
    below ``e^-700`` relative to the row's best atom; an iteration where that
    empties some ``Phi_i`` is redone in the log domain.
    """
    shift = br.min(axis=1)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    with np.errstate(under="ignore"):
        E = np.exp(-(br - shift[:, None]))
    mu_w = np.exp(log_mu)
    trace = []
    it = 0
    while True:
        with np.errstate(under="ignore"):
            nu_w = np.exp(log_nu)
        phi = E @ nu_w
        if np.all(phi > 0):
            J = float(-(mu_w @ (np.log(phi) - shift)))
            log_c = _log(E.T @ (mu_w / phi))
        else:
            _, J, log_c = _ba_quantities(log_mu, br, log_nu)
        trace.append(J)
        gap = max(float(log_c.max()), 0.0)
        if gap <= config.tol:
            return log_nu, trace, gap, it, True
        if it >= config.max_iter:
            return log_nu, trace, gap, it, False
        log_nu = log_nu + log_c
        log_nu -= log_partition(log_nu, np.zeros((1, len(log_nu))))[0]
        it += 1


def solve_fixed_support(mu: DiscreteMeasure, rho: DistortionSpec, beta: float,
                        config: SolverConfig | None = None, nu0: DiscreteMeasure | None = None) -> DualSolveReport:
    """Iterate :func:`ba_step` on a fixed support until ``log max c <= tol``.

    The exit gap bounds ``F_reported - min_{nu on support} J``.  Hitting
    ``max_iter`` returns the partial report with ``converged=False``.
    """
    config = config or SolverConfig()
    if beta < 0:
        raise InputError("beta must be nonnegative")
    nu = nu0 if nu0 is not None else initial_support(mu, rho, config)
    rho.check_alphabets(mu.alphabet, nu.alphabet)
    flags = []
    br = scaled_distortion(rho.between(mu, nu), beta)
    log_nu = _log(nu.weights)
    log_phi = log_partition(log_nu, br)
    if not math.isfinite(dual_from_log_partition(mu.weights, log_phi)):
        nu = _repair_support(mu, rho, nu, br)
        flags.append("support_repaired")
        br = scaled_distortion(rho.between(mu, nu), beta)
        log_nu = _log(nu.weights)
        if not math.isfinite(dual_from_log_partition(mu.weights, log_partition(log_nu, br))):
            raise SolverError("J is infinite even after support repair")

    log_nu, trace, gap, it, converged = _iterate(np.log(mu.weights), br, log_nu, config)
    if any(b > a + 1e-12 * max(1.0, abs(a)) for a, b in zip(trace, trace[1:])):
        flags.append("descent_violated")
    if not converged:
        flags.append("not_converged")

    w = np.exp(log_nu)
    nu_star = DiscreteMeasure(nu.atoms, w, nu.alphabet, normalize=True)
    F, D, R, kernel = evaluate_measure(mu, nu_star, rho, beta)
    return DualSolveReport(float(beta), nu_star, F, D, R, kernel, gap, it, converged, flags, trace)


# ---------------------------------------------------------------------------
# relocation


def relocate_atoms(mu: DiscreteMeasure, report: DualSolveReport, rho: DistortionSpec, mode: str,
                   config: SolverConfig | None = None) -> DiscreteMeasure:
    """Move reproduction atoms to reduce ``sum_i mu_i w(j|i) rho(x_i, y_j)`` atom by atom.

    Weights are kept.  ``centroid`` is the exact minimiser for squared error;
    ``local_search`` is a coordinate pattern search that only takes strictly
    improving moves, so it works for any lower semi-continuous distortion.
    """
    config = config or SolverConfig()
    nu = report.nu_star
    if nu.alphabet.is_finite or rho.is_table:
        raise InputError("relocation needs a Euclidean alphabet")
    if mode == "off":
        raise InputError("relocation mode is off")
    mass = mu.weights[:, None] * report.kernel  # mu_i w(j|i)
    col = mass.sum(axis=0)
    ys = np.array(nu.atoms, dtype=float)
    if mode == "centroid":
        if rho.kind != "squared_error" or rho.truncation is not None:
            raise InputError("centroid relocation requires untruncated squared_error")
        live = col > 0
        ys[live] = (mass[:, live].T @ mu.atoms) / col[live, None]
        return DiscreteMeasure(ys, nu.weights, nu.alphabet, normalize=True)
    if mode != "local_search":
        raise InputError(f"unknown relocation mode {mode!r}")

    cur = _diag_cost(mu, rho, mass, ys, nu.alphabet)
    step = np.full(len(ys), float(config.step))
    d = nu.alphabet.size
    for _ in range(10_000):
        active = step >= config.min_step
        if not active.any():
            break
        moved = np.zeros(len(ys), dtype=bool)
        for k in range(d):
            for sign in (1.0, -1.0):
                cand = ys.copy()
                cand[active, k] += sign * step[active]
                val = _diag_cost(mu, rho, mass, cand, nu.alphabet)
                better = active & (val < cur)
                ys[better] = cand[better]
                cur[better] = val[better]
                moved |= better
        step[active & ~moved] *= config.shrink
    return DiscreteMeasure(ys, nu.weights, nu.alphabet, normalize=True)


def _diag_cost(mu, rho, mass, ys, alphabet):
    # cost of atom j evaluated at its own candidate ys[j]
    r = rho.matrix(mu.atoms, ys, mu.alphabet, alphabet)
    with np.errstate(invalid="ignore"):
        return np.where(mass > 0, mass * r, 0.0).sum(axis=0)


def _prune(nu: DiscreteMeasure) -> DiscreteMeasure:
    keep = nu.weights >= PRUNE_WEIGHT
    if keep.all():
        return nu
    return DiscreteMeasure(nu.atoms[keep], nu.weights[keep], nu.alphabet, normalize=True)


def compute_F(mu: DiscreteMeasure, rho: DistortionSpec, beta: float, config: SolverConfig | None = None) -> DualSolveReport:
    """``F(beta)``: fixed-support solves alternated with relocation until a round gains < tol (relative)."""
    config = config or SolverConfig()
    report = solve_fixed_support(mu, rho, beta, config)
    if config.relocation == "off" or beta == 0 or mu.alphabet.is_finite or rho.is_table:
        return report
    rounds = 0
    for rounds in range(1, config.max_rounds + 1):
        moved = relocate_atoms(mu, report, rho, config.relocation, config)
        nu = merge_atoms(_prune(moved), MERGE_RADIUS)
        new = solve_fixed_support(mu, rho, beta, config, nu0=nu)
        if new.F > report.F + 1e-12 * max(1.0, abs(report.F)):
            report.flags.append("relocation_rejected")
            break
        gain = (report.F - new.F) / max(abs(report.F), 1e-300)
        new.iterations += report.iterations
        new.trace = report.trace + new.trace
        report = new
        if gain < config.tol:
            break
    else:
        report.flags.append("max_rounds")
    report.rounds = rounds
    return report


# ---------------------------------------------------------------------------
# curves


@dataclass
class CurvePoint:
    beta: float
    D: float
    R: float
    F: float
    gap: float
    iterations: int
    status: str = "ok"  # ok | not_converged | failed | beta0_dmax


CSV_HEADER = ["D", "R_nats", "R_bits", "beta", "gap", "iterations", "status"]


@dataclass
class RDCurve:
    points: list
    provenance: str = ""

    def usable(self) -> list:
        return sorted((p for p in self.points if p.status != "failed" and math.isfinite(p.D)),
                      key=lambda p: (p.D, -p.R))

    def envelope(self, D: float) -> float:
        """``max(0, max_beta {F(beta) - beta D})``; beta = 0 always contributes ``F(0) = 0``."""
        vals = [p.F - p.beta * D for p in self.points if p.status != "failed" and math.isfinite(p.F)]
        return max([0.0] + vals)

    def law_violations(self, slack: float = 1e-9) -> list:
        """Triples breaking monotonicity or convexity of ``R`` in ``D``."""
        pts = self.usable()
        bad = []
        for a, b in zip(pts, pts[1:]):
            if b.R > a.R + slack:
                bad.append(("increasing", (a.D, a.R), (b.D, b.R)))
        for a, b, c in zip(pts, pts[1:], pts[2:]):
            span = c.D - a.D
            if span <= 0:
                continue
            chord = ((c.D - b.D) * a.R + (b.D - a.D) * c.R) / span
            if b.R > chord + slack:
                bad.append(("nonconvex", (a.D, a.R), (b.D, b.R), (c.D, c.R)))
        return bad

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for p in sorted(self.points, key=lambda p: p.beta):
            w.writerow([format(p.D, ".17g"), format(p.R, ".17g"), format(p.R / math.log(2), ".17g"),
                        format(p.beta, ".17g"), format(p.gap, ".17g"), p.iterations, p.status])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RDCurve":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][:6] != CSV_HEADER[:6]:
            raise InputError("curve CSV header must start with D,R_nats,R_bits,beta,gap,iterations")
        pts = []
        for r in rows[1:]:
            D, R, _, beta, gap, iters = float(r[0]), float(r[1]), r[2], float(r[3]), float(r[4]), int(r[5])
            status = r[6] if len(r) > 6 else "ok"
            pts.append(CurvePoint(beta, D, R, R + beta * D, gap, iters, status))
        return cls(pts)

    def to_json(self) -> dict:
        return {"provenance": self.provenance, "points": [asdict(p) for p in self.points]}


DMAX_K_GRID = (1.0, 10.0, 1e2, 1e3, 1e4, 1e5, 1e6)


def _curve_point(mu, rho, beta, config):
    try:
        rep = compute_F(mu, rho, beta, config)
    except SolverError as exc:
        log.warning("beta=%g failed: %s", beta, exc)
        return CurvePoint(beta, math.nan, math.nan, math.nan, math.nan, 0, "failed"), None
    status = "ok" if rep.converged else "not_converged"
    D = rep.D
    if beta == 0 and not math.isfinite(D):
        D = d_max_estimate(mu, rho, DMAX_K_GRID, default_candidates(mu, rho), rep.nu_star.alphabet)[-1][1]
        status = "beta0_dmax"
    return CurvePoint(beta, D, rep.R, rep.F, rep.gap, rep.iterations, status), rep


def rd_curve(mu: DiscreteMeasure, rho: DistortionSpec, beta_grid: Sequence[float],
             config: SolverConfig | None = None, threads: int = 1, keep_reports: bool = False) -> RDCurve:
    """One solve per beta; the points are the parametric pairs ``(D(beta), R(beta))``."""
    config = config or SolverConfig()
    betas = [float(b) for b in beta_grid]
    if not betas or any(b < 0 or not math.isfinite(b) for b in betas):
        raise InputError("beta grid must be nonempty, finite and nonnegative")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda b: _curve_point(mu, rho, b, config), betas))
    else:
        results = [_curve_point(mu, rho, b, config) for b in betas]
    curve = RDCurve([p for p, _ in results], config.digest())
    if keep_reports:
        curve.reports = [r for _, r in results]
    return curve

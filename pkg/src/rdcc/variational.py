"""Partition values, the dual functional ``J_beta`` and dual certificates.

All logarithms are natural; rates are in nats.  ``beta * inf`` is ``inf``
for ``beta > 0`` and ``0`` for ``beta == 0`` (the measure-theoretic
convention), so ``exp(-beta * rho)`` vanishes exactly on infinite distortion
whenever ``beta > 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distortion import DistortionSpec
from .errors import CertificateError, InputError
from .measure import DiscreteMeasure


def scaled_distortion(rho_matrix: np.ndarray, beta: float) -> np.ndarray:
    """``beta * rho`` with ``0 * inf = 0``."""
    if beta < 0:
        raise InputError("beta must be nonnegative")
    if beta == 0:
        return np.zeros_like(rho_matrix)
    return beta * rho_matrix


def log_partition(log_nu: np.ndarray, beta_rho: np.ndarray) -> np.ndarray:
    """Row-wise ``log sum_j nu_j exp(-beta rho_ij)``, shifted by each row's smallest exponent."""
    expo = log_nu[None, :] - beta_rho
    shift = expo.max(axis=1)
    finite = np.isfinite(shift)
    out = np.full(expo.shape[0], -np.inf)
    if finite.any():
        s = shift[finite]
        out[finite] = s + np.log(np.exp(expo[finite] - s[:, None]).sum(axis=1))
    return out


def _log(w: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(w)


@dataclass(frozen=True, eq=False)
class PartitionVector:
    beta: float
    values: np.ndarray
    log_values: np.ndarray


def partition(mu: DiscreteMeasure, nu: DiscreteMeasure, rho: DistortionSpec, beta: float) -> PartitionVector:
    """``Phi(x_i) = sum_j nu_j exp(-beta rho(x_i, y_j))`` for every source atom."""
    br = scaled_distortion(rho.between(mu, nu), beta)
    logs = log_partition(_log(nu.weights), br)
    return PartitionVector(float(beta), np.exp(logs), logs)


def dual_from_log_partition(mu_weights: np.ndarray, log_phi: np.ndarray) -> float:
    pos = mu_weights > 0
    if np.any(np.isneginf(log_phi[pos])):
        return math.inf
    return float(-(mu_weights[pos] @ log_phi[pos]))


@dataclass(frozen=True)
class DualValue:
    J: float
    finite: bool


def dual_functional(mu: DiscreteMeasure, nu: DiscreteMeasure, rho: DistortionSpec, beta: float) -> DualValue:
    """``J_beta(nu) = -sum_i mu_i log Phi(x_i)``; infinite when some ``Phi`` vanishes on positive mass."""
    pv = partition(mu, nu, rho, beta)
    J = dual_from_log_partition(mu.weights, pv.log_values)
    # J >= 0 holds exactly; clip the rounding residue at beta = 0
    J = J if J > 0 else 0.0
    return DualValue(J, math.isfinite(J))


@dataclass(frozen=True, eq=False)
class Certificate:
    """Multipliers ``alpha_i`` and ``beta`` for the lower bound ``sum mu_i log alpha_i - beta D``.

    ``feasibility_slack`` is ``max_y sum_i mu_i alpha_i exp(-beta rho(x_i, y)) - 1``
    over ``check_points``.  A positive slack is repaired by dividing alpha by
    ``1 + slack``, which :meth:`sound_lower_bound_at` does.
    """

    beta: float
    alpha: np.ndarray
    mu_weights: np.ndarray
    feasibility_slack: float
    check_points: np.ndarray
    log_alpha_mean: float

    @property
    def valid(self) -> bool:
        return self.feasibility_slack <= 0 and bool(np.all(self.alpha >= 1))

    def lower_bound_at(self, D: float) -> float:
        return self.log_alpha_mean - self.beta * D

    def sound_lower_bound_at(self, D: float) -> float:
        """Lower bound after rescaling alpha onto the feasible set of the check grid."""
        return self.lower_bound_at(D) - math.log1p(max(self.feasibility_slack, 0.0))

    def to_json(self) -> dict:
        return {
            "beta": self.beta,
            "alpha": self.alpha.tolist(),
            "feasibility_slack": self.feasibility_slack,
            "log_alpha_mean": self.log_alpha_mean,
            "n_check_points": int(len(self.check_points)),
            "valid": self.valid,
        }


def certificate_slack(mu: DiscreteMeasure, log_alpha: np.ndarray, rho: DistortionSpec, beta: float,
                      points: np.ndarray, repro=None) -> float:
    """``max_y sum_i mu_i alpha_i exp(-beta rho(x_i, y)) - 1`` over ``points``."""
    repro = repro or mu.alphabet
    br = scaled_distortion(rho.matrix(mu.atoms, points, mu.alphabet, repro), beta)
    pos = mu.weights > 0
    # per check point j: log sum_i exp(log mu_i + log alpha_i - beta rho_ij)
    lse = log_partition(np.log(mu.weights[pos]) + log_alpha[pos], br[pos].T)
    return float(np.expm1(lse.max()))


def make_certificate(mu: DiscreteMeasure, nu: DiscreteMeasure, rho: DistortionSpec, beta: float,
                     check_points=None) -> Certificate:
    """Certificate with ``alpha_i = 1 / Phi(x_i)`` checked on ``nu``'s support plus ``check_points``."""
    pv = partition(mu, nu, rho, beta)
    pos = mu.weights > 0
    if np.any(np.isneginf(pv.log_values[pos])):
        raise CertificateError("partition value vanishes on positive source mass; certificate undefined")
    log_alpha = -pv.log_values
    pts = nu.atoms
    if check_points is not None:
        extra = nu.alphabet.coerce(check_points)
        pts = np.concatenate([pts, extra]) if len(extra) else pts
    slack = certificate_slack(mu, log_alpha, rho, beta, pts, nu.alphabet)
    # Phi <= 1 up to rounding, so alpha >= 1 up to rounding
    alpha = np.maximum(np.exp(log_alpha), 1.0)
    return Certificate(
        beta=float(beta),
        alpha=alpha,
        mu_weights=mu.weights.copy(),
        feasibility_slack=slack,
        check_points=pts,
        log_alpha_mean=float(mu.weights[pos] @ np.log(alpha[pos])),
    )

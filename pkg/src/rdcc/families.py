"""Named source measures and synthetic measure sequences."""
from __future__ import annotations

from statistics import NormalDist

import numpy as np

from .errors import InputError
from .measure import DiscreteMeasure, MetricAlphabet

REAL_LINE = MetricAlphabet.euclidean(1)


def gaussian(mean: float = 0.0, sigma: float = 1.0, n_atoms: int = 401, span=(-5.0, 5.0)) -> DiscreteMeasure:
    """Equal-weight atoms at the quantile midpoints ``(k + 1/2) / n`` of ``N(mean, sigma^2)``, clipped to ``span``."""
    if sigma <= 0 or n_atoms < 1:
        raise InputError("gaussian needs sigma > 0 and n_atoms >= 1")
    lo, hi = float(span[0]), float(span[1])
    if not lo < hi:
        raise InputError("gaussian span must satisfy lo < hi")
    dist = NormalDist(mean, sigma)
    atoms = np.array([dist.inv_cdf((k + 0.5) / n_atoms) for k in range(n_atoms)])
    return DiscreteMeasure(np.clip(atoms, lo, hi), None, REAL_LINE)


def bernoulli(p: float) -> DiscreteMeasure:
    if not 0 <= p <= 1:
        raise InputError("bernoulli p must lie in [0, 1]")
    return DiscreteMeasure([0, 1], [1 - p, p], MetricAlphabet.finite(2))


def uniform(a: float, b: float, n: int) -> DiscreteMeasure:
    """Equal weights at the midpoints of ``n`` equal cells of ``[a, b]``."""
    if not a < b or n < 1:
        raise InputError("uniform needs a < b and n >= 1")
    edges = np.linspace(a, b, n + 1)
    return DiscreteMeasure(0.5 * (edges[:-1] + edges[1:]), None, REAL_LINE)


def translating(M: int, n_atoms: int = 41, sigma: float = 1.0) -> list:
    """``N(m, sigma^2)`` discretised, for ``m = 1..M``: mass stays together while moving off."""
    base = gaussian(0.0, sigma, n_atoms, (-np.inf, np.inf))
    return [DiscreteMeasure(base.atoms + m, base.weights, REAL_LINE) for m in range(1, M + 1)]


def spreading(M: int) -> list:
    """Uniform on the ``2m + 1`` integers in ``[-m, m]``: every ball mass tends to zero."""
    return [DiscreteMeasure(np.arange(-m, m + 1), None, REAL_LINE) for m in range(1, M + 1)]


def splitting(M: int, gap: float = 10.0, lam: float = 0.5) -> list:
    """``lam delta_0 + (1 - lam) delta_{gap m}``: two lumps drifting apart."""
    return [DiscreteMeasure([0.0, gap * m], [lam, 1 - lam], REAL_LINE) for m in range(1, M + 1)]


def constant(M: int, measure: DiscreteMeasure) -> list:
    return [measure] * M


def dilating_lattice(M: int) -> list:
    """Uniform on the ``2m`` points ``m (j + 1/2)``, ``-m <= j < m``: ball masses vanish while atoms recede."""
    out = []
    for m in range(1, M + 1):
        j = np.arange(-m, m) + 0.5
        out.append(DiscreteMeasure(m * j, None, REAL_LINE))
    return out


SOURCES = {"gaussian": gaussian, "bernoulli": bernoulli, "uniform": uniform}
SEQUENCES = {"translating": translating, "spreading": spreading, "splitting": splitting,
             "dilating_lattice": dilating_lattice}


def source_from_json(obj: dict) -> DiscreteMeasure:
    """Either explicit ``{"atoms", "weights", ...}`` or ``{"family": name, **params}``."""
    if not isinstance(obj, dict):
        raise InputError("source must be an object")
    if "family" in obj:
        params = {k: v for k, v in obj.items() if k != "family"}
        name = obj["family"]
        if name not in SOURCES:
            raise InputError(f"source.family must be one of {sorted(SOURCES)}, got {name!r}")
        try:
            return SOURCES[name](**params)
        except TypeError as exc:
            raise InputError(f"source: bad parameters for {name}: {exc}") from None
    if "atoms" in obj:
        return DiscreteMeasure.from_json(obj)
    raise InputError("source needs either 'family' or 'atoms'")

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import best_cover_mass, gaussian_quantile_atoms
from rdcc.distortion import (
    DistortionSpec, coercivity_probe, d_max_estimate, evaluate, finite_cover_witness, level_radius, truncate,
    zero_distortion_gap,
)
from rdcc.errors import InputError
from rdcc.measure import DiscreteMeasure, MetricAlphabet

SE = DistortionSpec.squared_error()
DZ = DistortionSpec.dead_zone(1.0)
JP = DistortionSpec.jump_penalty(1.0, 2.0, 10.0)
CAP = DistortionSpec.bounded_cap(4.0)
RADIAL = [SE, DZ, JP, CAP]


class TestEvaluate:
    def test_dead_zone_inside(self):
        assert evaluate(DZ, 0.0, 0.5) == 0.0

    def test_dead_zone_threshold_is_free(self):
        assert evaluate(DZ, 0.0, 1.0) == 0.0
        assert evaluate(DZ, 0.0, 1.0 + 1e-9) == pytest.approx(1.0)

    def test_jump_penalty_branches(self):
        assert evaluate(JP, 0.0, 0.5) == 0.25
        assert evaluate(JP, 0.0, 1.0) == 1.0
        assert evaluate(JP, 0.0, 1.5) == 12.25
        assert evaluate(JP, 0.0, 2.0) == 14.0
        assert evaluate(JP, 0.0, 3.0) == math.inf

    def test_bounded_cap(self):
        assert evaluate(CAP, 0.0, 1.0) == 1.0
        assert evaluate(CAP, 0.0, 10.0) == 4.0

    def test_identity_is_zero(self):
        for rho in RADIAL:
            assert evaluate(rho, 0.7, 0.7) == 0.0

    def test_vector_points(self):
        assert evaluate(SE, [0, 0], [3, 4], MetricAlphabet.euclidean(2)) == 25.0

    def test_hamming(self):
        a = MetricAlphabet.finite(3)
        assert evaluate(DistortionSpec.hamming(), 0, 2, a) == 1.0
        assert evaluate(DistortionSpec.hamming(), 1, 1, a) == 0.0

    def test_alphabet_mismatch(self):
        with pytest.raises(InputError):
            DZ.matrix(np.array([0, 1]), np.array([0, 1]), MetricAlphabet.finite(2))

    def test_table(self):
        t = DistortionSpec.custom_table([[0, 1, math.inf], [2, 0, 1]])
        assert evaluate(t, 0, 2) == math.inf
        assert evaluate(t, 1, 0) == 2.0

    @pytest.mark.parametrize("kind,params", [("dead_zone", {}), ("jump_penalty", {"tau1": 2, "tau2": 1, "J": 0}),
                                             ("bounded_cap", {"C": 0}), ("nope", {})])
    def test_bad_specs(self, kind, params):
        with pytest.raises(InputError, match="distortion"):
            DistortionSpec(kind, params)

    def test_json_roundtrip(self):
        for rho in RADIAL + [DistortionSpec.custom_table([[0, math.inf], [1, 0]])]:
            back = DistortionSpec.from_json(rho.to_json())
            assert back.kind == rho.kind and back.params == rho.params
            if rho.is_table:
                assert np.array_equal(back.table, rho.table)

    def test_table_csv(self, tmp_path):
        p = tmp_path / "t.csv"
        with open(p, "w", newline="") as fh:
            csv.writer(fh).writerows([[0, 1, "inf"], [1, 0, 2]])
        rho = DistortionSpec.from_json({"kind": "custom_table", "table_csv": "t.csv"}, tmp_path)
        assert rho.table[0, 2] == math.inf and rho.table.shape == (2, 3)


class TestLowerSemicontinuity:
    @pytest.mark.parametrize("rho,jumps", [(DZ, [1.0]), (JP, [1.0, 2.0])])
    def test_values_jump_up_when_leaving(self, rho, jumps):
        for t in jumps:
            at = float(rho.profile(t))
            for side in (1, -1):
                approach = rho.profile(t + side * np.geomspace(1e-1, 1e-9, 30))
                assert approach[-1] >= at - 1e-8  # liminf >= value at the jump


class TestTruncate:
    def test_cap(self):
        assert evaluate(truncate(SE, 4), 0.0, 3.0) == 4.0

    def test_cap_absorbs_infinity(self):
        assert evaluate(truncate(JP, 5), 0.0, 3.0) == 5.0

    def test_bad_level(self):
        with pytest.raises(InputError):
            truncate(SE, 0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.1, 50), st.floats(0.1, 50), st.integers(0, 3))
    def test_pointwise_order(self, K1, K2, which):
        rho = RADIAL[which]
        lo, hi = sorted([K1, K2])
        t = np.linspace(0, 6, 301)
        a, b, base = truncate(rho, lo).profile(t), truncate(rho, hi).profile(t), rho.profile(t)
        assert np.all(a <= b) and np.all(b <= base) and np.all(b <= hi)
        assert np.all(np.isfinite(a))


class TestCoercivity:
    def test_squared_error(self):
        assert coercivity_probe(SE, 0.0, 0.0, 9).radius == pytest.approx(3.0)

    def test_dead_zone(self):
        r = coercivity_probe(DZ, 0.0, 0.0, 9)
        assert r.verdict == "coercive" and r.radius == pytest.approx(3.0)

    def test_dead_zone_level_inside_band(self):
        # any M <= tau^2 is reached only beyond the band edge
        assert level_radius(DZ, 0.25) == 1.0

    def test_bounded_cap_not_coercive(self):
        assert coercivity_probe(CAP, 0.0, 0.0, 9).verdict == "not_coercive"

    def test_table_inconclusive(self):
        rho = DistortionSpec.custom_table([[0, 1], [1, 0]])
        assert coercivity_probe(rho, 0, 0, 1).verdict == "inconclusive"

    def test_offset_reference(self):
        assert coercivity_probe(SE, 2.0, -1.0, 9).radius == pytest.approx(6.0)

    @pytest.mark.parametrize("rho", [SE, DZ, JP])
    @pytest.mark.parametrize("M", [0.5, 1.0, 4.0, 11.0, 16.0, 50.0])
    def test_closed_form_holds_on_random_probes(self, rho, M):
        rng = np.random.default_rng(7)
        x, y0 = 0.3, -0.4
        rep = coercivity_probe(rho, x, y0, M)
        ys = y0 + np.sign(rng.normal(size=10_000)) * (rep.radius + rng.exponential(3.0, 10_000) + 1e-12)
        vals = rho.matrix(np.array([[x]]), ys[:, None], MetricAlphabet.euclidean(1))[0]
        assert np.all(vals >= M)


class TestCover:
    def test_two_atoms(self):
        w = finite_cover_witness(DiscreteMeasure([0.0, 10.0], [0.5, 0.5]), SE, 0.1)
        assert sorted(w.points[:, 0].tolist()) == [0.0, 10.0] and w.covered_mass == 1.0

    def test_bernoulli(self, bern02):
        w = finite_cover_witness(bern02, DistortionSpec.hamming(), 0.5)
        assert set(w.points.tolist()) <= {0, 1} and w.covered_mass == pytest.approx(1.0)

    def test_no_cover_returns_empty(self):
        rho = DistortionSpec.custom_table([[1.0, 2.0]])
        mu = DiscreteMeasure([0], [1.0], MetricAlphabet.finite(1))
        w = finite_cover_witness(mu, rho, 0.5)
        assert len(w.points) == 0 and w.covered_mass == 0.0

    def test_covered_atoms_really_within_eps(self):
        mu = DiscreteMeasure(gaussian_quantile_atoms(100))
        w = finite_cover_witness(mu, DZ, 0.01, max_size=10)
        d = DZ.matrix(mu.atoms, w.points, mu.alphabet).min(axis=1)
        assert np.all(d[w.covered] < 0.01)
        assert w.covered_mass == pytest.approx(mu.weights[w.covered].sum())

    @pytest.mark.parametrize("seed", range(8))
    def test_greedy_vs_exhaustive_set_cover(self, seed):
        rng = np.random.default_rng(seed)
        mu = DiscreteMeasure(rng.uniform(-4, 4, 10), rng.uniform(0.1, 1, 10), normalize=True)
        k = 3
        w = finite_cover_witness(mu, DZ, 0.01, max_size=k)
        hits = DZ.matrix(mu.atoms, mu.atoms, mu.alphabet) < 0.01
        best = best_cover_mass(hits, mu.weights, k)
        assert w.covered_mass <= best + 1e-12
        assert w.covered_mass >= (1 - 1 / math.e) * best - 1e-12


class TestDmax:
    def test_point_mass(self):
        mu = DiscreteMeasure.point_mass(0.0)
        assert all(v == 0 for _, v in d_max_estimate(mu, SE, [1, 10, 100], mu.atoms))

    def test_two_point_hand_minimum(self):
        mu = DiscreteMeasure([0.0, 2.0], [0.5, 0.5])
        (K, v), = d_max_estimate(mu, SE, [100], np.linspace(0, 2, 201))
        assert v == pytest.approx(1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_non_decreasing_in_K(self, seed):
        rng = np.random.default_rng(seed)
        mu = DiscreteMeasure(rng.normal(size=6) * 3, rng.uniform(0.1, 1, 6), normalize=True)
        vals = [v for _, v in d_max_estimate(mu, JP, [0.5, 1, 5, 20, 100], rng.normal(size=15) * 3)]
        assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_rejects_empty_candidates(self):
        with pytest.raises(InputError):
            d_max_estimate(DiscreteMeasure.point_mass(0.0), SE, [1], np.zeros((0, 1)))


def test_every_kind_has_a_perfect_reproduction():
    mu = DiscreteMeasure(np.random.default_rng(3).normal(size=20))
    for rho in RADIAL:
        assert np.all(zero_distortion_gap(rho, mu) == 0)
    bern = DiscreteMeasure([0, 1], [0.5, 0.5], MetricAlphabet.finite(2))
    assert np.all(zero_distortion_gap(DistortionSpec.hamming(), bern) == 0)

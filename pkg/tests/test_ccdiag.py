import math

import numpy as np
import pytest

from oracles import direct_ball_mass, gaussian_quantile_atoms
from rdcc import families
from rdcc.ccdiag import (
    MeasureSequence, classify, dichotomy_perturbation, dichotomy_split, support_distance, tightness_certificate,
    vanishing_divergence_trace,
)
from rdcc.distortion import DistortionSpec
from rdcc.errors import InputError, PerturbationInfeasible
from rdcc.measure import DiscreteMeasure, MetricAlphabet

SE = DistortionSpec.squared_error()
HORIZONS = (5, 10, 20)


def gauss41(shift=0.0):
    return DiscreteMeasure(gaussian_quantile_atoms(41, lo=-np.inf, hi=np.inf) + shift)


def two_lumps(L, lam=0.5, n=41):
    g = gauss41()
    atoms = np.concatenate([g.atoms[:, 0], g.atoms[:, 0] + L])
    return DiscreteMeasure(atoms, np.concatenate([lam * g.weights, (1 - lam) * g.weights]))


class TestSequence:
    def test_mixed_alphabets(self):
        with pytest.raises(InputError, match="mixed"):
            MeasureSequence([DiscreteMeasure([0.0]), DiscreteMeasure([0], [1.0], MetricAlphabet.finite(2))])

    def test_json_roundtrip(self):
        seq = MeasureSequence(families.splitting(4))
        back = MeasureSequence.from_json(seq.to_json())
        assert all(a.allclose(b) for a, b in zip(seq, back))

    def test_too_short(self):
        with pytest.raises(InputError):
            classify(MeasureSequence(families.splitting(2)))


class TestClassify:
    @pytest.mark.parametrize("M", HORIZONS)
    def test_translating_is_compact(self, M):
        seq = MeasureSequence(families.translating(M))
        d = classify(seq)
        assert d.verdict == "compactness"
        for m, (mu, c) in enumerate(zip(seq, d.centers), start=1):
            assert abs(float(np.ravel(c)[0]) - m) <= 0.5
            # witness checked with a direct ball sum
            for eps in (0.05, 0.01, 1e-3):
                assert direct_ball_mass(mu.atoms, mu.weights, c, d.radius_for(eps)) >= 1 - eps
        assert d.radius_for(0.05) <= 3.0

    @pytest.mark.parametrize("M", HORIZONS)
    def test_spreading_vanishes(self, M):
        d = classify(MeasureSequence(families.spreading(M)))
        assert d.verdict == "vanishing"

    @pytest.mark.parametrize("M", HORIZONS)
    def test_splitting_is_dichotomy(self, M):
        d = classify(MeasureSequence(families.splitting(M)))
        assert d.verdict == "dichotomy" and d.lambda_hat == pytest.approx(0.5)
        seps = [s["separation"] for s in d.split]
        assert seps == sorted(seps) and seps[-1] >= 10 * M - 1e-9
        for s in d.split:
            assert s["mass_near"] == pytest.approx(0.5) and s["mass_far"] == pytest.approx(0.5)

    @pytest.mark.parametrize("M", HORIZONS)
    def test_constant_is_compact(self, M):
        assert classify(MeasureSequence(families.constant(M, gauss41()))).verdict == "compactness"

    @pytest.mark.parametrize("M", HORIZONS)
    def test_uneven_split(self, M):
        d = classify(MeasureSequence(families.splitting(M, lam=0.3)))
        assert d.verdict == "dichotomy" and d.lambda_hat == pytest.approx(0.7)

    def test_short_grid_is_inconclusive(self):
        d = classify(MeasureSequence(families.splitting(5)), radius_grid=[0.0, 1.0, 2.0])
        assert d.verdict == "inconclusive"

    def test_thresholds_reported(self):
        d = classify(MeasureSequence(families.spreading(5)), eps_v=0.2)
        assert d.thresholds["eps_v"] == 0.2 and d.to_json()["verdict"] == "vanishing"


class TestSplit:
    def test_two_point(self):
        m = DiscreteMeasure([0.0, 100.0], [0.5, 0.5])
        a, b = dichotomy_split(m, 0.0, 1.0, 50.0)
        assert a.atoms[:, 0].tolist() == [0.0] and b.atoms[:, 0].tolist() == [100.0]
        assert a.mass == 0.5 and b.mass == 0.5

    def test_no_far_mass(self):
        a, b = dichotomy_split(DiscreteMeasure.point_mass(0.0), 0.0, 1.0, 2.0)
        assert a.mass == 1.0 and b.mass == 0.0 and len(b) == 0

    def test_gaussian_matches_ball_sums(self):
        g = gauss41()
        a, b = dichotomy_split(g, 0.0, 1.0, 3.0)
        assert a.mass == pytest.approx(direct_ball_mass(g.atoms, g.weights, 0.0, 1.0))
        assert b.mass == pytest.approx(1 - direct_ball_mass(g.atoms, g.weights, 0.0, 3.0))

    def test_order_checked(self):
        with pytest.raises(InputError):
            dichotomy_split(gauss41(), 0.0, 2.0, 2.0)

    @pytest.mark.parametrize("seed", range(20))
    def test_consistency(self, seed):
        rng = np.random.default_rng(seed)
        m = DiscreteMeasure(rng.normal(size=(30, 2)) * 5, rng.uniform(0.1, 1, 30), normalize=True)
        R = rng.uniform(0.5, 3)
        Rp = R + rng.uniform(0.1, 5)
        a, b = dichotomy_split(m, m.atoms[0], R, Rp)
        assert a.mass + b.mass <= 1 + 1e-12
        assert support_distance(a, b) >= Rp - R


class TestPerturbation:
    def test_normalisation_algebra(self):
        res = dichotomy_perturbation(gauss41(), two_lumps(50), SE, 1.0, 0.0, 10, 25, 0.5)
        assert res.alpha_scale == 1.5 and res.beta_scale == pytest.approx(0.5)
        assert res.nu_tilde.mass == pytest.approx(1.0, abs=1e-12)
        assert res.improvement == pytest.approx(res.J_before - res.J_after, abs=1e-12)

    def test_infeasible_lambda(self):
        with pytest.raises(PerturbationInfeasible):
            dichotomy_perturbation(gauss41(), two_lumps(50), SE, 1.0, 0.0, 10, 25, 0.3)

    def test_empty_far_part(self):
        with pytest.raises(PerturbationInfeasible):
            dichotomy_perturbation(gauss41(), gauss41(), SE, 1.0, 0.0, 10, 25, 0.5)

    @pytest.mark.parametrize("eps", [0.0, 0.01, 0.03])
    def test_beta_scale_near_half(self, eps):
        # component masses within eps of (1/2, 1/2) keep b within 3 eps of 1/2
        res = dichotomy_perturbation(gauss41(), two_lumps(50, lam=0.5 + eps), SE, 1.0, 0.0, 10, 25, 0.5)
        assert abs(res.beta_scale - 0.5) <= 3 * eps + 1e-12

    def test_improvement_sweep(self):
        Ls = [5, 10, 20, 50, 100]
        imps = [dichotomy_perturbation(gauss41(), two_lumps(L), SE, 1.0, 0.0, L / 2, L / 2 + 1e-9, 0.5).improvement
                for L in Ls]
        assert all(i > 0 for i in imps)
        assert all(b >= a - 1e-12 for a, b in zip(imps, imps[1:]))
        assert imps[-1] == pytest.approx(math.log(1.5), abs=1e-9)

    def test_floor_is_a_lower_bound(self):
        for L in (3, 5, 8, 50):
            res = dichotomy_perturbation(gauss41(), two_lumps(L), SE, 1.0, 0.0, L / 2, L / 2 + 1e-9, 0.5)
            assert res.improvement >= res.improvement_floor - 1e-12
            if res.far_share_max < 1e-3:
                assert res.improvement >= math.log(1 + 0.5 / 1.5) - 1e-3


class TestTightness:
    def test_constant(self):
        g = gauss41()
        rep = tightness_certificate(MeasureSequence(families.constant(6, g)), [1e-3])
        assert rep.status == "certified"
        eps, K, c = rep.entries[0]
        assert direct_ball_mass(g.atoms, g.weights, c, K) >= 1 - 1e-3
        # no smaller radius works around any atom
        assert all(direct_ball_mass(g.atoms, g.weights, a, K - 1e-9) < 1 - 1e-3 for a in g.atoms)

    def test_translating_refuted(self):
        assert tightness_certificate(MeasureSequence(families.translating(10)), [1e-3]).status == "refuted"

    def test_entries_hold_for_every_measure(self):
        seq = MeasureSequence([gauss41(s) for s in (0.0, 0.2, -0.1, 0.1, 0.0)])
        rep = tightness_certificate(seq, [0.05, 1e-3])
        assert rep.status == "certified"
        for eps, K, c in rep.entries:
            assert all(direct_ball_mass(m.atoms, m.weights, c, K) >= 1 - eps for m in seq)

    def test_bad_eps(self):
        with pytest.raises(InputError):
            tightness_certificate(MeasureSequence(families.translating(3)), [1.5])


class TestVanishingDivergence:
    def test_dilating_lattice_diverges(self):
        seq = MeasureSequence(families.dilating_lattice(12))
        assert classify(seq).verdict == "vanishing"
        J = vanishing_divergence_trace(gauss41(), SE, 1.0, seq)
        assert all(b >= a for a, b in zip(J[2:], J[3:]))
        assert max(J) > 20

    def test_unit_spreading_grows_like_log(self):
        seq = MeasureSequence(families.spreading(40))
        J = vanishing_divergence_trace(gauss41(), SE, 1.0, seq)
        tail = J[5:]
        assert all(b >= a for a, b in zip(tail, tail[1:]))
        # J(nu_m) - log(2m + 1) settles to a constant: growth is logarithmic
        off = [j - math.log(2 * m + 1) for m, j in enumerate(J, start=1)]
        assert abs(off[-1] - off[-10]) < 1e-3

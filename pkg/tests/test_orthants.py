import itertools
import math

import numpy as np
import pytest
from scipy import stats

from monolb.instances import HardInstanceFamily, QueryMatrix, eval_ltf, sample_coeff_vector, sample_yes
from monolb.mollifier import OrthantMollifier
from monolb.momentlab import DiscreteRV, YesNoPair
from monolb.orthants import (
    AnticoncentrationParams,
    DuoEstimate,
    PatternCounts,
    SignPatternDistribution,
    anticoncentration_probe,
    best_union,
    duo_counts,
    duo_exact_small,
    duo_monte_carlo,
    exact_pattern_distribution,
    gaussian_box_prob,
    gaussian_window_mass,
    key_to_pattern,
    lindeberg_step_gap,
    pattern_keys,
    plugin_bias_bound,
    psi_gap,
    sign_pattern,
    tv_distance,
)


@pytest.fixture(scope="module")
def pair3():
    return HardInstanceFamily.build(8, h=3, ell=3).pair


def toy_pair():
    # u = +1, v = -1 or +3 with equal mass: means match
    return YesNoPair(1, 1, DiscreteRV([1.0], [1.0]), DiscreteRV([-1.0, 3.0], [0.5, 0.5]))


class TestSignPattern:
    def test_examples(self):
        np.testing.assert_array_equal(sign_pattern([0.3, -0.1]), [1, -1])
        np.testing.assert_array_equal(sign_pattern([0.0, 0.0]), [1, 1])

    def test_matches_ltf_answers(self, pair3):
        fam = HardInstanceFamily.build(12, h=3, ell=3)
        qm = QueryMatrix.random(5, 12, 0)
        f = sample_yes(fam, 1)
        direct = np.array([eval_ltf(f, row) for row in qm.signs])
        np.testing.assert_array_equal(sign_pattern(qm.entries @ f.weights, 10.0), direct)

    def test_keys_roundtrip(self):
        p = np.random.default_rng(0).choice([-1, 1], (20, 5))
        for row, key in zip(p, pattern_keys(p)):
            assert key_to_pattern(key, 5) == tuple(row)
        wide = np.random.default_rng(1).choice([-1, 1], (4, 70))
        for row, key in zip(wide, pattern_keys(wide)):
            assert key_to_pattern(key, 70) == tuple(row)


class TestExact:
    def test_toy_value(self):
        qm = QueryMatrix(np.ones((1, 1)))
        assert duo_exact_small(qm, toy_pair()).value == 0.5

    def test_identical_rvs_zero(self, pair3):
        same = YesNoPair(3, 1, pair3.no_rv, pair3.no_rv)
        assert duo_exact_small(QueryMatrix.random(2, 6, 0), same).value == 0.0

    def test_masses_sum(self, pair3):
        p = exact_pattern_distribution(QueryMatrix.random(3, 7, 2), pair3.no_rv)
        assert sum(p.mass.values()) == pytest.approx(1.0, abs=1e-12)
        assert all(len(k) == 3 for k in p.mass)

    def test_guard(self, pair3):
        with pytest.raises(ValueError):
            exact_pattern_distribution(QueryMatrix.random(2, 12, 0), pair3.no_rv)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_union_max_equals_tv(self, pair3, d):
        qm = QueryMatrix.random(d, 7, d)
        ps = exact_pattern_distribution(qm, pair3.yes_rv).mass
        pt = exact_pattern_distribution(qm, pair3.no_rv).mass
        cells = list(itertools.product([-1, 1], repeat=d))
        gaps = [ps.get(c, 0.0) - pt.get(c, 0.0) for c in cells]
        best = max(abs(sum(g for g, keep in zip(gaps, mask) if keep))
                   for mask in itertools.product([0, 1], repeat=len(cells)))
        assert best == pytest.approx(duo_exact_small(qm, pair3).value, abs=1e-14)

    def test_best_union_attains(self, pair3):
        qm = QueryMatrix.random(2, 6, 9)
        ps = exact_pattern_distribution(qm, pair3.yes_rv)
        pt = exact_pattern_distribution(qm, pair3.no_rv)
        u = best_union(ps, pt)
        gain = sum(ps.mass[c] - pt.mass.get(c, 0.0) for c in u)
        assert gain == pytest.approx(tv_distance(ps, pt), abs=1e-14)

    def test_duplication_invariance(self, pair3):
        qm = QueryMatrix.random(2, 7, 4)
        dup = QueryMatrix(qm.signs[[0, 1, 0, 1, 1]])
        assert duo_exact_small(dup, pair3).value == duo_exact_small(qm, pair3).value
        rep = QueryMatrix(np.repeat(qm.signs[:1], 4, axis=0))
        assert duo_exact_small(rep, pair3).value == duo_exact_small(qm.subset([0]), pair3).value


class TestDuoEstimate:
    def test_validation(self):
        with pytest.raises(ValueError):
            DuoEstimate(0.1, 0.01, "exact", 0)
        with pytest.raises(ValueError):
            DuoEstimate(1.2, 0.0, "exact", 0)
        with pytest.raises(ValueError):
            DuoEstimate(0.1, 0.0, "guess", 0)

    def test_distribution_sum(self):
        with pytest.raises(ValueError):
            SignPatternDistribution(1, np.array([0, 1]), np.array([0.5, 0.6]))


class TestMonteCarlo:
    def test_agrees_with_exact(self, pair3):
        qm = QueryMatrix.random(3, 8, 0)
        ex = duo_exact_small(qm, pair3).value
        mc = duo_monte_carlo(qm, pair3, 1_000_000, 1)
        assert abs(mc.value - ex) <= 3 * mc.stderr + mc.bias_bound
        assert mc.method == "monte_carlo" and mc.samples == 1_000_000

    def test_same_rv_near_zero(self, pair3):
        same = YesNoPair(3, 1, pair3.no_rv, pair3.no_rv)
        mc = duo_monte_carlo(QueryMatrix.random(3, 20, 1), same, 100_000, 2)
        assert mc.value <= 3 * mc.stderr + mc.bias_bound

    def test_min_samples(self, pair3):
        with pytest.raises(ValueError):
            duo_monte_carlo(QueryMatrix.random(1, 4, 0), pair3, 100, 0)

    def test_duplicated_rows_collapse(self, pair3):
        qm = QueryMatrix.random(1, 30, 5)
        dup = QueryMatrix(np.repeat(qm.signs, 4, axis=0))
        a = duo_monte_carlo(qm, pair3, 50_000, 6)
        b = duo_monte_carlo(dup, pair3, 50_000, 6)
        assert a.value == b.value

    def test_merge_is_split_invariant(self, pair3):
        QueryMatrix.random(3, 10, 2)
        s = np.random.default_rng(0).normal(size=(1000, 3))
        t = np.random.default_rng(1).normal(size=(1000, 3))
        whole = PatternCounts.from_samples(s, t)
        parts = PatternCounts.from_samples(s[:300], t[:300]).merge(PatternCounts.from_samples(s[300:], t[300:]))
        np.testing.assert_array_equal(whole.keys, parts.keys)
        np.testing.assert_array_equal(whole.counts_s, parts.counts_s)
        assert whole.tv() == parts.tv()

    def test_restrict_matches_subset_run(self, pair3):
        qm = QueryMatrix.random(4, 16, 3)
        full = duo_counts(qm, pair3, 20_000, 7)
        sub = full.restrict([0, 2])
        assert sub.n_s == full.n_s and sub.d == 2
        # restriction equals recomputing patterns from the same draws
        g = np.random.default_rng(7)
        sv = sample_coeff_vector(qm, pair3.yes_rv, g, size=20_000)
        tv = sample_coeff_vector(qm, pair3.no_rv, g, size=20_000)
        ref = PatternCounts.from_samples(sv[:, [0, 2]], tv[:, [0, 2]], full_scale(qm, pair3))
        assert sub.tv() == pytest.approx(ref.tv(), abs=1e-15)

    def test_bias_bound(self):
        assert plugin_bias_bound(3, 800) == pytest.approx(0.1)
        assert plugin_bias_bound(40, 10) == 1.0

    def test_bootstrap_cap(self):
        rng = np.random.default_rng(0)
        s = rng.normal(size=(20_000, 20))
        c = PatternCounts.from_samples(s, rng.normal(size=(20_000, 20)))
        se, used = c.bootstrap_stderr(1, resamples=200, work_cap=100_000)
        assert used == max(30, 100_000 // c.keys.size) and se > 0


def full_scale(qm, pair):
    beta = pair.beta()
    return max(1.0, beta * math.sqrt(qm.n))


class TestLindeberg:
    def test_telescoping(self, pair3):
        n = 12
        qm = QueryMatrix.random(2, n, 1)
        m = OrthantMollifier(np.array([[1, 1], [-1, 1]]), 0.3)
        steps = [lindeberg_step_gap(qm, pair3, m.orthants, i, 0.3, 40_000, 100 + i, mollifier=m)
                 for i in range(1, n + 1)]
        total = sum(s.value for s in steps)
        total_se = math.sqrt(sum(s.stderr**2 for s in steps))
        direct = psi_gap(qm, pair3, m, 400_000, 9)
        assert abs(total - direct.value) <= 4 * math.hypot(total_se, direct.stderr)
        assert sum(abs(s.value) for s in steps) >= abs(direct.value) - 3 * direct.stderr

    def test_range(self, pair3):
        qm = QueryMatrix.random(2, 8, 1)
        with pytest.raises(ValueError):
            lindeberg_step_gap(qm, pair3, [[1, 1]], 0, 0.2, 10, 0)

    def test_wide_mollifier_small(self, pair3):
        qm = QueryMatrix.random(1, 200, 2)
        g = lindeberg_step_gap(qm, pair3, [[1]], 100, 2.0, 20_000, 3)
        assert abs(g.value) <= 4 * g.stderr + 1e-3


class TestAnticoncentration:
    def test_infinite_width(self, pair3):
        qm = QueryMatrix.random(3, 50, 0)
        params = AnticoncentrationParams.defaults(50, 3, pair3)
        p = anticoncentration_probe(qm, pair3, [0, 1, 2], params, 10, 2000, 1, half_width=np.inf)
        assert p.value == 1.0

    def test_params(self, pair3):
        p = AnticoncentrationParams.defaults(4096, 9, pair3)
        assert p.eps == pytest.approx(4096 ** (4 / 9 - 0.5))
        assert p.delta == pytest.approx(1 / 64)
        assert p.half_width == pytest.approx(p.eps + pair3.beta() / 64)
        with pytest.raises(ValueError):
            AnticoncentrationParams(0.0, 1.0, 1.0)

    def test_gaussian_window(self, pair3):
        n, i = 900, 450
        qm = QueryMatrix.random(1, n, 3)
        params = AnticoncentrationParams(0.3, 1 / 30, 1.0)
        p = anticoncentration_probe(qm, pair3, [0], params, i, 100_000, 4, half_width=0.5)
        x = qm.entries[0]
        center = pair3.mu * (x.sum() - x[i - 1])
        ref = gaussian_window_mass(center, math.sqrt((n - 1) / n), 0.5)
        assert abs(p.value - ref) <= 0.03

    def test_duplicated_I(self, pair3):
        qm = QueryMatrix(np.repeat(QueryMatrix.random(1, 64, 5).signs, 3, axis=0))
        params = AnticoncentrationParams(0.5, 0.125, pair3.beta())
        a = anticoncentration_probe(qm, pair3, [0], params, 5, 50_000, 6)
        b = anticoncentration_probe(qm, pair3, [0, 1, 2], params, 5, 50_000, 7)
        assert abs(a.value - b.value) <= 3 * math.hypot(a.stderr, b.stderr)

    def test_far_queries_decay(self, pair3):
        qm = QueryMatrix.random(4, 256, 8)
        params = AnticoncentrationParams(0.3, 1 / 16, pair3.beta())
        probs = [anticoncentration_probe(qm, pair3, list(range(k)), params, 100, 100_000, 9).value
                 for k in (1, 2, 3)]
        assert probs[0] > probs[1] > probs[2]


class TestGaussianBox:
    def test_scalar_cdf(self):
        n = 16
        a = np.full((1, n), 1 / math.sqrt(n))
        p = gaussian_box_prob(a, -0.5, 1.0, 200_000, 0)
        ref = stats.norm.cdf(1.0) - stats.norm.cdf(-0.5)
        assert abs(p.value - ref) <= 4 * p.stderr

    def test_mean_shift(self):
        a = np.full((1, 4), 0.5)
        p = gaussian_box_prob(a, 1.0, 3.0, 200_000, 1, mu=1.0)
        assert abs(p.value - (stats.norm.cdf(1) - stats.norm.cdf(-1))) <= 4 * p.stderr

    def test_empty_box(self):
        assert gaussian_box_prob(np.eye(2), 1.0, 0.5, 1000, 2).value == 0.0

    def test_singular_covariance(self):
        a = np.array([[1.0, 0.0], [1.0, 0.0]])
        p = gaussian_box_prob(a, -1.0, 1.0, 100_000, 3)
        assert abs(p.value - (stats.norm.cdf(1) - stats.norm.cdf(-1))) <= 4 * p.stderr

    def test_density_bound(self):
        a = np.array([[1.0, 0.2, 0.0], [0.0, 1.0, 0.5]])
        w = 0.1
        p = gaussian_box_prob(a, -w, w, 200_000, 4)
        det = np.linalg.det(a @ a.T)
        vol = (2 * w) ** 2
        assert p.value <= vol / (2 * math.pi * math.sqrt(det)) + 4 * p.stderr

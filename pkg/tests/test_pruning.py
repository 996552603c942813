import json
import math
from fractions import Fraction

import numpy as np
import pytest

from monolb.geometry import span_dist_sq_exact
from monolb.instances import HardInstanceFamily
from monolb.pruning import (
    PruneParams,
    bad_orthant_mass,
    duo_drift_check,
    is_scattered,
    near_span_set,
    partition_r,
    prune,
    verify_trace,
)

STRESS = PruneParams(log_power=0)


@pytest.fixture(scope="module")
def pair():
    return HardInstanceFamily.build(64, h=3, ell=3).pair


def random_set(seed, size=30, n=64):
    return np.unique(np.random.default_rng(seed).choice([-1, 1], (size, n)), axis=0)


class TestParams:
    def test_small_n_rejected(self):
        with pytest.raises(ValueError):
            is_scattered(np.ones((2, 4)), 3)

    def test_default_eps(self):
        assert PruneParams().resolve_eps(64, 3) == pytest.approx(64 ** (4 / 3 - 0.5))
        assert PruneParams(eps=0.2).resolve_eps(64, 3) == 0.2

    def test_threshold(self):
        assert PruneParams().threshold(0.1, 10, 64) == pytest.approx(0.1 * 10 * math.log(64) ** 5)


class TestPartition:
    def test_zero_radius(self):
        x = near_span_set(64, 30, 2, 1, 0)
        part = partition_r(x, [0, 1], 0.0)
        assert part.remove.size == 0

    def test_duplicates_give_empty_region(self):
        v = np.random.default_rng(0).choice([-1, 1], 16)
        part = partition_r(np.repeat(v[None, :], 5, axis=0), [0], 0.5)
        assert part.cover.size == part.remove.size == part.incomp.size == 0

    @pytest.mark.parametrize("seed", range(5))
    def test_true_partition(self, seed):
        x = near_span_set(64, 40, 2, 2, seed) if seed % 2 else random_set(seed)
        a = [0, 1]
        d2 = span_dist_sq_exact(x, x[a])
        others = np.setdiff1d(np.arange(len(x)), a)
        r = float(np.sqrt(np.median(d2[others])))
        part = partition_r(x, a, r, params=PruneParams(eps=0.3))
        parts = [set(part.cover.tolist()), set(part.remove.tolist()), set(part.incomp.tolist())]
        assert sum(len(p) for p in parts) == len(set.union(*parts))
        region = {i for i in others if d2[i] <= r * r * (1 + 1e-12)}
        assert set.union(*parts) == region
        assert len(part.cover) <= 2 ** 9
        pts = x / 8.0
        for w, v in zip(part.remove, part.representative):
            assert np.linalg.norm(pts[w] - pts[v]) <= 4 * r + 1e-12

    def test_incompatible_branch(self):
        n = 64
        base = np.ones(n, dtype=int)
        x = [base.copy()]
        for j in range(6):
            w = base.copy()
            w[j] = -1
            x.append(w)
        x.append(np.where(np.arange(n) % 2 == 0, 1, -1))
        part = partition_r(np.array(x), [7], 1.0, params=PruneParams(eps=0.01, gamma1=1.0))
        # near-constant points have coordinate sums far beyond the envelope
        assert part.incomp.size > 0

    def test_bad_size(self):
        with pytest.raises(ValueError):
            partition_r(random_set(0), [0, 1, 2, 3], 0.3, h=3)


class TestScattered:
    def test_single_point(self):
        assert is_scattered(random_set(1, 1), 3).scattered

    def test_duplicates(self):
        v = random_set(2, 1)
        rep = is_scattered(np.repeat(v, 7, axis=0), 3)
        assert rep.scattered and rep.subsets_total == 1

    def test_mode_labels(self):
        x = random_set(3, 20)
        assert is_scattered(x, 2).mode == "exhaustive"
        rep = is_scattered(x, 2, PruneParams(exhaustive_budget=50, sampled_subsets=30))
        assert rep.mode == "sampled" and rep.subsets_checked < rep.subsets_total

    def test_degenerate_violates_stress(self):
        rep = is_scattered(near_span_set(64, 24, 2, 1, 4), 3, STRESS)
        assert not rep.scattered and rep.violations
        v = rep.violations[0]
        assert v.removed > v.threshold
        json.dumps(rep.to_dict())


class TestPrune:
    def test_already_scattered(self):
        x = random_set(5)
        px, tr = prune(x, 3)
        np.testing.assert_array_equal(px.signs, x)
        assert tr.steps == [] and tr.final_size == len(x)

    def test_duplicates_collapse(self):
        v = random_set(6, 1)
        px, tr = prune(np.repeat(v, 9, axis=0), 3)
        assert px.k == 1 and len(tr.steps) == 1 and tr.steps[0].a == ()
        assert verify_trace(np.repeat(v, 9, axis=0), tr)

    @pytest.mark.parametrize("seed", range(4))
    def test_degenerate(self, seed):
        x = near_span_set(64, 40, 2, 1 + seed % 2, seed)
        px, tr = prune(x, 3, STRESS)
        assert tr.steps and px.k < len(x)
        assert is_scattered(px, 3, STRESS).scattered
        assert verify_trace(x, tr)
        assert tr.telescoping_sum() <= tr.telescoping_bound()
        sizes = [s.size_before for s in tr.steps] + [tr.final_size]
        assert all(a > b for a, b in zip(sizes, sizes[1:]))
        # A survives every step
        for s in tr.steps:
            assert set(s.a) <= set(tr.kept.tolist()) | set().union(*[set(t.removed) for t in tr.steps if t is not s]) - set(s.removed)
            assert not set(s.a) & set(s.removed)

    def test_telescoping_exact(self):
        x = near_span_set(64, 40, 3, 1, 9)
        _, tr = prune(x, 3, STRESS)
        manual = sum(Fraction(len(s.removed), s.size_before) for s in tr.steps)
        assert tr.telescoping_sum() == manual
        json.dumps(tr.to_dict())

    def test_output_is_subset(self):
        x = near_span_set(64, 30, 2, 1, 10)
        px, tr = prune(x, 3, STRESS)
        np.testing.assert_array_equal(px.signs, x[tr.kept])


class TestDrift:
    def test_identity(self, pair):
        x = random_set(11, 6)
        rep = duo_drift_check(x, x, pair, 20_000, 0)
        assert rep.drift == 0.0 and rep.within()

    def test_duplicates_zero(self, pair):
        base = random_set(12, 3)
        x = np.vstack([base, base[:2], base[:1]])
        px, _ = prune(x, 3)
        rep = duo_drift_check(x, px, pair, 20_000, 1)
        assert rep.drift == 0.0

    def test_degenerate_within(self, pair):
        base = near_span_set(64, 24, 2, 1, 13)
        x = np.vstack([base, base[::3]])
        px, _ = prune(x, 3)
        rep = duo_drift_check(x, px, pair, 50_000, 2)
        assert rep.within(0.02, 3.0)

    def test_stress_report_consistent(self, pair):
        x = near_span_set(64, 16, 2, 1, 13)
        px, _ = prune(x, 3, STRESS)
        rep = duo_drift_check(x, px, pair, 20_000, 2)
        assert rep.drift == pytest.approx(abs(rep.after.value - rep.before.value))
        assert rep.combined_stderr > 0
        json.dumps(rep.to_dict())

    def test_not_subset(self, pair):
        with pytest.raises(ValueError):
            duo_drift_check(random_set(1, 3), random_set(2, 2), pair, 10_000, 0)


class TestBadOrthants:
    def test_mass_in_range_and_trend(self, pair):
        x = near_span_set(64, 40, 2, 1, 14)
        _, tr = prune(x, 3, STRESS)
        masses = [bad_orthant_mass(x, s, pair, 20_000, 3) for s in tr.steps]
        assert all(0 <= m <= 1 for m in masses)
        # one flipped coordinate of 64 rarely changes the sign of S
        assert max(masses) < 0.5

    def test_dedup_step_zero(self, pair):
        v = random_set(15, 1)
        _, tr = prune(np.repeat(v, 3, axis=0), 3)
        assert bad_orthant_mass(np.repeat(v, 3, axis=0), tr.steps[0], pair, 1000, 0) == 0.0

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monolb.geometry import (
    CubePointSet,
    arrangement_faces,
    compatibility,
    compatibility_gap,
    concentration_probe,
    count_cube_points_in_span,
    cover_set,
    cover_set_with_witnesses,
    covering_check,
    cube_points_near_span,
    dist_to_span,
    gram_det_check,
    hadamard_like,
    hamming,
    incompatibility_box_probe,
    low_weight_rep,
    real_point_cells,
    region_count_formula,
    round_to_cube,
    sample_sign_patterns,
    span_dist_sq_exact,
)
from monolb.instances import HardInstanceFamily
from monolb.momentlab import DiscreteRV


def rand_set(rng, k, n):
    while True:
        s = rng.choice([-1, 1], (k, n))
        if np.unique(s, axis=0).shape[0] == k:
            return CubePointSet(n, s)


def gram_schmidt_dist(v, rows):
    """Independent oracle: classical Gram-Schmidt in plain Python floats."""
    basis = []
    for r in rows:
        w = list(r)
        for q in basis:
            c = sum(a * b for a, b in zip(q, w))
            w = [a - c * b for a, b in zip(w, q)]
        nw = math.sqrt(sum(a * a for a in w))
        if nw > 1e-9:
            basis.append([a / nw for a in w])
    res = list(v)
    for q in basis:
        c = sum(a * b for a, b in zip(q, res))
        res = [a - c * b for a, b in zip(res, q)]
    return math.sqrt(sum(a * a for a in res))


class TestCubePointSet:
    def test_invariants(self):
        with pytest.raises(ValueError):
            CubePointSet(3, np.array([[1, 1, 1], [1, 1, 1]]))
        with pytest.raises(ValueError):
            CubePointSet(3, np.array([[1, 0, 1]]))
        with pytest.raises(ValueError):
            CubePointSet(4, np.array([[1, 1, 1]]))

    def test_scaled_input(self):
        p = CubePointSet.from_points(np.array([[0.5, -0.5, 0.5, 0.5]]))
        np.testing.assert_array_equal(p.signs, [[1, -1, 1, 1]])
        assert np.all(np.abs(p.points) == 0.5)

    def test_roundtrip(self):
        p = rand_set(np.random.default_rng(0), 3, 7)
        np.testing.assert_array_equal(CubePointSet.from_dict(p.to_dict()).signs, p.signs)


class TestDistance:
    def test_member_zero(self):
        a = rand_set(np.random.default_rng(1), 3, 8)
        assert dist_to_span(a.signs[1], a) == 0.0

    def test_orthogonal_unit(self):
        a = CubePointSet(4, np.array([[1, 1, 1, 1]]))
        assert dist_to_span([1, -1, 1, -1], a) == pytest.approx(1.0)

    def test_gram_schmidt_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            n = int(rng.integers(4, 20))
            a = rand_set(rng, int(rng.integers(1, 4)), n)
            v = rng.choice([-1, 1], n)
            ref = gram_schmidt_dist(v / math.sqrt(n), a.points.tolist())
            assert abs(dist_to_span(v, a) - ref) <= 1e-10

    def test_exact_matches_float(self):
        rng = np.random.default_rng(3)
        a = rand_set(rng, 3, 24)
        w = rng.choice([-1, 1], (50, 24))
        ref = np.array([dist_to_span(v, a) ** 2 for v in w])
        np.testing.assert_allclose(span_dist_sq_exact(w, a.signs), ref, atol=1e-12)

    def test_dependent_span(self):
        v = np.random.default_rng(4).choice([-1, 1], 10)
        a = CubePointSet(10, np.array([v, -v]))
        assert span_dist_sq_exact(-v, a.signs)[0] == 0.0

    def test_near_span_all_at_radius_one(self):
        rng = np.random.default_rng(5)
        a = rand_set(rng, 2, 10)
        x = CubePointSet(10, np.unique(rng.choice([-1, 1], (30, 10)), axis=0))
        near, idx = cube_points_near_span(x, a, 1.0)
        assert near.k == x.k and idx.size == x.k

    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_span_cube_count(self, k):
        rng = np.random.default_rng(k)
        for _ in range(3):
            assert count_cube_points_in_span(rand_set(rng, k, 12)) <= 2**k


class TestCover:
    def test_k1(self):
        v = np.array([1, -1, 1, 1, -1])
        got = {tuple(r) for r in cover_set(CubePointSet(5, v[None, :])).signs}
        assert got == {tuple(v), tuple(-v), (1,) * 5}

    @pytest.mark.parametrize("k", [2, 3, 4])
    def test_ltf_count_bound(self, k):
        rng = np.random.default_rng(10 + k)
        for n in (8, 16, 40):
            assert cover_set(rand_set(rng, k, n)).k <= 2 ** (k * k)

    def test_witnesses_reproduce(self):
        a = rand_set(np.random.default_rng(6), 3, 20)
        res = cover_set_with_witnesses(a)
        for pat, alpha in zip(res.cover.signs, res.witnesses):
            np.testing.assert_array_equal(round_to_cube(alpha @ a.points)[0], pat)

    def test_sampler_subset_of_cover(self):
        rng = np.random.default_rng(7)
        a = rand_set(rng, 3, 30)
        cov = {tuple(r) for r in cover_set(a).signs}
        alpha = rng.normal(size=(20_000, 3))
        sampled = {tuple(r) for r in round_to_cube(alpha @ a.points).tolist()}
        assert sampled <= cov

    def test_general_position_example(self):
        pts = np.random.default_rng(8).normal(size=(3, 2))
        assert len(real_point_cells(pts)) == 6 == region_count_formula(3, 2)

    @pytest.mark.parametrize("n,k", [(5, 2), (9, 3), (12, 3)])
    def test_general_position_formula(self, n, k):
        pts = np.random.default_rng(n * k).normal(size=(n, k))
        cells = {tuple(r) for r in real_point_cells(pts).tolist()}
        assert len(cells) == region_count_formula(n, k)
        assert sample_sign_patterns(pts, 100_000, 1) <= cells

    def test_faces_include_zero(self):
        signs, _ = arrangement_faces(np.array([[1.0, 0.0], [0.0, 1.0]]))
        # 4 quadrants, 4 half-axes, origin
        assert len(signs) == 9

    def test_guard(self):
        from monolb.geometry import ArrangementTooLarge

        with pytest.raises(ArrangementTooLarge):
            cover_set(rand_set(np.random.default_rng(9), 4, 30), max_faces=5)

    def test_rounding_contraction(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            n = int(rng.integers(4, 40))
            a = rand_set(rng, int(rng.integers(1, 4)), n)
            u = rng.normal(size=a.k) @ a.points
            v = rng.choice([-1, 1], n)
            dist2 = np.sum((u - v / math.sqrt(n)) ** 2)
            assert hamming(round_to_cube(u)[0], v) <= dist2 * n + 1e-9

    def test_covering_property(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            a = rand_set(rng, 2, 16)
            x = CubePointSet(16, np.unique(rng.choice([-1, 1], (60, 16)), axis=0))
            for r in (0.0, 0.5, 0.8, 0.95):
                assert covering_check(x, a, r) <= 1.0


class TestLowWeight:
    def test_member(self):
        a = rand_set(np.random.default_rng(13), 3, 12)
        rep = low_weight_rep(a.signs[0], a)
        assert rep.realized_gamma2_ratio == 1.0
        np.testing.assert_allclose(rep.u, a.points[0], atol=1e-12)

    def test_k1_scalar_projection(self):
        rng = np.random.default_rng(14)
        for _ in range(20):
            a = rand_set(rng, 1, 16)
            v = rng.choice([-1, 1], 16)
            rep = low_weight_rep(v, a)
            assert rep.betas[0] == pytest.approx(v @ a.signs[0] / 16)
            assert rep.realized_gamma1 <= 1 + 1e-12

    def test_contract(self):
        rng = np.random.default_rng(15)
        for _ in range(100):
            n = int(rng.choice([6, 8, 12]))
            a = rand_set(rng, int(rng.integers(1, 4)), n)
            v = rng.choice([-1, 1], n)
            rep = low_weight_rep(v, a)
            np.testing.assert_allclose(rep.u, rep.betas @ a.points, atol=1e-10)
            assert rep.realized_gamma2_ratio >= 1 - 1e-9
            assert np.max(np.abs(rep.betas)) <= rep.realized_gamma1

    def test_case_two(self):
        s = np.array([[-1, -1, 1, -1, -1, 1], [-1, -1, 1, 1, -1, -1], [1, 1, -1, -1, 1, 1]])
        rep = low_weight_rep([1, 1, 1, 1, 1, -1], CubePointSet(6, s))
        assert rep.case == 2
        assert np.isfinite(rep.realized_gamma1) and np.isfinite(rep.realized_gamma2_ratio)

    def test_hadamard_rows(self):
        h = hadamard_like(3)
        assert h.shape == (8, 3) and np.unique(h, axis=0).shape[0] == 8
        np.testing.assert_array_equal(h[0], [1, 1, 1])

    def test_bounded_across_n(self):
        rng = np.random.default_rng(16)
        worst = {}
        for n in (16, 32, 64):
            vals = []
            for _ in range(60):
                a = rand_set(rng, int(rng.integers(1, 4)), n)
                rep = low_weight_rep(rng.choice([-1, 1], n), a)
                vals.append((rep.realized_gamma1, rep.realized_gamma2_ratio))
            worst[n] = np.max(vals, axis=0)
        # realized constants stay O(1) and do not grow with n
        assert all(np.all(w <= 4) for w in worst.values())
        assert worst[64][0] <= worst[16][0] + 1


class TestCompatibility:
    def test_self_compatible(self):
        v = np.random.default_rng(17).choice([-1, 1], 16)
        assert compatibility(v, CubePointSet(16, v[None, :]), 0.1, 1.0).compatible

    @pytest.mark.parametrize("n,eps,gamma1", [(8, 0.1, 1.0), (8, 1.0, 1.0), (16, 0.5, 2.0), (9, 3.0, 1.0)])
    def test_grid_oracle_constant_vectors(self, n, eps, gamma1):
        v = np.ones(n)
        a = CubePointSet(n, -np.ones((1, n)))
        grid = np.arange(-gamma1, gamma1 + 1e-12, 1e-3)
        best = max(compatibility_gap(v, a, [b], eps) for b in grid)
        ver = compatibility(v, a, eps, gamma1)
        assert ver.compatible == (best <= 0)
        assert ver.margin >= best - 1e-8

    def test_grid_oracle_random(self):
        rng = np.random.default_rng(18)
        for _ in range(15):
            a = rand_set(rng, 2, 12)
            v = rng.choice([-1, 1], 12)
            g = np.linspace(-1.5, 1.5, 121)
            best = max(compatibility_gap(v, a, [x, y], 0.2) for x in g for y in g)
            ver = compatibility(v, a, 0.2, 1.5)
            assert ver.margin >= best - 1e-8
            assert ver.compatible == (ver.margin <= 0)

    def test_witness_certificate(self):
        n = 16
        ver = compatibility(np.ones(n), CubePointSet(n, np.array([[1] * 8 + [-1] * 8])), 0.05, 1.0)
        assert not ver.compatible
        assert compatibility_gap(np.ones(n), CubePointSet(n, np.array([[1] * 8 + [-1] * 8])),
                                 ver.witness_betas, 0.05) > 0
        assert np.all(np.abs(ver.witness_betas) <= 1.0)

    @settings(deadline=None, max_examples=25)
    @given(st.integers(0, 10_000), st.floats(0.1, 1.0), st.floats(1.0, 3.0))
    def test_monotone_in_gamma(self, seed, g_small, factor):
        rng = np.random.default_rng(seed)
        a = rand_set(rng, 2, 10)
        v = rng.choice([-1, 1], 10)
        small = compatibility(v, a, 0.1, g_small)
        large = compatibility(v, a, 0.1, g_small * factor)
        assert large.margin >= small.margin - 1e-8
        assert small.compatible or not large.compatible

    def test_rejects(self):
        with pytest.raises(ValueError):
            compatibility(np.ones(4), CubePointSet(4, np.ones((1, 4))), 0.1, 0.0)


@pytest.fixture(scope="module")
def pair():
    return HardInstanceFamily.build(256, h=3, ell=3).pair


class TestProbes:
    def test_precondition(self, pair):
        v = np.random.default_rng(0).choice([-1, 1], 16)
        with pytest.raises(ValueError):
            incompatibility_box_probe(CubePointSet(16, v[None, :]), v, pair, 0.1, 100)

    def test_incompatible_near_zero(self, pair):
        n = 256
        a = rand_set(np.random.default_rng(1), 1, n)
        v = np.ones(n)
        p = incompatibility_box_probe(a, v, pair, 0.05, 200_000, 2)
        assert p.value <= 10 / 200_000

    def test_wide_box(self, pair):
        n = 256
        a = rand_set(np.random.default_rng(1), 1, n)
        wide = pair.mu * math.sqrt(n) + 12
        p = incompatibility_box_probe(a, np.ones(n), pair, 0.05, 20_000, 3, half_width=wide)
        assert p.value == 1.0

    def test_concentration_zero(self, pair):
        assert concentration_probe(np.zeros(10), pair.no_rv, 100, 0).probability == 0.0

    def test_concentration_single_coordinate(self, pair):
        n = 64
        w = np.zeros(n)
        w[3] = 0.7
        rv = pair.no_rv
        t = math.log(n) ** 0.75
        exact = float(np.sum(rv.probs[np.abs(rv.atoms - rv.mean()) >= t]))
        rep = concentration_probe(w, rv, 200_000, 1)
        assert abs(rep.probability - exact) <= 4 * math.sqrt(exact * (1 - exact) / 200_000) + 1e-12

    def test_concentration_trend(self, pair):
        rng = np.random.default_rng(5)
        probs = []
        for e in (10, 12, 14):
            n = 2**e
            rep = concentration_probe(rng.choice([-1, 1], n) / math.sqrt(n), pair.no_rv, 4000, rng)
            assert rep.probability <= rep.hoeffding_ceiling + 4 * rep.stderr or rep.hoeffding_ceiling == 1
            probs.append(rep.probability)
        assert probs[2] <= probs[0]

    def test_concentration_two_point(self):
        rv = DiscreteRV([-1.0, 1.0], [0.5, 0.5])
        rep = concentration_probe(np.ones(2), rv, 50_000, 6)
        # |x1 + x2| >= sqrt(2) (log 2)^(3/4) happens iff both signs agree
        assert abs(rep.probability - 0.5) <= 4 * rep.stderr


class TestGram:
    def test_orthonormal(self):
        rep = gram_det_check(np.eye(3, 5))
        assert rep.det == pytest.approx(1.0) and rep.residual_product == pytest.approx(1.0)

    @pytest.mark.parametrize("theta", [0.3, 1.0, 2.5])
    def test_angle(self, theta):
        rep = gram_det_check([[1.0, 0.0], [math.cos(theta), math.sin(theta)]])
        assert rep.det == pytest.approx(math.sin(theta) ** 2)
        assert rep.residual_product == pytest.approx(math.sin(theta) ** 2)

    def test_random_cube_rows(self):
        rng = np.random.default_rng(19)
        for _ in range(50):
            t = int(rng.integers(1, 5))
            n = int(rng.integers(t + 2, 64))
            rows = rng.choice([-1, 1], (t, n)) / math.sqrt(n)
            if np.linalg.matrix_rank(rows) < t:
                continue
            assert gram_det_check(rows).holds(1e-8)

    def test_dependent(self):
        with pytest.raises(ValueError):
            gram_det_check([[1.0, 1.0], [2.0, 2.0]])


def test_brute_force_cover_small():
    """Cover set equals brute-force roundings over a fine alpha grid, n=4, k=2."""
    rng = np.random.default_rng(20)
    a = rand_set(rng, 2, 4)
    grid = np.linspace(-1, 1, 81)
    brute = {tuple(round_to_cube(np.array([x, y]) @ a.points)[0]) for x, y in itertools.product(grid, grid)}
    assert brute == {tuple(r) for r in cover_set(a).signs}

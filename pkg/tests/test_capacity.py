"""Tests for fractal hierarchies, energies, capacities and dimension bounds."""

import itertools
import math
from unittest.mock import patch

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from curvatlas.capacity import (
    DiscreteMeasure,
    FractalHierarchy,
    Segment,
    _check_separation,
    build_hierarchy,
    capacity_brute,
    capacity_lower_bound,
    capacity_qp,
    dimension_bound_scan,
    dimension_exponent,
    dimension_lower_bound,
    dump_hierarchy,
    effective_k0,
    energy,
    hierarchy_measure,
    limit_dimension_bound,
    measure_capacity,
    parse_hierarchy,
)
from curvatlas.curves import PolyCurve, box_count, partition_count
from curvatlas.generators import gen_fixture

KOCH_PARAMS = [(5.0, 4), (5.0, 3), (4.0, 3), (4.0, 2), (6.0, 4), (3.0, 2)]


def _assert_hierarchy_invariants(H):
    """Nesting, child counts, separation eps L_k and the measure's ancestry weights."""
    for k in range(1, H.k_max + 1):
        prev, gen = H.generations[k - 1], H.generations[k]
        counts = np.bincount([seg.parent for seg in gen], minlength=len(prev))
        assert counts.tolist() == [seg.n_children for seg in prev]
        assert counts.min() >= H.m
        for seg in gen:
            parent = prev[seg.parent]
            assert parent.s_start - 1e-12 <= seg.s_start < seg.s_end <= parent.s_end + 1e-12
        gap = H.eps * H.scales[k]
        pieces = [H.curve.subcurve(seg.s_start, seg.s_end).vertices for seg in gen]
        for a, b in itertools.combinations(pieces, 2):
            assert cdist(a, b).min() >= gap * (1 - 1e-9)
    assert all(seg.n_children == 0 for seg in H.leaves)

    mu = hierarchy_measure(H)
    assert abs(mu.weights.sum() - 1.0) <= 1e-12
    for index, weight in enumerate(mu.weights):
        chain = H.ancestry(H.k_max, index)
        expected = np.prod([1.0 / H.generations[g][i].n_children for g, i in enumerate(chain)])
        assert weight == pytest.approx(expected, rel=1e-12)


def _random_cover(points, ell, rng):
    """Diameters of random balls of diameter >= ell, each centered on an uncovered point."""
    uncovered = np.ones(len(points), dtype=bool)
    diameters = []
    while uncovered.any():
        center = points[rng.choice(np.flatnonzero(uncovered))]
        radius = rng.uniform(ell / 2, 0.5)
        uncovered &= np.linalg.norm(points - center, axis=1) > radius
        diameters.append(2 * radius)
    return np.array(diameters)


@pytest.fixture
def line_hierarchy():
    """Hierarchy of a straight unit segment at gamma = 5, m = 4, two generations deep."""
    return build_hierarchy(gen_fixture("line", 8), gamma=5.0, m=4, k_max=2)


def _single_segment_hierarchy(gamma=5.0, m=4, L0=1.0):
    curve = gen_fixture("line", 0)
    return FractalHierarchy(curve, gamma, m, L0, ((Segment(0.0, 1.0, -1, 0),),))


class TestBuildHierarchy:
    """Tests for the nested segment construction."""

    def test_line_has_exactly_m_children(self, line_hierarchy):
        """Every segment of a straight line gets exactly m children."""
        H = line_hierarchy
        assert H.k_max == 2
        assert [len(g) for g in H.generations] == [1, 4, 16]
        for gen in H.generations[:-1]:
            assert all(seg.n_children == 4 for seg in gen)

    def test_line_child_positions(self, line_hierarchy):
        """Children of the root start every L0/m and have length L0/gamma."""
        children = line_hierarchy.generations[1]
        np.testing.assert_allclose([c.s_start for c in children], [0.0, 0.25, 0.5, 0.75], atol=1e-9)
        np.testing.assert_allclose([c.s_end - c.s_start for c in children], [0.2] * 4, atol=1e-9)

    def test_children_nested_in_parents(self, line_hierarchy):
        """Each segment lies inside its parent."""
        H = line_hierarchy
        for k in range(1, H.k_max + 1):
            for seg in H.generations[k]:
                parent = H.generations[k - 1][seg.parent]
                assert parent.s_start - 1e-12 <= seg.s_start < seg.s_end <= parent.s_end + 1e-12

    def test_line_invariants(self, line_hierarchy):
        _assert_hierarchy_invariants(line_hierarchy)

    @pytest.mark.parametrize(("gamma", "m"), KOCH_PARAMS)
    def test_koch_invariants(self, koch6, gamma, m):
        """Nesting, counts and separation hold on the Koch curve for several (gamma, m)."""
        _assert_hierarchy_invariants(build_hierarchy(koch6, gamma=gamma, m=m, k_max=2))

    def test_koch_has_extra_children(self, koch7):
        """A curve without straight runs gives some segment more than m children."""
        H = build_hierarchy(koch7, gamma=5.0, m=4, k_max=3)
        _assert_hierarchy_invariants(H)
        assert any(seg.n_children >= 5 for gen in H.generations[:-1] for seg in gen)

    @pytest.mark.parametrize(("gamma", "m"), [(5.0, 4), (4.0, 3)])
    def test_hilbert_invariants(self, gamma, m):
        """The invariants also hold on a space-filling fixture."""
        curve = gen_fixture("hilbert", 5)
        _assert_hierarchy_invariants(build_hierarchy(curve, gamma=gamma, m=m, k_max=2))

    def test_separation_measured_between_legs(self):
        """Crossing pieces fail the separation check although their vertices are far apart."""
        root2 = math.sqrt(2)
        cross = PolyCurve([[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
        pieces = (Segment(0.0, root2, 0, 0), Segment(root2 + 1, 2 * root2 + 1, 0, 0))
        with pytest.raises(RuntimeError, match="closer than"):
            _check_separation(cross, pieces, 0.5, 1)

        tee = PolyCurve([[0.0, 0.0], [1.0, 0.0], [0.5, 0.2], [0.5, 1.0]])
        start = 1.0 + math.hypot(0.5, 0.2)
        pieces = (Segment(0.0, 1.0, 0, 0), Segment(start, start + 0.8, 0, 0))
        _check_separation(tee, pieces, 0.19, 1)
        with pytest.raises(RuntimeError):
            _check_separation(tee, pieces, 0.3, 1)

    def test_derived_constants(self, line_hierarchy):
        """eps, beta and the scale ladder follow from gamma and m."""
        H = line_hierarchy
        assert H.eps == pytest.approx(0.25)
        assert H.beta == pytest.approx(math.sqrt(20))
        np.testing.assert_allclose(H.scales, [1.0, 0.2, 0.04])
        assert H.ancestry(2, 5) == [0, 1]

    def test_effective_k0(self, line_hierarchy):
        """Four children per segment fall short of beta by a fraction of a level."""
        assert effective_k0(line_hierarchy) == 1

    def test_text_round_trip(self, line_hierarchy):
        """Dumped hierarchies parse back to the same segments."""
        text = dump_hierarchy(line_hierarchy)
        assert text.startswith("hierarchy v1 gamma=5 m=4")
        parsed = parse_hierarchy(text, line_hierarchy.curve)
        assert parsed.generations == line_hierarchy.generations
        assert parsed.L0 == line_hierarchy.L0

    def test_m_out_of_range(self):
        """m must lie in [gamma/2, gamma)."""
        with pytest.raises(ValueError, match="m must lie"):
            build_hierarchy(gen_fixture("line", 4), gamma=5.0, m=2, k_max=1)
        with pytest.raises(ValueError, match="m must lie"):
            build_hierarchy(gen_fixture("line", 4), gamma=5.0, m=5, k_max=1)

    def test_too_deep_for_cutoff(self):
        """The smallest scale may not drop below the cutoff."""
        curve = gen_fixture("line", 4).with_step(2.0**-4)
        with pytest.raises(ValueError, match="cutoff"):
            build_hierarchy(curve, gamma=5.0, m=4, k_max=3)


class TestEnergy:
    """Tests for discrete measures and their truncated energies."""

    def test_single_point(self):
        """A point mass has energy ell^-s."""
        mu = DiscreteMeasure([[0.5, 0.5]], [1.0])
        assert energy(mu, s=1.0, ell=1.0) == pytest.approx(1.0)

    def test_two_points(self):
        """Two half masses at distance 1 with ell = 1."""
        mu = DiscreteMeasure([[0.0, 0.0], [1.0, 0.0]], [0.5, 0.5])
        assert energy(mu, s=2.0, ell=1.0) == pytest.approx(1.0)

    def test_double_sum(self):
        """Energy equals the explicit double sum."""
        x = np.array([0.0, 0.1, 0.3])
        w = np.array([0.2, 0.3, 0.5])
        s, ell = 1.5, 0.05
        expected = sum(
            w[i] * w[j] * max(abs(x[i] - x[j]), ell) ** -s for i in range(3) for j in range(3)
        )
        mu = DiscreteMeasure(np.column_stack([x, np.zeros(3)]), w)
        assert energy(mu, s, ell) == pytest.approx(expected)

    def test_coincident_points_without_truncation(self):
        """Coincident atoms with ell = 0 give infinite energy."""
        mu = DiscreteMeasure([[0.0, 0.0], [0.0, 0.0]], [0.5, 0.5])
        assert energy(mu, s=1.0, ell=0.0) == math.inf
        assert measure_capacity(mu, 1.0, 0.0).capacity == 0.0

    def test_weights_must_sum_to_one(self):
        """Measures are probability measures."""
        with pytest.raises(ValueError, match="sum to 1"):
            DiscreteMeasure([[0.0, 0.0], [1.0, 0.0]], [0.5, 0.6])

    def test_hierarchy_measure(self, line_hierarchy):
        """Mass splits evenly over the leaves, one atom per leaf."""
        mu = hierarchy_measure(line_hierarchy)
        np.testing.assert_allclose(mu.weights, np.full(16, 1 / 16))
        np.testing.assert_allclose(mu.support[0], [0.0, 0.0], atol=1e-12)
        assert len(mu.support) == 16

    def test_support_is_lexicographic_minimum(self):
        """On a line run right to left each atom sits at the leaf's left end, not its start."""
        curve = gen_fixture("line", 8, start=(1.0, 0.0), end=(0.0, 0.0))
        H = build_hierarchy(curve, gamma=5.0, m=4, k_max=1)
        mu = hierarchy_measure(H)
        np.testing.assert_allclose(mu.support[:, 0], [0.8, 0.55, 0.3, 0.05], atol=1e-9)
        np.testing.assert_allclose(mu.support[:, 1], 0.0, atol=1e-12)

    def test_koch_support_points(self, koch6):
        """Every atom is the smallest leaf vertex in (x, y) order."""
        H = build_hierarchy(koch6, gamma=5.0, m=4, k_max=2)
        mu = hierarchy_measure(H)
        for point, leaf in zip(mu.support, H.leaves, strict=True):
            vertices = H.curve.subcurve(leaf.s_start, leaf.s_end).vertices
            assert tuple(point) == min(map(tuple, vertices))


class TestCapacity:
    """Tests for the capacity solvers."""

    def test_single_point(self):
        """One point has capacity ell^s."""
        result = capacity_qp([[0.2, 0.3]], s=1.0, ell=0.1)
        assert result.capacity == pytest.approx(0.1)
        assert result.converged

    def test_symmetric_pair(self):
        """Two points share the mass equally."""
        result = capacity_qp([[0.0, 0.0], [1.0, 0.0]], s=1.0, ell=0.1)
        np.testing.assert_allclose(result.weights, [0.5, 0.5])
        assert result.energy == pytest.approx(5.5)

    def test_matches_brute_force(self):
        """The conditional-gradient solver matches a simplex grid search."""
        points = [[0.0, 0.0], [0.3, 0.0], [0.5, 0.4]]
        qp = capacity_qp(points, s=1.0, ell=0.05)
        brute = capacity_brute(points, s=1.0, ell=0.05, step=1e-3)
        assert qp.capacity == pytest.approx(brute.capacity, rel=1e-3)
        assert qp.energy <= brute.energy * (1 + 1e-5)

    def test_matches_brute_force_on_random_triples(self):
        """Random three-point sets agree with the grid search to 1e-3 in energy."""
        rng = np.random.default_rng(7)
        for _ in range(200):
            points = rng.random((3, 2))
            s, ell = rng.uniform(0.5, 2.0), rng.uniform(0.02, 0.3)
            qp = capacity_qp(points, s, ell)
            brute = capacity_brute(points, s, ell, step=1e-3)
            assert qp.energy == pytest.approx(brute.energy, rel=1e-3)

    def test_monotone_in_ell_and_s(self):
        """Capacity grows with the truncation and shrinks with the exponent inside a unit set."""
        points = 0.7 * np.random.default_rng(12).random((15, 2))
        by_ell = [capacity_qp(points, 1.0, ell).capacity for ell in (0.01, 0.05, 0.1, 0.3)]
        assert all(b >= a * (1 - 1e-4) for a, b in zip(by_ell, by_ell[1:]))
        by_s = [capacity_qp(points, s, 0.05).capacity for s in (0.5, 1.0, 1.5, 2.0)]
        assert all(b <= a * (1 + 1e-4) for a, b in zip(by_s, by_s[1:]))

    def test_coincident_points(self):
        """Coincident points without truncation have zero capacity."""
        result = capacity_qp([[0.0, 0.0], [0.0, 0.0]], s=1.0, ell=0.0)
        assert result.capacity == 0.0
        assert not result.converged

    def test_measure_capacity_is_lower_bound(self, line_hierarchy):
        """Any measure's reciprocal energy is at most the capacity of its support."""
        mu = hierarchy_measure(line_hierarchy)
        bound = measure_capacity(mu, s=0.9, ell=0.01)
        best = capacity_qp(mu.support, s=0.9, ell=0.01)
        assert bound.capacity <= best.capacity * (1 + 1e-6)

    def test_argument_validation(self):
        """s must be positive and the point set nonempty."""
        with pytest.raises(ValueError):
            capacity_qp([[0.0, 0.0]], s=0.0, ell=0.1)
        with pytest.raises(ValueError):
            capacity_qp(np.empty((0, 2)), s=1.0, ell=0.1)


class TestCoverings:
    """Tests for covering sums against capacities."""

    def test_random_ball_covers(self):
        """Every cover by sets of diameter >= ell has sum diam^s >= capacity."""
        rng = np.random.default_rng(3)
        for _ in range(20):
            points = rng.random((10, 2))
            s, ell = rng.uniform(0.5, 1.5), rng.uniform(0.01, 0.1)
            cap = capacity_qp(points, s, ell).capacity
            for _ in range(100):
                diameters = _random_cover(points, ell, rng)
                assert np.sum(diameters**s) >= cap * (1 - 1e-9)

    @pytest.mark.parametrize("ell", [0.3, 0.1, 0.05, 0.02])
    def test_curve_counts_bound_capacity(self, koch6, ell):
        """Partition pieces and grid cells of diameter ell cover the hierarchy support."""
        support = hierarchy_measure(build_hierarchy(koch6, gamma=5.0, m=4, k_max=2)).support
        for s in (0.5, 1.0, 1.2):
            cap = capacity_qp(support, s, ell).capacity
            assert partition_count(koch6, ell) >= cap * ell**-s * (1 - 1e-9)
            assert box_count(koch6, ell) >= cap * ell**-s * (1 - 1e-9)

    def test_random_polyline_counts_bound_capacity(self, random_polylines):
        """The same holds for the vertices of random polylines at random scales."""
        rng = np.random.default_rng(8)
        for curve in random_polylines:
            ell, s = rng.uniform(0.02, 0.3), rng.uniform(0.5, 1.5)
            cap = capacity_qp(curve.vertices, s, ell).capacity
            assert partition_count(curve, ell) >= cap * ell**-s * (1 - 1e-9)
            assert box_count(curve, ell) >= cap * ell**-s * (1 - 1e-9)


class TestBounds:
    """Tests for the closed-form capacity and dimension bounds."""

    def test_capacity_lower_bound(self):
        """(eps L0)^s / (gamma^(s k0) + beta / (1 - gamma^s / beta))."""
        H = _single_segment_hierarchy()
        s, beta = 0.9, math.sqrt(20)
        expected = 0.25**s / (5 ** (s * 2) + beta / (1 - 5**s / beta))
        assert capacity_lower_bound(H, s, k0=2) == pytest.approx(expected)

    def test_capacity_lower_bound_range(self):
        """The bound needs gamma^s < beta."""
        with pytest.raises(ValueError, match="gamma"):
            capacity_lower_bound(_single_segment_hierarchy(), s=1.0, k0=0)

    def test_dimension_exponent(self):
        """gamma^s = beta at the dimension exponent."""
        s = dimension_exponent(5.0, 4)
        assert 5.0**s == pytest.approx(math.sqrt(20))

    def test_limit_bound(self):
        """1 + ln(1 + 1/m) / (2 ln m) at m = 2."""
        assert limit_dimension_bound(2) == pytest.approx(1.2924812503605782)

    def test_line_bound_is_one(self):
        """A straight line is never sparse, so the bound falls back to 1."""
        line = gen_fixture("line", 6)
        assert dimension_lower_bound(line, m=2, k_max=2) == 1.0

    def test_scan_rows(self):
        """The scan reports one row per gamma."""
        report = dimension_bound_scan(
            gen_fixture("line", 6), m=2, gamma_list=[3.0, 4.0], k_max=2
        )
        assert [row["gamma"] for row in report["rows"]] == [3.0, 4.0]
        assert not report["all_sparse"]
        assert report["limit_bound"] is None
        with pytest.raises(ValueError, match="gamma"):
            dimension_bound_scan(gen_fixture("line", 6), m=2, gamma_list=[5.0])

    def test_finite_scan_never_uses_limit_bound(self, koch7):
        """An all-sparse scan still reports the largest scanned exponent; the limit stays apart."""
        sparse = {"sparse": True, "longest_chain": 0, "n_runs": 0}
        with patch("curvatlas.capacity.sparsity_check", return_value=sparse):
            report = dimension_bound_scan(koch7, m=2, gamma_list=[4.0], k_max=1)
            assert report["all_sparse"]
            assert report["bound"] == 1.0
            assert report["limit_bound"] == pytest.approx(limit_dimension_bound(2))
            report = dimension_bound_scan(koch7, m=2, gamma_list=[2.2], k_max=1)
            assert report["bound"] == pytest.approx(math.log(math.sqrt(6)) / math.log(2.2))

    @pytest.mark.parametrize(("fixture", "gamma", "m"), [("line", 5.0, 4), ("hilbert", 5.0, 4)])
    def test_lower_bound_below_capacity(self, fixture, gamma, m):
        """The closed form sits below the measure capacity and the optimum on the support."""
        H = build_hierarchy(gen_fixture(fixture, 8 if fixture == "line" else 5), gamma, m, k_max=2)
        self._check_lower_bound(H)

    @pytest.mark.parametrize(("gamma", "m"), KOCH_PARAMS)
    def test_koch_lower_bound_below_capacity(self, koch6, gamma, m):
        """The same ordering holds across Koch hierarchies."""
        self._check_lower_bound(build_hierarchy(koch6, gamma=gamma, m=m, k_max=2))

    @staticmethod
    def _check_lower_bound(H):
        s = 0.9 * dimension_exponent(H.gamma, H.m)
        ell = H.eps * H.scales[-1]
        bound = capacity_lower_bound(H, s, effective_k0(H))
        mu = hierarchy_measure(H)
        assert bound <= measure_capacity(mu, s, ell).capacity * (1 + 1e-9)
        assert bound <= capacity_qp(mu.support, s, ell).capacity * (1 + 1e-6)

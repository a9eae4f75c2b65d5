"""Tests for polygonal curves and the counting functionals."""

import itertools
import math

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from curvatlas.curves import (
    Box,
    CurveConfig,
    PolyCurve,
    box_count,
    diameter,
    dump_curveset,
    exit_points,
    grid_cells,
    grid_cover_constant,
    load_config,
    packing_count,
    parse_curveset,
    partition_count,
    prefix_partition_counts,
    save_curveset,
    span,
)
from curvatlas.generators import gen_fixture


def _brute_partition(vertices: np.ndarray, ell: float) -> int:
    """Fewest contiguous vertex-cut pieces of diameter <= ell, by enumeration."""

    def diam(a, b):
        pts = vertices[a : b + 1]
        return max(
            (np.linalg.norm(p - q) for p, q in itertools.combinations(pts, 2)), default=0.0
        )

    interior = range(1, len(vertices) - 1)
    for n_cuts in range(len(vertices)):
        for cuts in itertools.combinations(interior, n_cuts):
            bounds = [0, *cuts, len(vertices) - 1]
            if all(diam(a, b) <= ell for a, b in zip(bounds, bounds[1:])):
                return n_cuts + 1
    raise AssertionError("no partition found")


class TestPolyCurve:
    """Tests for PolyCurve construction and helpers."""

    def test_rejects_repeated_vertices(self):
        """Consecutive equal vertices are rejected."""
        with pytest.raises(ValueError, match="distinct"):
            PolyCurve([[0, 0], [0, 0], [1, 0]])

    def test_from_points_drops_duplicates(self):
        """from_points removes consecutive duplicates."""
        curve = PolyCurve.from_points([[0, 0], [0, 0], [1, 0]])
        assert len(curve) == 2

    def test_rejects_long_legs(self):
        """A leg longer than the step violates the cutoff."""
        with pytest.raises(ValueError, match="exceeds step"):
            PolyCurve([[0, 0], [1, 0]], step=0.5)

    def test_rejects_non_finite(self):
        """NaN coordinates are rejected."""
        with pytest.raises(ValueError, match="finite"):
            PolyCurve([[0, 0], [np.nan, 1]])

    def test_arc_lengths(self):
        """Arc lengths accumulate leg lengths."""
        curve = PolyCurve([[0, 0], [1, 0], [1, 1]])
        assert curve.arc_lengths.tolist() == [0.0, 1.0, 2.0]
        assert curve.length == 2.0

    def test_point_at_interpolates(self):
        """point_at walks along the legs."""
        curve = PolyCurve([[0, 0], [1, 0], [1, 1]])
        assert curve.point_at(1.5) == pytest.approx([1.0, 0.5])
        assert curve.point_at(5.0) == pytest.approx([1.0, 1.0])

    def test_refined_respects_step(self):
        """refined inserts collinear vertices so every leg is within the new step."""
        curve = PolyCurve([[0, 0], [1, 0]]).refined(0.1)
        assert curve.step == 0.1
        assert curve.max_leg <= 0.1 * (1 + 1e-9)
        assert curve.length == pytest.approx(1.0)

    def test_subcurve(self):
        """subcurve cuts at arbitrary arc positions."""
        piece = PolyCurve([[0, 0], [1, 0], [1, 1]]).subcurve(0.5, 1.5)
        assert piece.vertices.tolist() == [[0.5, 0.0], [1.0, 0.0], [1.0, 0.5]]

    def test_first_exit_and_last_entrance(self):
        """Exit and entrance of a ball along a straight curve."""
        curve = PolyCurve([[0, 0], [1, 0]])
        assert curve.first_exit([0, 0], 0.25) == pytest.approx(0.25)
        assert curve.last_entrance([1, 0], 0.25) == pytest.approx(0.75)
        assert curve.first_exit([0, 0], 2.0) is None


class TestCurveConfig:
    """Tests for configurations of curves."""

    def test_step_must_match_cutoff(self):
        """Every curve's step must equal the cutoff."""
        curve = PolyCurve([[0, 0], [0.1, 0]], step=0.1)
        with pytest.raises(ValueError, match="cutoff"):
            CurveConfig((curve,), 0.2, Box.unit())

    def test_vertices_inside_region(self):
        """Curves leaving the region are rejected."""
        curve = PolyCurve([[0, 0], [0.1, 0]], step=0.1).refined(0.1)
        with pytest.raises(ValueError, match="leaves the region"):
            CurveConfig((curve,), 0.1, Box([0.5, 0.5], [1, 1]))

    def test_from_curves_refines(self):
        """from_curves refines to the cutoff and takes the bounding box."""
        F = CurveConfig.from_curves([PolyCurve([[0, 0], [1, 1]])], 0.25)
        assert all(c.step == 0.25 for c in F)
        assert F.region.lo.tolist() == [0.0, 0.0]
        assert F.region.hi.tolist() == [1.0, 1.0]


class TestDiameterAndSpan:
    """Tests for diameter and span."""

    def test_unit_segment(self, unit_segment):
        """A unit segment has diameter and span 1."""
        assert diameter(unit_segment) == 1.0
        assert span(unit_segment) == 1.0

    def test_single_point(self):
        """A single point has diameter 0."""
        assert diameter(PolyCurve([[0.3, 0.4]])) == 0.0

    def test_open_square(self):
        """The open square path has diameter sqrt(2)."""
        curve = PolyCurve([[0, 0], [1, 0], [1, 1], [0, 1]])
        assert diameter(curve) == pytest.approx(math.sqrt(2))

    def test_closed_loop_span(self):
        """A closed loop has span 0."""
        loop = PolyCurve([[0, 0], [1, 0], [1, 1], [0, 0]])
        assert span(loop) == 0.0

    def test_l_path_span(self):
        """The L path spans its diagonal."""
        assert span(PolyCurve([[0, 0], [1, 0], [1, 1]])) == pytest.approx(math.sqrt(2))

    def test_large_curve_uses_hull(self):
        """Diameters of long curves agree with the direct computation."""
        rng = np.random.default_rng(5)
        pts = np.cumsum(rng.normal(size=(5000, 2)), axis=0)
        curve = PolyCurve.from_points(pts)
        assert diameter(curve) == pytest.approx(pdist(pts).max())


class TestPartitionCount:
    """Tests for the minimal partition count M(C, l)."""

    def test_straight_segment(self, unit_segment):
        """A unit segment splits into ceil(1/l) pieces."""
        assert partition_count(unit_segment, 0.25) == 4
        assert partition_count(unit_segment, 0.3) == 4

    def test_large_scale_gives_one(self, koch6):
        """Scales at or above the diameter give a single piece."""
        assert partition_count(koch6, diameter(koch6) * (1 + 1e-12)) == 1

    def test_single_point(self):
        """A single point is one piece."""
        assert partition_count(PolyCurve([[0.5, 0.5]]), 0.1) == 1

    def test_rejects_nonpositive_scale(self, unit_segment):
        """Scales must be positive."""
        with pytest.raises(ValueError):
            partition_count(unit_segment, 0.0)

    def test_matches_brute_force(self, random_polylines):
        """Vertex-restricted greedy equals the enumerated minimum."""
        for curve in random_polylines:
            ell = max(curve.max_leg, 0.6 * diameter(curve) / 2)
            assert partition_count(curve, ell, vertices_only=True) == _brute_partition(
                curve.vertices, ell
            )

    def test_nonincreasing_in_scale(self, koch6):
        """Coarser scales never need more pieces."""
        counts = [partition_count(koch6, 2.0**-n) for n in range(1, 8)]
        assert counts == sorted(counts)


class TestPackingCount:
    """Tests for the packing count and exit points."""

    def test_straight_segment(self, unit_segment):
        """Points at 0, 0.5 and 1 pack a unit segment at l = 0.5."""
        assert packing_count(unit_segment, 0.5) == 3

    def test_scale_above_diameter(self, unit_segment):
        """Only the start point fits above the diameter."""
        assert packing_count(unit_segment, 1.5) == 1

    def test_exit_points_spacing(self, koch6):
        """Successive exit points are at distance l."""
        s = exit_points(koch6, 0.1)
        pts = koch6.points_at(s)
        gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        np.testing.assert_allclose(gaps, 0.1, rtol=1e-9)
        assert np.all(np.diff(s) > 0)

    def test_partition_packing_inequalities(self, random_polylines, koch6):
        """M(C, 3l) <= packing(C, l) <= M(C, l (1 - 1e-9))."""
        for curve in [*random_polylines, koch6]:
            for ell in (0.05, 0.1, 0.2):
                packed = packing_count(curve, ell)
                assert partition_count(curve, 3 * ell) <= packed
                assert packed <= partition_count(curve, ell * (1 - 1e-9))

    def test_exit_bound(self, koch6):
        """M(C, 2l) is at most the number of exit points."""
        for ell in (0.02, 0.05, 0.1):
            assert partition_count(koch6, 2 * ell) <= packing_count(koch6, ell)


class TestBoxCount:
    """Tests for fixed-grid box counts."""

    def test_axis_segment_on_grid_line(self, unit_segment):
        """A unit segment along a grid line meets 8 cells at mesh 1/8."""
        assert box_count(unit_segment, math.sqrt(2) / 8) == 8

    def test_single_point(self):
        """A point inside a cell meets one cell."""
        assert box_count(PolyCurve([[0.3, 0.3]]), 0.1) == 1

    def test_diagonal_skips_corner_cells(self):
        """The unit-square diagonal meets only the n diagonal cells."""
        diag = PolyCurve([[0, 0], [1, 1]])
        assert box_count(diag, math.sqrt(2) / 8) == 8

    def test_grid_cells_half_open(self):
        """A segment ending on a grid line does not meet the cell beyond it."""
        curve = PolyCurve([[0.0, 0.6], [1.0, 0.6]])
        np.testing.assert_array_equal(grid_cells(curve, 0.25), [[0, 2], [1, 2], [2, 2], [3, 2]])

    def test_cover_constant_bound(self, koch6):
        """Grid counts stay within the dimensional constant of the partition count."""
        c = grid_cover_constant(2)
        for ell in (0.02, 0.05, 0.1, 0.3):
            assert box_count(koch6, ell) <= c * partition_count(koch6, ell)

    def test_nonincreasing_in_scale(self, koch6):
        """Dyadic box counts never grow with the scale."""
        counts = [box_count(koch6, 2.0**-n) for n in range(1, 8)]
        assert counts == sorted(counts)


class TestPrefixCounts:
    """Tests for prefix partition counts."""

    def test_straight_segment(self, unit_segment):
        """A unit segment at l = 0.5 has one cut at s = 0.5."""
        prefix = prefix_partition_counts(unit_segment, 0.5)
        assert prefix.breakpoints.tolist() == pytest.approx([0.0, 0.5])
        assert prefix.counts.tolist() == [1, 2]

    def test_large_scale_constant(self, unit_segment):
        """At or above the diameter the count stays 1."""
        prefix = prefix_partition_counts(unit_segment, 2.0)
        assert prefix.counts.tolist() == [1]

    def test_final_value_matches_partition_count(self, koch6):
        """The last prefix count is the partition count."""
        prefix = prefix_partition_counts(koch6, 0.05)
        assert prefix.counts[-1] == partition_count(koch6, 0.05)

    def test_prefix_values_match_trimmed_curves(self, koch6):
        """Prefix counts agree with the count of the trimmed prefix."""
        ell = 0.1
        prefix = prefix_partition_counts(koch6, ell)
        for s in np.linspace(0.05, koch6.length, 7):
            expected = partition_count(koch6.subcurve(0.0, s), ell)
            assert int(prefix.at(s)) == expected


class TestCurvesetFormat:
    """Tests for the curveset text format."""

    def test_round_trip(self, tmp_path):
        """Saved curvesets load back with identical vertices."""
        curves = [
            PolyCurve([[0.1, 0.2], [0.3, 0.4]], step=0.5),
            PolyCurve([[1 / 3, 2 / 3]], step=0.5),
        ]
        path = save_curveset(tmp_path / "c.txt", curves, 0.5)
        loaded, delta = parse_curveset(path.read_text())
        assert delta == 0.5
        assert [c.vertices.tolist() for c in loaded] == [c.vertices.tolist() for c in curves]

    def test_header(self):
        """The first line names the format, dimension and cutoff."""
        text = dump_curveset([PolyCurve([[0, 0], [1, 0]])], 0.0)
        assert text.splitlines()[0] == "curveset v1 d=2 delta=0"

    def test_missing_header(self):
        """Files without the header are rejected."""
        with pytest.raises(ValueError, match="header"):
            parse_curveset("2 0 0 1 0\n")

    def test_coordinate_count_checked(self):
        """Lines with the wrong number of coordinates are rejected."""
        with pytest.raises(ValueError, match="expected 4"):
            parse_curveset("curveset v1 d=2 delta=0\n2 0 0 1\n")

    def test_load_config_refines_continuum(self, tmp_path):
        """Continuum curvesets are refined to their longest leg."""
        curve = gen_fixture("koch", 2)
        path = save_curveset(tmp_path / "k.txt", [curve], 0.0)
        F = load_config(path)
        assert F.cutoff == pytest.approx(curve.max_leg)

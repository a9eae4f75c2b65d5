"""Tests for seeding, trial mapping, random curve samplers and fixtures."""

import math

import numpy as np
import pytest

from curvatlas.curves import CurveConfig
from curvatlas.generators import (
    ExperimentAborted,
    GeneratorSpec,
    StepCapExceeded,
    gen_fixture,
    gen_lerw,
    gen_mst_path,
    gen_rw_frontier,
    make_rng,
    map_trials,
    rw_frontier_masks,
    trial_seed,
)
from curvatlas.lattice import LatticeField


class TestSeeding:
    """Tests for counter-based seeding."""

    def test_equal_seeds_equal_streams(self):
        """Equal seeds give equal draws."""
        np.testing.assert_array_equal(make_rng(5).random(8), make_rng(5).random(8))

    def test_trial_seeds(self):
        """Trial seeds are stable and distinct across trials."""
        assert trial_seed(7, 3) == trial_seed(7, 3)
        assert len({trial_seed(7, i) for i in range(100)}) == 100
        assert trial_seed(7, 0) != trial_seed(8, 0)


class TestMapTrials:
    """Tests for ordered, optionally threaded trial evaluation."""

    def test_order_preserved_with_threads(self):
        """Results come back in trial order regardless of threads."""
        assert map_trials(lambda i: i * i, 20, threads=4) == [i * i for i in range(20)]

    def test_failures_propagate_without_budget(self):
        """Without a budget the first failure raises."""

        def fail(i):
            raise ValueError("boom")

        with pytest.raises(ValueError, match="boom"):
            map_trials(fail, 3)

    def test_failures_within_budget_are_dropped(self):
        """Failed trials are dropped while within the budget."""

        def flaky(i):
            if i == 3:
                raise RuntimeError("unlucky")
            return i

        assert map_trials(flaky, 10, failure_budget=0.2) == [0, 1, 2, 4, 5, 6, 7, 8, 9]

    def test_budget_exceeded(self):
        """Too many failures abort the experiment."""

        def flaky(i):
            if i % 2:
                raise ValueError("odd")
            return i

        with pytest.raises(ExperimentAborted) as exc:
            map_trials(flaky, 10, threads=2, failure_budget=0.1)
        assert exc.value.failed == 5
        assert exc.value.trials == 10


class TestRandomCurves:
    """Tests for the random curve samplers."""

    def test_lerw_is_self_avoiding(self):
        """Loop erasure leaves a self-avoiding nearest-neighbor path."""
        curve = gen_lerw(32, seed=1)
        sites = np.rint(curve.vertices * 32).astype(int)
        assert len({tuple(s) for s in sites}) == len(sites)
        np.testing.assert_allclose(curve.leg_lengths, 1 / 32)
        np.testing.assert_allclose(curve.vertices[0], [0.5, 0.5])
        assert np.linalg.norm(curve.vertices[-1] - 0.5) >= 0.5 - 1e-12
        assert curve.step == pytest.approx(1 / 32)

    def test_lerw_seeded(self):
        """Equal seeds give equal walks."""
        np.testing.assert_array_equal(gen_lerw(16, 9).vertices, gen_lerw(16, 9).vertices)

    def test_lerw_step_cap(self):
        """A walk that cannot reach its target within the cap raises."""
        with pytest.raises(StepCapExceeded):
            gen_lerw(1000, seed=0, step_cap=10)

    def test_mst_path_with_call_numbers(self):
        """Fixed weights determine the tree and hence the path."""
        # bonds: (0,0)-(1,0), (0,1)-(1,1), (0,0)-(0,1), (1,0)-(1,1)
        curve = gen_mst_path(2, seed=0, a=(0, 0), b=(1, 1), call_numbers=[1, 4, 2, 3])
        np.testing.assert_allclose(curve.vertices, [[0, 0], [0.5, 0], [0.5, 0.5]])

    def test_mst_path_is_tree_path(self):
        """The path is a self-avoiding nearest-neighbor walk from a to b."""
        curve = gen_mst_path(16, seed=3)
        sites = np.rint(curve.vertices * 16).astype(int)
        assert tuple(sites[0]) == (0, 0)
        assert tuple(sites[-1]) == (15, 15)
        assert len({tuple(s) for s in sites}) == len(sites)
        np.testing.assert_allclose(curve.leg_lengths, 1 / 16)

    def test_mst_path_single_site(self):
        """a = b gives a single point."""
        assert len(gen_mst_path(4, seed=0, a=(2, 1), b=(2, 1))) == 1

    def test_mst_validation(self):
        """Sites outside the grid and wrong call-number counts are rejected."""
        with pytest.raises(ValueError, match="outside"):
            gen_mst_path(4, seed=0, b=(4, 0))
        with pytest.raises(ValueError, match="call numbers"):
            gen_mst_path(2, seed=0, call_numbers=[1, 2])

    def test_frontier_is_closed(self):
        """The frontier is a closed lattice curve around the trail."""
        curve = gen_rw_frontier(500, 64, seed=2)
        np.testing.assert_allclose(curve.vertices[0], curve.vertices[-1])
        np.testing.assert_allclose(curve.leg_lengths, 1 / 64)

    def test_frontier_masks(self):
        """The trail lies in the filled set and the frontier on its edge."""
        masks = rw_frontier_masks(500, 64, seed=2)
        assert not np.any(masks["trail"] & ~masks["filled"])
        assert not np.any(masks["frontier"] & ~masks["filled"])
        assert not np.any(masks["filled"] & masks["exterior"])


class TestFixtures:
    """Tests for deterministic fixture curves."""

    @pytest.mark.parametrize("depth", [0, 1, 3, 5])
    def test_koch(self, depth):
        """Koch depth d has 4^d legs of total length (4/3)^d."""
        curve = gen_fixture("koch", depth)
        assert len(curve) == 4**depth + 1
        assert curve.length == pytest.approx((4 / 3) ** depth)
        np.testing.assert_allclose(curve.vertices[[0, -1]], [[0, 0], [1, 0]], atol=1e-12)

    def test_line(self):
        """Lines are split into 2^depth equal legs."""
        curve = gen_fixture("line", 3, start=(0, 0.5), end=(1, 0.5))
        assert len(curve) == 9
        np.testing.assert_allclose(curve.leg_lengths, 1 / 8)

    def test_staircase(self):
        """The staircase climbs from (0,0) to (1,1) with total length 2."""
        curve = gen_fixture("staircase", 2)
        assert len(curve) == 9
        assert curve.length == pytest.approx(2.0)
        np.testing.assert_allclose(curve.vertices[-1], [1, 1])

    def test_hairpin(self):
        """The hairpin doubles back at distance width."""
        curve = gen_fixture("hairpin", width=0.1)
        assert len(curve) == 4
        assert curve.length == pytest.approx(1.1)

    def test_hilbert(self):
        """The Hilbert curve visits every cell center once with unit steps."""
        curve = gen_fixture("hilbert", 4)
        assert len(curve) == 256
        np.testing.assert_allclose(curve.leg_lengths, 1 / 16)
        assert len(np.unique(curve.vertices, axis=0)) == 256

    def test_unknown_fixture(self):
        with pytest.raises(ValueError, match="unknown fixture"):
            gen_fixture("spiral")
        with pytest.raises(ValueError, match="depth"):
            gen_fixture("koch", -1)


class TestGeneratorSpec:
    """Tests for named samplers."""

    def test_missing_parameters(self):
        """Required parameters are checked up front."""
        with pytest.raises(ValueError, match="lacks parameters: p"):
            GeneratorSpec("bond_perc", {"n": 8})
        with pytest.raises(ValueError, match="unknown generator"):
            GeneratorSpec("brownian", {})

    def test_percolation_field(self):
        """Percolation specs produce fields, reproducibly per trial."""
        spec = GeneratorSpec("bond_perc", {"n": 16, "p": 0.5}, seed=1)
        assert spec.produces_field
        a, b = spec.sample(3), spec.sample(3)
        assert isinstance(a, LatticeField)
        np.testing.assert_array_equal(a.horizontal, b.horizontal)
        other = spec.sample(4)
        assert not np.array_equal(a.horizontal, other.horizontal)

    def test_percolation_path(self):
        """The path family returns the lowest crossing as a configuration."""
        spec = GeneratorSpec("bond_perc", {"n": 8, "p": 1.0, "family": "path"})
        assert not spec.produces_field
        config = spec.sample(0)
        assert isinstance(config, CurveConfig)
        assert len(config) == 1
        assert config.cutoff == pytest.approx(1 / 8)

    def test_fixture_sample(self):
        """Fixtures ignore the seed and carry the default cutoff."""
        spec = GeneratorSpec("fixture", {"fixture": "koch", "depth": 3})
        config = spec.sample(0)
        assert config.cutoff == 2.0**-8
        assert config.curves[0].length == pytest.approx((4 / 3) ** 3)

    def test_lerw_sample(self):
        """LERW specs give one curve at cutoff 1/n."""
        config = GeneratorSpec("lerw", {"n": 16}, seed=4).sample(0)
        assert len(config) == 1
        assert config.cutoff == pytest.approx(1 / 16)
        assert math.isclose(config.curves[0].step, 1 / 16)

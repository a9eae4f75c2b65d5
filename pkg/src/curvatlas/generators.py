"""Seeded samplers of random curves and deterministic fixture curves.

Every sampler takes an explicit seed; trial i of an experiment seeded with s
draws from ``trial_rng(s, i)``, so results do not depend on scheduling.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, TypeVar

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.csgraph import breadth_first_order, minimum_spanning_tree

from curvatlas.curves import Box, CurveConfig, PolyCurve
from curvatlas.lattice import (
    LatticeField,
    extract_crossing_path,
    gen_bond_percolation,
    gen_site_percolation,
)

logger = logging.getLogger("curvatlas")

T = TypeVar("T")

# Loop-erased walks give up after this many raw steps
STEP_CAP = 10**8

_UNIT_STEPS = ((1, 0), (0, 1), (-1, 0), (0, -1))


class StepCapExceeded(RuntimeError):
    """A random walk ran past its step cap without reaching the target."""


# Seeding


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """Counter-based generator; equal seeds give equal streams on every platform."""
    return np.random.Generator(np.random.Philox(seed))


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return make_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def trial_seed(seed: int, trial: int) -> int:
    """Child seed of trial ``trial`` under master seed ``seed``."""
    state = np.random.SeedSequence(seed, spawn_key=(trial,)).generate_state(1, np.uint64)
    return int(state[0])


class ExperimentAborted(RuntimeError):
    """More trials failed than the failure budget allows."""

    def __init__(self, failed: int, trials: int, budget: float):
        self.failed, self.trials, self.budget = failed, trials, budget
        super().__init__(
            f"{failed} of {trials} trials failed, above the budget of {budget:.2%}"
        )


def map_trials(
    fn: Callable[[int], T], trials: int, threads: int = 1, failure_budget: float | None = None
) -> list[T]:
    """fn(0), ..., fn(trials - 1) in trial order, optionally on a thread pool.

    With a failure budget, trials raising an exception are logged and dropped
    (the result list gets shorter) until the failed fraction exceeds the budget,
    which raises ExperimentAborted. Without one, the first exception propagates.
    """
    if failure_budget is None:
        if threads <= 1:
            return [fn(i) for i in range(trials)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, range(trials)))

    def guarded(i: int):
        try:
            return True, fn(i)
        except (ValueError, RuntimeError, ArithmeticError) as e:
            logger.warning("Trial %d failed: %s", i, e)
            return False, None

    if threads <= 1:
        outcomes = [guarded(i) for i in range(trials)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(guarded, range(trials)))
    failed = sum(1 for ok, _ in outcomes if not ok)
    if failed > failure_budget * trials:
        raise ExperimentAborted(failed, trials, failure_budget)
    return [value for ok, value in outcomes if ok]


# Random curves


def gen_lerw(
    n: int,
    seed: int,
    start=(0.5, 0.5),
    target_radius: float = 0.5,
    step_cap: int = STEP_CAP,
) -> PolyCurve:
    """Loop-erased simple random walk on (1/n)Z^d from ``start`` until it first
    reaches distance ``target_radius`` from it.

    Loops are erased chronologically: revisiting a site cuts the path back to
    the earlier visit.

    Raises:
        StepCapExceeded: the raw walk exceeded ``step_cap`` steps
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if target_radius <= 0:
        raise ValueError(f"target_radius must be > 0, got {target_radius}")
    rng = make_rng(seed)
    origin = tuple(int(round(x * n)) for x in start)
    dim = len(origin)
    moves = np.concatenate([np.eye(dim, dtype=np.int64), -np.eye(dim, dtype=np.int64)])
    radius_sq = (target_radius * n) ** 2

    path = [origin]
    index = {origin: 0}
    pos = np.array(origin, dtype=np.int64)
    steps = 0
    while True:
        for move in rng.integers(0, 2 * dim, size=4096):
            steps += 1
            pos = pos + moves[move]
            site = tuple(pos.tolist())
            seen = index.get(site)
            if seen is not None:
                for erased in path[seen + 1 :]:
                    del index[erased]
                del path[seen + 1 :]
            else:
                index[site] = len(path)
                path.append(site)
            if float(((pos - origin) ** 2).sum()) >= radius_sq:
                logger.debug("LERW: %d raw steps, %d sites kept", steps, len(path))
                return PolyCurve(np.array(path, dtype=float) / n, 1.0 / n)
            if steps >= step_cap:
                raise StepCapExceeded(f"random walk exceeded {step_cap} steps")


def _grid_bonds(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Bond endpoints on an n x n site block: horizontal bonds (row-major) then vertical."""
    ids = np.arange(n * n).reshape(n, n)
    horiz = np.stack([ids[:-1, :].ravel(), ids[1:, :].ravel()], axis=1)
    vert = np.stack([ids[:, :-1].ravel(), ids[:, 1:].ravel()], axis=1)
    bonds = np.vstack([horiz, vert])
    return bonds[:, 0], bonds[:, 1]


def mst_tree(n: int, seed: int, call_numbers=None) -> sparse.csr_matrix:
    """Minimal spanning tree of the n x n grid under i.i.d. uniform bond weights.

    ``call_numbers`` overrides the random weights, one positive value per bond in
    the order horizontal (ix, iy) row-major, then vertical.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    u, v = _grid_bonds(n)
    if call_numbers is None:
        # 1 - U lies in (0, 1]; csgraph treats zero weights as missing bonds
        weights = 1.0 - make_rng(seed).random(u.size)
    else:
        weights = np.asarray(call_numbers, dtype=float)
        if weights.shape != u.shape:
            raise ValueError(f"expected {u.size} call numbers, got {weights.size}")
        if np.any(weights <= 0):
            raise ValueError("call numbers must be positive")
    graph = sparse.coo_matrix((weights, (u, v)), shape=(n * n, n * n)).tocsr()
    return minimum_spanning_tree(graph)


def gen_mst_path(n: int, seed: int, a=(0, 0), b=None, call_numbers=None) -> PolyCurve:
    """The path between sites a and b in the minimal spanning tree of the n x n grid.

    a and b are integer site indices; coordinates are index / n.
    """
    if b is None:
        b = (n - 1, n - 1)
    for name, site in (("a", a), ("b", b)):
        if not all(0 <= int(c) < n for c in site):
            raise ValueError(f"site {name}={tuple(site)} lies outside the {n} x {n} grid")
    tree = mst_tree(n, seed, call_numbers)
    ia, ib = int(a[0]) * n + int(a[1]), int(b[0]) * n + int(b[1])
    _, pred = breadth_first_order(tree, ia, directed=False, return_predecessors=True)
    chain = [ib]
    while chain[-1] != ia:
        chain.append(int(pred[chain[-1]]))
    sites = np.array(np.divmod(np.array(chain[::-1]), n)).T.astype(float)
    return PolyCurve(sites / n, 1.0 / n)


def rw_frontier_masks(steps: int, n: int, seed: int, max_doublings: int = 3) -> dict:
    """Trail, exterior and frontier masks of a simple random walk.

    The walk starts at the center of a box of n + 1 sites per side, enlarged
    (doubling, at most ``max_doublings`` times) until the trail avoids its border.
    The exterior is the unbounded 4-connected component of the complement.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    moves = np.array(_UNIT_STEPS)[make_rng(seed).integers(0, 4, size=steps)]
    trail = np.vstack([[0, 0], np.cumsum(moves, axis=0)])
    reach = int(np.abs(trail).max())
    half = max(n // 2, 1)
    for attempt in range(max_doublings + 1):
        if reach < half:
            break
        if attempt == max_doublings:
            raise ValueError(f"walk of {steps} steps leaves a box of half-width {half}")
        half *= 2
        logger.debug("Frontier box enlarged to half-width %d", half)

    size = 2 * half + 1
    occupied = np.zeros((size, size), dtype=bool)
    occupied[trail[:, 0] + half, trail[:, 1] + half] = True
    labels, _ = ndimage.label(~occupied)
    exterior = labels == labels[0, 0]
    filled = ~exterior
    frontier = filled & ndimage.binary_dilation(exterior)
    return {
        "trail": occupied,
        "exterior": exterior,
        "filled": filled,
        "frontier": frontier,
        "half": half,
    }


def _outer_boundary(filled: np.ndarray) -> np.ndarray:
    """Corner sequence of the outer boundary of a 4-connected cell set, counterclockwise."""
    pad = np.pad(filled, 1)
    inner = pad[1:-1, 1:-1]
    # directed unit edges with the filled cell on the left, keyed by start corner
    out: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
    sides = (
        (pad[1:-1, :-2], (0, 0), 0),  # bottom side, heading east
        (pad[2:, 1:-1], (1, 0), 1),  # right side, heading north
        (pad[1:-1, 2:], (1, 1), 2),  # top side, heading west
        (pad[:-2, 1:-1], (0, 1), 3),  # left side, heading south
    )
    for neighbor, (ox, oy), heading in sides:
        ii, jj = np.nonzero(inner & ~neighbor)
        dx, dy = _UNIT_STEPS[heading]
        for i, j in zip(ii.tolist(), jj.tolist(), strict=True):
            start = (i + ox, j + oy)
            out.setdefault(start, []).append((start[0] + dx, start[1] + dy, heading))

    # bottom-left corner of the lowest, then leftmost, cell; only one cell touches it
    cells = np.argwhere(filled)
    j0 = cells[:, 1].min()
    i0 = cells[cells[:, 1] == j0, 0].min()
    start, heading = (int(i0), int(j0)), 0
    corners = [start]
    pos = (start[0] + 1, start[1])
    while pos != start:
        corners.append(pos)
        options = {h: (x, y) for x, y, h in out[pos]}
        for turn in (1, 0, 3):
            if (heading + turn) % 4 in options:
                heading = (heading + turn) % 4
                pos = options[heading]
                break
        else:
            raise RuntimeError(f"boundary trace stuck at corner {pos}")
    corners.append(start)
    return np.array(corners, dtype=float)


def gen_rw_frontier(steps: int, n: int, seed: int) -> PolyCurve:
    """Outer boundary of a simple random walk trail on (1/n)Z^2, as a closed curve.

    The trail starts at (1/2, 1/2); the boundary runs along cell edges with unit
    cells centered on lattice sites.
    """
    masks = rw_frontier_masks(steps, n, seed)
    half = masks["half"]
    corners = _outer_boundary(masks["filled"])
    # corner (i, j) sits at lattice position (i - half - 1/2, j - half - 1/2)
    points = (corners - half - 0.5) / n + 0.5
    return PolyCurve(points, 1.0 / n)


# Deterministic fixtures


def _koch_vertices(depth: int) -> np.ndarray:
    pts = np.array([[0.0, 0.0], [1.0, 0.0]])
    rot = np.array([[0.5, -math.sqrt(3) / 2], [math.sqrt(3) / 2, 0.5]])
    for _ in range(depth):
        p, q = pts[:-1], pts[1:]
        third = (q - p) / 3
        a = p + third
        b = a + third @ rot.T
        c = p + 2 * third
        legs = np.stack([p, a, b, c], axis=1).reshape(-1, 2)
        pts = np.vstack([legs, pts[-1:]])
    return pts


def _hilbert_vertices(depth: int) -> np.ndarray:
    side = 2**depth
    t = np.arange(side * side)
    x = np.zeros_like(t)
    y = np.zeros_like(t)
    s = 1
    while s < side:
        rx = 1 & (t // 2)
        ry = 1 & (t ^ rx)
        flip = (ry == 0) & (rx == 1)
        x = np.where(flip, s - 1 - x, x)
        y = np.where(flip, s - 1 - y, y)
        swap = ry == 0
        x, y = np.where(swap, y, x), np.where(swap, x, y)
        x = x + s * rx
        y = y + s * ry
        t = t // 4
        s *= 2
    return (np.stack([x, y], axis=1) + 0.5) / side


def gen_fixture(kind: str, depth: int = 0, **params) -> PolyCurve:
    """Deterministic test curves (step 0).

    - ``line``: segment ``start``-``end`` (default (0,0)-(1,0)) in 2^depth equal legs
    - ``staircase``: monotone staircase (0,0)-(1,1) with 2^depth steps of each kind
    - ``koch``: Koch curve of the given depth on (0,0)-(1,0)
    - ``hairpin``: two parallel arms of length ``arm`` at distance ``width``
    - ``hilbert``: Hilbert curve through the 4^depth cell centers of [0,1]^2
    """
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    if kind == "line":
        start = np.asarray(params.get("start", (0.0, 0.0)), dtype=float)
        end = np.asarray(params.get("end", (1.0, 0.0)), dtype=float)
        t = np.linspace(0.0, 1.0, 2**depth + 1)[:, None]
        return PolyCurve(start + t * (end - start))
    if kind == "staircase":
        k = 2**depth
        idx = np.arange(2 * k + 1)
        pts = np.stack([(idx + 1) // 2, idx // 2], axis=1) / k
        return PolyCurve(pts)
    if kind == "koch":
        return PolyCurve(_koch_vertices(depth))
    if kind == "hairpin":
        width = float(params.get("width", 2.0**-4))
        arm = float(params.get("arm", 0.5))
        x0, y0 = params.get("origin", (0.25, 0.5))
        return PolyCurve(
            [(x0, y0), (x0 + arm, y0), (x0 + arm, y0 + width), (x0, y0 + width)]
        )
    if kind == "hilbert":
        return PolyCurve(_hilbert_vertices(max(depth, 1)))
    raise ValueError(f"unknown fixture kind {kind!r}")


# Named generators

GENERATOR_KINDS = ("bond_perc", "site_perc", "lerw", "mst_path", "rw_frontier", "fixture")

_REQUIRED = {
    "bond_perc": ("n", "p"),
    "site_perc": ("n", "p"),
    "lerw": ("n",),
    "mst_path": ("n",),
    "rw_frontier": ("steps", "n"),
    "fixture": ("fixture",),
}


def _curve_config(curves: list[PolyCurve], cutoff: float, dim: int = 2) -> CurveConfig:
    """Configuration over the unit box, widened to contain every vertex."""
    lo, hi = np.zeros(dim), np.ones(dim)
    for c in curves:
        lo = np.minimum(lo, c.vertices.min(axis=0))
        hi = np.maximum(hi, c.vertices.max(axis=0))
    return CurveConfig.from_curves(curves, cutoff, Box(lo, hi))


@dataclass(frozen=True)
class GeneratorSpec:
    """A named sampler with its parameters and master seed."""

    kind: str
    params: dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ValueError(f"unknown generator {self.kind!r}; expected one of {GENERATOR_KINDS}")
        missing = [p for p in _REQUIRED[self.kind] if p not in self.params]
        if missing:
            raise ValueError(f"generator {self.kind} lacks parameters: {', '.join(missing)}")

    @property
    def produces_field(self) -> bool:
        if self.kind not in ("bond_perc", "site_perc"):
            return False
        return self.params.get("family", "field") == "field"

    def sample(self, trial: int, seed: int | None = None) -> CurveConfig | LatticeField:
        """Draw trial ``trial`` under master seed ``seed`` (default: its own)."""
        child = trial_seed(self.seed if seed is None else seed, trial)
        p = self.params
        if self.kind in ("bond_perc", "site_perc"):
            gen = gen_bond_percolation if self.kind == "bond_perc" else gen_site_percolation
            shape = tuple(p["shape"]) if "shape" in p else None
            fld = gen(int(p["n"]), float(p["p"]), child, shape)
            if self.produces_field:
                return fld
            path = extract_crossing_path(fld)
            return _curve_config([] if path is None else [path], fld.spacing)
        if self.kind == "lerw":
            n = int(p["n"])
            curve = gen_lerw(
                n,
                child,
                tuple(p.get("start", (0.5, 0.5))),
                float(p.get("target_radius", 0.5)),
                int(p.get("step_cap", STEP_CAP)),
            )
            return _curve_config([curve], 1.0 / n, curve.dim)
        if self.kind == "mst_path":
            n = int(p["n"])
            a, b = tuple(p.get("a", (0, 0))), tuple(p.get("b", (n - 1, n - 1)))
            curve = gen_mst_path(n, child, a, b)
            return _curve_config([curve], 1.0 / n)
        if self.kind == "rw_frontier":
            n = int(p["n"])
            return _curve_config([gen_rw_frontier(int(p["steps"]), n, child)], 1.0 / n)
        extra = {k: v for k, v in p.items() if k not in ("fixture", "depth", "cutoff")}
        curve = gen_fixture(str(p["fixture"]), int(p.get("depth", 0)), **extra)
        return _curve_config([curve], float(p.get("cutoff", 2.0**-8)), curve.dim)

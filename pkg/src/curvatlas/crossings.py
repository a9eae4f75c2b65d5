"""Shell and cylinder crossings, straight runs, sparsity, and the crossing-exponent estimators.

Traversal counting
------------------
A traversal of the shell D(x; r, R) is a subsegment joining the inner sphere
(|y - x| = r) to the outer sphere (|y - x| = R) inside the closed annulus. Along
each curve the distance to x is coded I (<= r), O (>= R) or neither; the number
of disjoint traversals is the number of I/O changes once uncoded stretches are
dropped. Distance along a leg is convex, so the codes at the two vertices and
at the interior minimum of each leg are enough.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import null_space
from scipy.spatial import cKDTree

from curvatlas.curves import CurveConfig, PolyCurve, diameter, grid_cells
from curvatlas.generators import GeneratorSpec, map_trials
from curvatlas.lattice import LatticeField, cylinder_crossing_event, kcrossing_count
from curvatlas.regularity import ExponentFit, FitError, linear_fit

logger = logging.getLogger("curvatlas")

_INSIDE, _OUTSIDE = 1, 2

# Centers evaluated per sparse distance query
_CENTER_BATCH = 4096

# Candidate lattice points generated per chunk
_CANDIDATE_CHUNK = 2**17


class SeparationError(ValueError):
    """Cylinders of a family are closer than their diameters."""


# Geometry types


@dataclass(frozen=True, eq=False)
class Shell:
    """Closed annulus D(center; inner, outer) = {y : inner <= |y - center| <= outer}."""

    center: np.ndarray
    inner: float
    outer: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).ravel())
        if not 0 < self.inner <= self.outer:
            raise ValueError(f"shell needs 0 < inner <= outer, got ({self.inner}, {self.outer})")

    @property
    def ratio(self) -> float:
        return self.inner / self.outer


@dataclass(frozen=True, eq=False)
class Cylinder:
    """Closed solid cylinder around the axis segment a-b with cross-section diameter ``width``."""

    a: np.ndarray
    b: np.ndarray
    width: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).ravel()
        b = np.asarray(self.b, dtype=float).ravel()
        if a.shape != b.shape:
            raise ValueError("cylinder endpoints must have the same dimension")
        if not np.linalg.norm(b - a) > 0:
            raise ValueError("cylinder length must be > 0")
        if not self.width > 0:
            raise ValueError(f"cylinder width must be > 0, got {self.width}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.a.size

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.b - self.a))

    @property
    def axis(self) -> np.ndarray:
        return (self.b - self.a) / self.length

    @property
    def radius(self) -> float:
        return self.width / 2

    @property
    def center(self) -> np.ndarray:
        return (self.a + self.b) / 2

    @property
    def diameter(self) -> float:
        return math.hypot(self.length, self.width)

    def contains(self, points, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(points) - self.a
        u = pts @ self.axis
        radial = np.linalg.norm(pts - u[:, None] * self.axis, axis=1)
        slack = tol * max(1.0, self.length)
        return (u >= -slack) & (u <= self.length + slack) & (radial <= self.radius + slack)

    def rim_points(self, samples: int = 16) -> np.ndarray:
        """Points on the rims of both faces; their hull is the cylinder in d = 2."""
        basis = null_space(self.axis[None, :]).T
        if self.dim == 2:
            offsets = np.vstack([basis, -basis])
        else:
            theta = np.linspace(0, 2 * math.pi, samples, endpoint=False)
            ring = np.cos(theta)[:, None] * basis[0] + np.sin(theta)[:, None] * basis[1]
            offsets = np.vstack([ring, basis, -basis])
        offsets = offsets * self.radius
        return np.vstack([self.a + offsets, self.b + offsets])

    def to_dict(self) -> dict:
        return {"a": self.a.tolist(), "b": self.b.tolist(), "width": self.width}


@dataclass(frozen=True)
class ScaleLadder:
    """Scales L_k = L0 * gamma^-k for k = 0..k_max, with sparsity offset k0."""

    L0: float
    gamma: float
    k_max: int
    k0: int = 0

    def __post_init__(self):
        if not self.L0 > 0:
            raise ValueError(f"L0 must be > 0, got {self.L0}")
        if not self.gamma > 1:
            raise ValueError(f"gamma must be > 1, got {self.gamma}")
        if self.k_max < 0 or self.k0 < 0:
            raise ValueError("k_max and k0 must be >= 0")

    @property
    def scales(self) -> np.ndarray:
        return self.L0 * self.gamma ** -np.arange(self.k_max + 1, dtype=float)


@dataclass(frozen=True)
class RunRecord:
    """A straight run: the earliest traversal of a cylinder at scale index k by one curve."""

    cylinder: Cylinder
    scale_index: int
    curve_index: int
    arc_range: tuple[float, float]

    def to_record(self) -> str:
        cyl = self.cylinder

        def vec(x):
            return ",".join(f"{c:.17g}" for c in x)

        return (
            f"run scale={self.scale_index} L={cyl.length:.17g} ax={vec(cyl.a)} bx={vec(cyl.b)} "
            f"width={cyl.width:.17g} curve={self.curve_index} "
            f"s0={self.arc_range[0]:.17g} s1={self.arc_range[1]:.17g}"
        )

    def to_dict(self) -> dict:
        return {
            "scale_index": self.scale_index,
            "curve_index": self.curve_index,
            "arc_range": list(self.arc_range),
            **self.cylinder.to_dict(),
        }


def parse_run_record(line: str) -> RunRecord:
    tokens = line.split()
    if not tokens or tokens[0] != "run":
        raise ValueError(f"not a run record: {line!r}")
    fields = dict(tok.split("=", 1) for tok in tokens[1:])

    def vec(s):
        return np.array(s.split(","), dtype=float)

    return RunRecord(
        Cylinder(vec(fields["ax"]), vec(fields["bx"]), float(fields["width"])),
        int(fields["scale"]),
        int(fields["curve"]),
        (float(fields["s0"]), float(fields["s1"])),
    )


# Per-curve leg index


class _CurveIndex:
    """Legs of one curve with a KD-tree over their midpoints."""

    def __init__(self, curve: PolyCurve):
        self.curve = curve
        v = curve.vertices
        self.p = v[:-1]
        self.d = np.diff(v, axis=0)
        self.arc = curve.arc_lengths
        self.lengths = curve.leg_lengths
        self.reach = float(self.lengths.max()) / 2 if self.lengths.size else 0.0
        self.tree = cKDTree(self.p + self.d / 2) if len(v) > 1 else None

    def legs_near(self, point: np.ndarray, radius: float) -> np.ndarray:
        if self.tree is None:
            return np.empty(0, dtype=np.int64)
        hits = self.tree.query_ball_point(point, radius + self.reach)
        return np.sort(np.array(hits, dtype=np.int64))


def _as_curves(F) -> list[PolyCurve]:
    if isinstance(F, PolyCurve):
        return [F]
    return list(F)


def _codes(dist: np.ndarray, inner: float, outer: float) -> np.ndarray:
    return np.where(dist <= inner, _INSIDE, np.where(dist >= outer, _OUTSIDE, 0))


def _traversal_counts(
    indexes: Sequence[_CurveIndex],
    centers: np.ndarray,
    inner: float,
    outer: float,
    per_curve: bool = False,
) -> np.ndarray:
    """Disjoint traversal count of D(x; inner, outer) for every center x."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    total = np.zeros(len(centers), dtype=np.int64)
    if not len(centers):
        return total
    center_tree = cKDTree(centers)
    for idx in indexes:
        if idx.tree is None:
            continue
        pairs = center_tree.sparse_distance_matrix(
            idx.tree, outer + idx.reach, output_type="ndarray"
        )
        if not pairs.size:
            continue
        ci, li = pairs["i"].astype(np.int64), pairs["j"].astype(np.int64)
        rel = idx.p[li] - centers[ci]
        d = idx.d[li]
        t = np.clip(-np.einsum("ij,ij->i", rel, d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
        d_start = np.linalg.norm(rel, axis=1)
        d_end = np.linalg.norm(rel + d, axis=1)
        d_min = np.linalg.norm(rel + t[:, None] * d, axis=1)

        owner = np.concatenate([ci, ci, ci])
        key = np.concatenate([2 * li, 2 * li + 1, 2 * li + 2])
        code = np.concatenate(
            [
                _codes(d_start, inner, outer),
                np.where(d_min <= inner, _INSIDE, 0),
                _codes(d_end, inner, outer),
            ]
        )
        keep = code != 0
        owner, key, code = owner[keep], key[keep], code[keep]
        order = np.lexsort((key, owner))
        owner, code = owner[order], code[order]
        change = (owner[1:] == owner[:-1]) & (code[1:] != code[:-1])
        counts = np.bincount(owner[1:][change], minlength=len(centers))
        total = np.maximum(total, counts) if per_curve else total + counts
    return total


def shell_traversals(F, shell: Shell, per_curve: bool = False) -> int:
    """Disjoint traversals of the shell, summed over curves (or the max over curves)."""
    indexes = [_CurveIndex(c) for c in _as_curves(F)]
    counts = _traversal_counts(indexes, shell.center[None, :], shell.inner, shell.outer, per_curve)
    return int(counts[0])


# k-fold crossing scale


def _shell_geometry(r: float, eps: float, dim: int, mode: str) -> tuple[float, float, float] | None:
    """(inner, outer, lattice mesh) at dyadic scale r, or None when the mode does not apply."""
    r_eps = r ** (1 + eps)
    if mode == "direct":
        return r_eps, r, r / (4 * math.sqrt(dim))
    if mode == "coarse":
        if 3 * r**eps >= 0.5:
            return None
        return 3 * r_eps, r / 2, 2 * r_eps / math.sqrt(dim)
    raise ValueError(f"mode must be 'direct' or 'coarse', got {mode!r}")


def _lattice_offsets(radius: float, h: float, dim: int) -> np.ndarray:
    span = math.ceil(radius / h) + 1
    offsets = np.array(list(itertools.product(range(-span, span + 1), repeat=dim)), dtype=np.int64)
    return offsets[np.linalg.norm(offsets, axis=1) <= span]


def _lattice_candidates(
    anchors: np.ndarray, radius: float, h: float, also: np.ndarray | None = None
) -> Iterable[np.ndarray]:
    """Lattice points h*Z^d within ``radius`` of the anchors (and of ``also``, row-wise)."""
    dim = anchors.shape[1]
    offsets = _lattice_offsets(radius, h, dim)
    chunk = max(1, _CANDIDATE_CHUNK // len(offsets))
    for lo in range(0, len(anchors), chunk):
        a = anchors[lo : lo + chunk]
        base = np.rint(a / h).astype(np.int64)
        cells = (base[:, None, :] + offsets[None, :, :]).reshape(-1, dim)
        pts = cells * h
        near = np.linalg.norm(pts - np.repeat(a, len(offsets), axis=0), axis=1) <= radius
        if also is not None:
            b = np.repeat(also[lo : lo + chunk], len(offsets), axis=0)
            near &= np.linalg.norm(pts - b, axis=1) <= radius
        if near.any():
            yield np.unique(cells[near], axis=0)


def _kfold_at_scale(
    F: CurveConfig,
    indexes: list[_CurveIndex],
    inner: float,
    outer: float,
    h: float,
    k: int,
    per_curve: bool,
) -> bool:
    curves = [idx.curve for idx in indexes]
    reach = inner + max(idx.reach for idx in indexes)
    vertices = np.vstack([c.vertices for c in curves])
    if k <= 2:
        # a single visit to the inner ball gives at most two traversals
        sources = _lattice_candidates(vertices, reach, h)
    else:
        # k >= 3 needs two visits to the inner ball with an exit to the outer sphere between
        owner = np.repeat(np.arange(len(curves)), [len(c) for c in curves])
        arc = np.concatenate([c.arc_lengths for c in curves])
        pairs = cKDTree(vertices).query_pairs(2 * reach, output_type="ndarray")
        if not pairs.size:
            return False
        i, j = pairs[:, 0], pairs[:, 1]
        apart = (owner[i] != owner[j]) | (np.abs(arc[i] - arc[j]) >= 2 * (outer - reach))
        i, j = i[apart], j[apart]
        if not i.size:
            return False
        sources = _lattice_candidates(vertices[i], reach, h, also=vertices[j])

    for cells in sources:
        centers = cells * h
        centers = centers[F.region.contains(centers, 1e-12)]
        for lo in range(0, len(centers), _CENTER_BATCH):
            batch = centers[lo : lo + _CENTER_BATCH]
            if np.any(_traversal_counts(indexes, batch, inner, outer, per_curve) >= k):
                return True
    return False


def min_kfold_scale(
    F: CurveConfig, eps: float, k: int, mode: str = "direct", per_curve: bool = False
) -> float:
    """Smallest dyadic r >= cutoff at which some lattice shell is crossed k times; 1 when none is.

    ``direct`` uses D(x; r^(1+eps), r) on the lattice of mesh r/(4 sqrt(d));
    ``coarse`` uses D(x; 3 r^(1+eps), r/2) on the mesh 2 r^(1+eps)/sqrt(d) and
    only at scales where 3 r^eps < 1/2. Centers lie in the region and within
    the inner radius of some curve.
    """
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    indexes = [_CurveIndex(c) for c in F if len(c) > 1]
    if not indexes:
        return 1.0
    n_fine = math.floor(math.log2(1.0 / F.cutoff) + 1e-9)
    for n in range(n_fine, 0, -1):
        r = 2.0**-n
        geometry = _shell_geometry(r, eps, F.dim, mode)
        if geometry is None:
            continue
        inner, outer, h = geometry
        if _kfold_at_scale(F, indexes, inner, outer, h, k, per_curve):
            logger.debug("%d-fold crossing of power %g found at r=%g", k, eps, r)
            return r
    return 1.0


# Cylinder traversals and straight runs


def _inside_interval(idx: _CurveIndex, legs: np.ndarray, cyl: Cylinder):
    """Parameter interval [t0, t1] of each leg inside the closed cylinder."""
    e = cyl.axis
    rel = idx.p[legs] - cyl.a
    d = idx.d[legs]
    u0, du = rel @ e, d @ e
    A = rel - u0[:, None] * e
    B = d - du[:, None] * e
    aa = np.einsum("ij,ij->i", A, A)
    ab = np.einsum("ij,ij->i", A, B)
    bb = np.einsum("ij,ij->i", B, B)
    rho2 = cyl.radius**2 * (1 + 1e-12)
    slack = 1e-12 * max(1.0, cyl.length)
    t0 = np.zeros(len(legs))
    t1 = np.ones(len(legs))

    with np.errstate(divide="ignore", invalid="ignore"):
        flat = bb <= 1e-300
        disc = ab**2 - bb * (aa - rho2)
        root = np.sqrt(np.maximum(disc, 0.0))
        r_lo = np.where(flat, -np.inf, (-ab - root) / bb)
        r_hi = np.where(flat, np.inf, (-ab + root) / bb)
        radial_empty = np.where(flat, aa > rho2, disc < 0)
        t0 = np.maximum(t0, r_lo)
        t1 = np.minimum(t1, r_hi)

        still = np.abs(du) <= 1e-300
        ta = (-slack - u0) / du
        tb = (cyl.length + slack - u0) / du
        axial_empty = still & ((u0 < -slack) | (u0 > cyl.length + slack))
        t0 = np.where(still, t0, np.maximum(t0, np.minimum(ta, tb)))
        t1 = np.where(still, t1, np.minimum(t1, np.maximum(ta, tb)))

    ok = ~radial_empty & ~axial_empty & (t0 <= t1)
    return t0, t1, u0, du, ok


def _zone(u0: float, du: float, t0: float, t1: float, limit: float, below: bool):
    """Sub-interval of [t0, t1] where u <= limit (below) or u >= limit."""
    if du == 0:
        inside = u0 <= limit if below else u0 >= limit
        return (t0, t1) if inside else None
    tc = (limit - u0) / du
    if (du > 0) == below:
        lo, hi = t0, min(t1, tc)
    else:
        lo, hi = max(t0, tc), t1
    return (lo, hi) if lo <= hi else None


def cylinder_traversal(
    C: PolyCurve, cyl: Cylinder, tol: float = 0.0, index: _CurveIndex | None = None
) -> tuple[float, float] | None:
    """Arc range of the earliest subsegment inside the cylinder joining its two faces.

    The subsegment's endpoints lie within ``tol`` of opposite faces; among all
    such subsegments the one ending first is returned, started at the last
    visit of the opposite face zone before that end.
    """
    if not 0 <= tol < cyl.length / 2:
        raise ValueError(f"tol must be in [0, length/2), got {tol}")
    idx = index if index is not None else _CurveIndex(C)
    legs = idx.legs_near(cyl.center, math.hypot(cyl.length / 2, cyl.radius))
    if not legs.size:
        return None
    t0, t1, u0, du, ok = _inside_interval(idx, legs, cyl)

    slack = 1e-12 * max(1.0, cyl.length)
    last = {"A": None, "B": None}
    prev_leg, prev_end = -2, 0.0
    for leg, a, b, u, dv, good in zip(legs, t0, t1, u0, du, ok, strict=True):
        if not good:
            prev_leg = -2
            continue
        if not (leg == prev_leg + 1 and prev_end >= 1 - 1e-12 and a <= 1e-12):
            last = {"A": None, "B": None}
        prev_leg, prev_end = leg, b
        zones = []
        za = _zone(u, dv, a, b, tol + slack, below=True)
        zb = _zone(u, dv, a, b, cyl.length - tol - slack, below=False)
        if za is not None:
            zones.append((za[0], za[1], "A"))
        if zb is not None:
            zones.append((zb[0], zb[1], "B"))
        for enter, leave, name in sorted(zones):
            other = last["B" if name == "A" else "A"]
            if other is not None:
                return other, float(idx.arc[leg] + enter * idx.lengths[leg])
            last[name] = float(idx.arc[leg] + leave * idx.lengths[leg])
    return None


def detect_straight_runs(
    F: CurveConfig,
    ladder: ScaleLadder,
    tol: float | None = None,
    width_factor: float = 10.0,
) -> list[RunRecord]:
    """Straight runs at every ladder scale at or above the cutoff.

    At scale L = L_k the candidate cylinders have width (width_factor/sqrt(gamma)) L
    and axis endpoints on the grid of mesh L/gamma, both within one grid step of
    a grid point nearest to the curve, at distance between L/2 and (L/2)(1 + 1/gamma).
    """
    if tol is None:
        tol = F.cutoff
    gamma = ladder.gamma
    indexes = [_CurveIndex(c) for c in F]
    stencil = np.array(list(itertools.product((-1, 0, 1), repeat=F.dim)), dtype=np.int64)
    runs: list[RunRecord] = []
    skipped = 0
    for k, L in enumerate(ladder.scales):
        if L < F.cutoff:
            skipped += 1
            continue
        width = width_factor / math.sqrt(gamma) * L
        mesh = L / gamma
        lo_len, hi_len = L / 2, L / 2 * (1 + 1 / gamma)
        if tol >= lo_len / 2:
            logger.debug("Scale %d: tolerance %g too coarse for length %g", k, tol, lo_len)
            continue
        for ci, idx in enumerate(indexes):
            curve = idx.curve
            if len(curve) < 2:
                continue
            s = np.append(np.arange(0.0, curve.length, mesh / 2), curve.length)
            nearest = np.unique(np.rint(curve.points_at(s) / mesh).astype(np.int64), axis=0)
            cells = (nearest[:, None, :] + stencil[None, :, :]).reshape(-1, F.dim)
            anchors = np.unique(cells, axis=0) * mesh
            if len(anchors) < 2:
                continue
            pairs = cKDTree(anchors).query_pairs(hi_len * (1 + 1e-12), output_type="ndarray")
            if not pairs.size:
                continue
            gap = np.linalg.norm(anchors[pairs[:, 0]] - anchors[pairs[:, 1]], axis=1)
            pairs = pairs[gap >= lo_len * (1 - 1e-12)]
            for i, j in pairs:
                cyl = Cylinder(anchors[i], anchors[j], width)
                arc = cylinder_traversal(curve, cyl, tol, idx)
                if arc is not None:
                    runs.append(RunRecord(cyl, k, ci, arc))
    if skipped:
        logger.warning("Skipped %d ladder scales below the cutoff %g", skipped, F.cutoff)
    logger.debug("Found %d straight runs over %d scales", len(runs), ladder.k_max + 1)
    return runs


# Sparsity


def _chain_lengths(runs: Sequence[RunRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Longest nested chain ending at each run, with the predecessor in that chain."""
    best = np.ones(len(runs), dtype=np.int64)
    parent = np.full(len(runs), -1, dtype=np.int64)
    order = sorted(range(len(runs)), key=lambda i: runs[i].scale_index)
    rims = {i: runs[i].cylinder.rim_points() for i in order}
    for pos, i in enumerate(order):
        outer = runs[i]
        finer = [
            j
            for j in order[pos + 1 :]
            if runs[j].scale_index > outer.scale_index and runs[j].curve_index == outer.curve_index
        ]
        if not finer:
            continue
        pts = np.vstack([rims[j] for j in finer])
        inside = outer.cylinder.contains(pts).reshape(len(finer), -1).all(axis=1)
        for j, nested in zip(finer, inside, strict=True):
            if nested and best[i] + 1 > best[j]:
                best[j] = best[i] + 1
                parent[j] = i
    return best, parent


def sparsity_check(
    F: CurveConfig,
    ladder: ScaleLadder,
    runs: Sequence[RunRecord] | None = None,
    tol: float | None = None,
    width_factor: float = 10.0,
) -> dict:
    """Whether F is k0-sparse: no nested chain of n runs at scales k_1 < ... < k_n
    with n >= max(k_n, k0)/2.

    Returns:
        Dict with sparse, k0, longest_chain, n_runs and the witness chain
        (coarsest first) of the longest violation, or None
    """
    if runs is None:
        runs = detect_straight_runs(F, ladder, tol, width_factor)
    runs = list(runs)
    result = {
        "sparse": True,
        "k0": ladder.k0,
        "longest_chain": 0,
        "n_runs": len(runs),
        "witness": None,
    }
    if not runs:
        return result
    best, parent = _chain_lengths(runs)
    depth = np.array([r.scale_index for r in runs])
    violating = best >= 0.5 * np.maximum(depth, ladder.k0)
    result["longest_chain"] = int(best.max())
    if violating.any():
        end = int(np.flatnonzero(violating)[np.argmax(best[violating])])
        chain = []
        while end >= 0:
            chain.append(runs[end])
            end = int(parent[end])
        result["sparse"] = False
        result["witness"] = chain[::-1]
    return result


def minimal_sparse_k0(
    F: CurveConfig,
    ladder: ScaleLadder,
    runs: Sequence[RunRecord] | None = None,
    tol: float | None = None,
    width_factor: float = 10.0,
) -> int:
    """Smallest k0 for which F is k0-sparse."""
    if runs is None:
        runs = detect_straight_runs(F, ladder, tol, width_factor)
    runs = list(runs)
    if not runs:
        return 0
    best, _ = _chain_lengths(runs)
    depth = np.array([r.scale_index for r in runs])
    binding = 2 * best >= depth
    return int(2 * best[binding].max() + 1) if binding.any() else 0


def sparsity_probability(
    spec: GeneratorSpec,
    ladder: ScaleLadder,
    k0_values: Sequence[int],
    trials: int,
    seed: int | None = None,
    threads: int = 1,
    tol: float | None = None,
    width_factor: float = 10.0,
    failure_budget: float | None = None,
) -> dict:
    """Fraction of samples that are k0-sparse, for each k0, and the fit of log(1 - p) on k0."""
    master = spec.seed if seed is None else seed

    def one(trial: int) -> int:
        F = spec.sample(trial, master)
        if isinstance(F, LatticeField):
            raise TypeError("sparsity needs a curve generator, not a percolation field")
        return minimal_sparse_k0(F, ladder, tol=tol, width_factor=width_factor)

    minimal = np.array(map_trials(one, trials, threads, failure_budget), dtype=int)
    done = len(minimal)
    rows = []
    for k0 in sorted(k0_values):
        p, se = _binomial(int((minimal <= k0).sum()), done)
        rows.append({"k0": k0, "p": p, "stderr": se, "trials": done})
    usable = [r for r in rows if r["p"] < 1]
    fit = None
    if len(usable) >= 3:
        ks = [r["k0"] for r in usable]
        fit = linear_fit(ks, [math.log(1 - r["p"]) for r in usable], "sparsity", (min(ks), max(ks)))
    return {"rows": rows, "fit": fit, "minimal_k0": minimal.tolist()}


# Exponent estimators


@dataclass(frozen=True)
class LambdaEstimate:
    """k-arm crossing probabilities per ratio r/R and the fitted decay exponents."""

    k: int
    rows: list[dict]
    fits: dict[int, ExponentFit | None]
    excluded: list[dict]

    @property
    def fit(self) -> ExponentFit | None:
        return self.fits.get(self.k)

    @property
    def exponent(self) -> float | None:
        return None if self.fit is None else self.fit.exponent

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "rows": self.rows,
            "fits": {str(k): (f.to_dict() if f else None) for k, f in self.fits.items()},
            "excluded": self.excluded,
        }


@dataclass(frozen=True)
class RhoEstimate:
    """Probabilities that the first k cylinders are all crossed, and the geometric decay rate."""

    rows: list[dict]
    fit: ExponentFit | None

    @property
    def rho_hat(self) -> float | None:
        return None if self.fit is None else math.exp(self.fit.exponent)

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "fit": self.fit.to_dict() if self.fit else None,
            "rho_hat": self.rho_hat,
        }


def _binomial(hits: int, trials: int) -> tuple[float, float]:
    p = hits / trials
    return p, math.sqrt(p * (1 - p) / trials)


def estimate_lambda(
    spec: GeneratorSpec,
    k: int,
    ratios: Sequence[float],
    trials: int,
    seed: int | None = None,
    threads: int = 1,
    outer: float = 0.4,
    center=None,
    method: str = "flow",
    failure_budget: float | None = None,
) -> LambdaEstimate:
    """Probability of >= j disjoint crossings of D(center; ratio*outer, outer) for j = 1..k,
    and lambda_j = -slope of log p against log(outer/inner).

    Fields are scored by disjoint open crossings (``method``), curve samples by
    shell traversals. Cells with p = 0 are excluded from the fit and reported.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    ratios = sorted(set(float(r) for r in ratios))
    if not ratios or not all(0 < r < 1 for r in ratios):
        raise ValueError("ratios must lie in (0, 1)")
    master = spec.seed if seed is None else seed

    def one(trial: int) -> list[int]:
        sample = spec.sample(trial, master)
        if isinstance(sample, LatticeField):
            mid = np.full(2, 0.5) if center is None else np.asarray(center, dtype=float)
            return [kcrossing_count(sample, Shell(mid, r * outer, outer), method) for r in ratios]
        mid = np.full(sample.dim, 0.5) if center is None else np.asarray(center, dtype=float)
        indexes = [_CurveIndex(c) for c in sample]
        return [
            int(_traversal_counts(indexes, mid[None, :], r * outer, outer)[0]) if indexes else 0
            for r in ratios
        ]

    counts = np.array(map_trials(one, trials, threads, failure_budget), dtype=int)
    done = len(counts)
    counts = counts.reshape(done, len(ratios))
    rows, excluded, fits = [], [], {}
    for j in range(1, k + 1):
        hits = (counts >= j).sum(axis=0)
        xs, ys = [], []
        for ratio, h in zip(ratios, hits, strict=True):
            p, se = _binomial(int(h), done)
            rows.append({"ratio": ratio, "k": j, "p": p, "stderr": se, "trials": done})
            if h == 0:
                excluded.append({"ratio": ratio, "k": j, "reason": "zero probability"})
            else:
                xs.append(math.log(1 / ratio))
                ys.append(math.log(p))
        try:
            window = (min(ratios), max(ratios))
            fit = linear_fit(xs, ys, f"lambda_{j}", window)
            fits[j] = replace(fit, exponent=-fit.exponent)
        except FitError as e:
            logger.warning("No exponent fit for k=%d: %s", j, e)
            fits[j] = None
    if excluded:
        logger.info("Excluded %d zero-probability cells from the fits", len(excluded))
    return LambdaEstimate(k, rows, fits, excluded)


def _segment_distance(p1, q1, p2, q2) -> float:
    """Distance between segments p1-q1 and p2-q2."""
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    a, e, f = d1 @ d1, d2 @ d2, d2 @ r
    c, b = d1 @ r, d1 @ d2
    denom = a * e - b * b
    s = float(np.clip((b * f - c * e) / denom, 0, 1)) if denom > 1e-15 * a * e else 0.0
    t = (b * s + f) / e
    if t < 0:
        t, s = 0.0, float(np.clip(-c / a, 0, 1))
    elif t > 1:
        t, s = 1.0, float(np.clip((b - c) / a, 0, 1))
    return float(np.linalg.norm(p1 + d1 * s - p2 - d2 * t))


def check_separation(cylinders: Sequence[Cylinder]) -> None:
    """Raise SeparationError unless every pair is at least as far apart as the larger diameter."""
    for (i, ci), (j, cj) in itertools.combinations(enumerate(cylinders), 2):
        gap = _segment_distance(ci.a, ci.b, cj.a, cj.b) - ci.radius - cj.radius
        need = max(ci.diameter, cj.diameter)
        if gap < need:
            raise SeparationError(
                f"cylinders {i} and {j} are {gap:.4g} apart, need at least {need:.4g}"
            )


def estimate_rho(
    spec: GeneratorSpec,
    cylinders: Sequence[Cylinder],
    trials: int,
    seed: int | None = None,
    threads: int = 1,
    tol: float | None = None,
    failure_budget: float | None = None,
) -> RhoEstimate:
    """p_k = P(the first k cylinders are all crossed) for k = 0..K.

    rho is exp of the slope of log p_k against k.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    cylinders = list(cylinders)
    check_separation(cylinders)
    master = spec.seed if seed is None else seed

    def one(trial: int) -> list[bool]:
        sample = spec.sample(trial, master)
        if isinstance(sample, LatticeField):
            return [cylinder_crossing_event(sample, cyl) for cyl in cylinders]
        slack = sample.cutoff if tol is None else tol
        indexes = [_CurveIndex(c) for c in sample if len(c) > 1]
        return [
            any(
                cylinder_traversal(idx.curve, cyl, min(slack, cyl.length / 4), idx)
                for idx in indexes
            )
            for cyl in cylinders
        ]

    crossed = np.array(map_trials(one, trials, threads, failure_budget), dtype=bool)
    done = len(crossed)
    prefix = np.cumprod(crossed.reshape(done, len(cylinders)), axis=1).astype(bool)
    rows = [{"k": 0, "p": 1.0, "stderr": 0.0, "trials": done}]
    for k in range(1, len(cylinders) + 1):
        p, se = _binomial(int(prefix[:, k - 1].sum()), done)
        rows.append({"k": k, "p": p, "stderr": se, "trials": done})

    usable = [r for r in rows[1:] if r["p"] > 0]
    fit = None
    if len(usable) >= 3:
        ks = [r["k"] for r in usable]
        fit = linear_fit(ks, [math.log(r["p"]) for r in usable], "rho", (min(ks), max(ks)))
    elif cylinders:
        logger.warning("No rho fit: %d cylinder counts with nonzero probability", len(usable))
    return RhoEstimate(rows, fit)


# Multi-scale configuration counts


def config_statistics(
    F: CurveConfig,
    r_scales: Sequence[float],
    ell_scales: Sequence[float],
    normalizers: dict[tuple[float, float], float] | None = None,
) -> dict:
    """Grid-cell counts of the curves of diameter >= r at mesh l/sqrt(d), for l <= r.

    With ``normalizers`` (the expected count per (r, l)) the weighted sum
    U = sum N(r, l) / E N(r, l) (n + 1)^-2 (m + 1)^-2 over r = 2^-n, l = 2^-m is
    also returned; U is None when any normalizer is missing or zero.
    """
    sqrt_d = math.sqrt(F.dim)
    diameters = [diameter(c) for c in F]
    rows = []
    for r in sorted(r_scales, reverse=True):
        big = [c for c, diam in zip(F, diameters, strict=True) if diam >= r]
        for ell in sorted(ell_scales, reverse=True):
            if ell > r:
                continue
            if big:
                cells = np.vstack([grid_cells(c, ell / sqrt_d) for c in big])
                count = len(np.unique(cells, axis=0))
            else:
                count = 0
            rows.append({"r": r, "ell": ell, "count": count})

    total = None
    if normalizers is not None:
        total = 0.0
        for row in rows:
            expected = _lookup(normalizers, row["r"], row["ell"])
            if not expected:
                logger.warning("No normalizer for r=%g, l=%g; U omitted", row["r"], row["ell"])
                total = None
                break
            n = max(round(-math.log2(row["r"])), 0)
            m = max(round(-math.log2(row["ell"])), 0)
            total += row["count"] / expected * (n + 1) ** -2 * (m + 1) ** -2
    return {"rows": rows, "U": total}


def _lookup(table: dict[tuple[float, float], float], r: float, ell: float) -> float | None:
    for (tr, tl), value in table.items():
        if math.isclose(tr, r, rel_tol=1e-9) and math.isclose(tl, ell, rel_tol=1e-9):
            return value
    return None


def mean_table(tables: Iterable[dict]) -> dict[tuple[float, float], float]:
    """Mean count per (r, l) over several config_statistics results."""
    sums: dict[tuple[float, float], list[int]] = {}
    for table in tables:
        for row in table["rows"]:
            sums.setdefault((row["r"], row["ell"]), []).append(row["count"])
    return {key: float(np.mean(values)) for key, values in sums.items()}

"""Polygonal curves, curve configurations and the three counting functionals.

A curve is an ordered polygonal chain in R^d. The counts implemented here are:

- ``partition_count``: minimal number of contiguous segments of diameter <= l
- ``packing_count``: maximal number of arc-ordered points spaced >= l apart
- ``box_count``: number of cells of the fixed grid of mesh l/sqrt(d) that the curve meets

All functions are pure; curves are immutable.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import cdist, pdist

logger = logging.getLogger("curvatlas")

# A point is a length-d float vector in macroscopic units (the unit box is [0,1]^d)
Point = np.ndarray

# Relative slack on the leg <= step invariant (refinement divides lengths in floating point)
STEP_RTOL = 1e-9

# pdist is used directly up to this many vertices, convex hull reduction beyond
_PDIST_LIMIT = 3000

CURVESET_HEADER = "curveset v1"


def _as_vertices(vertices) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    if v.ndim == 1:
        v = v.reshape(1, -1)
    if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
        raise ValueError(f"vertices must be an (n, d) array with n >= 1, got shape {v.shape}")
    return v


@dataclass(frozen=True, eq=False)
class PolyCurve:
    """An ordered polygonal chain with step-size cutoff.

    ``step`` is the cutoff delta; 0 marks a continuum fixture with no leg bound.
    """

    vertices: np.ndarray
    step: float = 0.0
    _leg_lengths: np.ndarray = field(init=False, repr=False)
    _arc: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = _as_vertices(self.vertices)
        if not np.all(np.isfinite(v)):
            raise ValueError("vertices must be finite")
        if not math.isfinite(self.step) or self.step < 0:
            raise ValueError(f"step must be >= 0, got {self.step}")
        lengths = np.linalg.norm(np.diff(v, axis=0), axis=1)
        if np.any(lengths == 0):
            raise ValueError("consecutive vertices must be distinct")
        if self.step > 0 and lengths.size and lengths.max() > self.step * (1 + STEP_RTOL):
            raise ValueError(f"leg length {lengths.max():.6g} exceeds step {self.step:.6g}")
        v.setflags(write=False)
        arc = np.concatenate([[0.0], np.cumsum(lengths)])
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "step", float(self.step))
        object.__setattr__(self, "_leg_lengths", lengths)
        object.__setattr__(self, "_arc", arc)

    @classmethod
    def from_points(cls, points, step: float = 0.0) -> PolyCurve:
        """Build a curve, dropping consecutive duplicate points."""
        v = _as_vertices(points)
        if len(v) > 1:
            keep = np.concatenate([[True], np.any(np.diff(v, axis=0) != 0, axis=1)])
            v = v[keep]
        return cls(v, step)

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def legs(self) -> np.ndarray:
        return np.diff(self.vertices, axis=0)

    @property
    def leg_lengths(self) -> np.ndarray:
        return self._leg_lengths

    @property
    def arc_lengths(self) -> np.ndarray:
        """Cumulative arc length at each vertex (starts at 0)."""
        return self._arc

    @property
    def length(self) -> float:
        return float(self._arc[-1])

    @property
    def max_leg(self) -> float:
        return float(self._leg_lengths.max()) if self._leg_lengths.size else 0.0

    @property
    def effective_step(self) -> float:
        """The declared step, or the longest leg for continuum fixtures."""
        return self.step if self.step > 0 else self.max_leg

    def _locate(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Leg index and local parameter in [0, 1] for arc positions s."""
        n_legs = len(self._leg_lengths)
        s = np.clip(s, 0.0, self.length)
        idx = np.clip(np.searchsorted(self._arc, s, side="right") - 1, 0, n_legs - 1)
        t = (s - self._arc[idx]) / self._leg_lengths[idx]
        return idx, np.clip(t, 0.0, 1.0)

    def point_at(self, s: float) -> Point:
        """Point at arc length s (clamped to the curve)."""
        if len(self) == 1:
            return self.vertices[0].copy()
        idx, t = self._locate(np.asarray([s], dtype=float))
        return self.vertices[idx[0]] + t[0] * self.legs[idx[0]]

    def points_at(self, s) -> np.ndarray:
        """Vectorized ``point_at``."""
        s = np.asarray(s, dtype=float)
        if len(self) == 1:
            return np.repeat(self.vertices[:1], s.size, axis=0)
        idx, t = self._locate(s.ravel())
        return self.vertices[idx] + t[:, None] * self.legs[idx]

    def subcurve(self, s0: float, s1: float) -> PolyCurve:
        """The piece between arc lengths s0 <= s1."""
        if s1 < s0:
            raise ValueError(f"subcurve needs s0 <= s1, got {s0} > {s1}")
        inner = (self._arc > s0) & (self._arc < s1)
        pts = np.vstack([self.point_at(s0), self.vertices[inner], self.point_at(s1)])
        return PolyCurve.from_points(pts, self.step)

    def reversed(self) -> PolyCurve:
        return PolyCurve(self.vertices[::-1].copy(), self.step)

    def with_step(self, step: float) -> PolyCurve:
        return PolyCurve(self.vertices, step)

    def refined(self, max_leg: float) -> PolyCurve:
        """Insert collinear vertices so every leg is <= max_leg; the result has step max_leg."""
        if max_leg <= 0:
            raise ValueError(f"max_leg must be > 0, got {max_leg}")
        if len(self) == 1:
            return PolyCurve(self.vertices, max_leg)
        counts = np.maximum(1, np.ceil(self._leg_lengths / max_leg).astype(int))
        legs = self.legs
        idx = np.repeat(np.arange(len(counts)), counts)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        local = np.arange(counts.sum()) - np.repeat(starts, counts)
        t = local / np.repeat(counts, counts)
        pts = self.vertices[idx] + t[:, None] * legs[idx]
        return PolyCurve.from_points(np.vstack([pts, self.vertices[-1:]]), max_leg)

    def first_exit(self, center, radius: float, s_from: float = 0.0) -> float | None:
        """Smallest arc length s >= s_from with |x(s) - center| >= radius, or None."""
        center = np.asarray(center, dtype=float)
        start = self.point_at(s_from)
        if np.linalg.norm(start - center) >= radius:
            return float(s_from)
        if len(self) == 1:
            return None
        n_legs = len(self._leg_lengths)
        leg0 = int(min(np.searchsorted(self._arc, s_from, side="right") - 1, n_legs - 1))
        # the ball is convex, so the exit leg ends at the first vertex outside it
        for lo, hi in _blocks(leg0 + 1, len(self)):
            dist = np.linalg.norm(self.vertices[lo:hi] - center, axis=1)
            outside = np.flatnonzero(dist >= radius)
            if outside.size:
                j = lo + int(outside[0])
                if j - 1 == leg0:
                    p, s_p = start, float(s_from)
                else:
                    p, s_p = self.vertices[j - 1], float(self._arc[j - 1])
                q = self.vertices[j]
                u = _exit_param(p, q, center[None, :], radius)[0]
                return s_p + u * float(np.linalg.norm(q - p))
        return None

    def last_entrance(self, center, radius: float, s_to: float | None = None) -> float | None:
        """Largest arc length s <= s_to with |x(s) - center| >= radius, or None."""
        total = self.length
        s_to = total if s_to is None else s_to
        s = self.reversed().first_exit(center, radius, total - s_to)
        return None if s is None else max(0.0, total - s)


def _blocks(start: int, stop: int, first: int = 64) -> Iterator[tuple[int, int]]:
    size = first
    while start < stop:
        end = min(stop, start + size)
        yield start, end
        start = end
        size *= 2


def _exit_param(p: np.ndarray, q: np.ndarray, centers: np.ndarray, radius: float) -> np.ndarray:
    """Upper root u in [0, 1] of |p + u (q - p) - c| = radius for each center c.

    p must lie inside every ball; centers whose ball contains q give u = inf.
    """
    dq = q - p
    a = float(dq @ dq)
    rel = p - centers
    b = 2.0 * rel @ dq
    c = np.minimum(np.einsum("ij,ij->i", rel, rel) - radius * radius, 0.0)
    disc = np.sqrt(np.maximum(b * b - 4.0 * a * c, 0.0))
    u = np.clip((-b + disc) / (2.0 * a), 0.0, 1.0)
    inside = np.linalg.norm(q - centers, axis=1) <= radius
    return np.where(inside, np.inf, u)


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box [lo, hi] in R^d."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).ravel()
        hi = np.asarray(self.hi, dtype=float).ravel()
        if lo.shape != hi.shape or lo.size == 0:
            raise ValueError("box corners must have the same nonzero dimension")
        if np.any(hi < lo):
            raise ValueError("box needs lo <= hi on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def unit(cls, dim: int = 2) -> Box:
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    @property
    def center(self) -> np.ndarray:
        return (self.lo + self.hi) / 2

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all((pts >= self.lo - tol) & (pts <= self.hi + tol), axis=1)


@dataclass(frozen=True, eq=False)
class CurveConfig:
    """A finite collection of curves sharing a cutoff and a bounding region."""

    curves: tuple[PolyCurve, ...]
    cutoff: float
    region: Box

    def __post_init__(self):
        curves = tuple(self.curves)
        if not (self.cutoff > 0 and math.isfinite(self.cutoff)):
            raise ValueError(f"cutoff must be > 0, got {self.cutoff}")
        tol = 1e-12 * max(1.0, self.region.diameter)
        for i, curve in enumerate(curves):
            if curve.dim != self.region.dim:
                raise ValueError(f"curve {i} has dimension {curve.dim}, region {self.region.dim}")
            if not math.isclose(curve.step, self.cutoff, rel_tol=1e-12):
                raise ValueError(f"curve {i} has step {curve.step}, cutoff is {self.cutoff}")
            if not np.all(self.region.contains(curve.vertices, tol)):
                raise ValueError(f"curve {i} leaves the region")
        object.__setattr__(self, "curves", curves)
        object.__setattr__(self, "cutoff", float(self.cutoff))

    @classmethod
    def from_curves(
        cls, curves: Iterable[PolyCurve], cutoff: float, region: Box | None = None
    ) -> CurveConfig:
        """Refine every curve to the cutoff; the region defaults to the bounding box."""
        curves = [
            c if math.isclose(c.step, cutoff, rel_tol=1e-12) else c.refined(cutoff) for c in curves
        ]
        if region is None:
            if curves:
                pts = np.vstack([c.vertices for c in curves])
                region = Box(pts.min(axis=0), pts.max(axis=0))
            else:
                region = Box.unit()
        return cls(tuple(curves), cutoff, region)

    def __len__(self) -> int:
        return len(self.curves)

    def __iter__(self) -> Iterator[PolyCurve]:
        return iter(self.curves)

    @property
    def dim(self) -> int:
        return self.region.dim


# Diameter and span


def diameter(curve: PolyCurve) -> float:
    """Max pairwise distance over vertices (exact for polygonal curves)."""
    v = curve.vertices
    if len(v) == 1:
        return 0.0
    if len(v) > _PDIST_LIMIT:
        v = _hull_reduce(v)
    if len(v) > _PDIST_LIMIT:
        logger.debug("Diameter of %d extreme points by chunked distances", len(v))
        return max(float(cdist(v[i : i + 2000], v).max()) for i in range(0, len(v), 2000))
    return float(pdist(v).max())


def span(curve: PolyCurve) -> float:
    """Distance between the curve's end points."""
    return float(np.linalg.norm(curve.vertices[0] - curve.vertices[-1]))


# Partition count M(C, l)


def _hull_reduce(points: np.ndarray) -> np.ndarray:
    """Extreme points of a set; distances to the set are maximized on them."""
    if points.shape[1] == 1:
        return points[[points.argmin(), points.argmax()]]
    try:
        return points[ConvexHull(points).vertices]
    except QhullError:
        centered = points - points.mean(axis=0)
        _, sv, vt = np.linalg.svd(centered, full_matrices=False)
        if sv.size < 2 or sv[1] <= 1e-12 * max(sv[0], 1e-300):
            proj = centered @ vt[0]
            return points[[proj.argmin(), proj.argmax()]]
        return points


def _check_scale(ell: float) -> None:
    if not ell > 0:
        raise ValueError(f"scale must be > 0, got {ell}")


def _greedy_cuts(curve: PolyCurve, ell: float, vertices_only: bool = False) -> np.ndarray:
    """Arc positions of the greedy partition cuts at diameter ell."""
    _check_scale(ell)
    if len(curve) == 1:
        return np.empty(0)
    v = curve.vertices
    arc = curve.arc_lengths
    if vertices_only and curve.max_leg > ell:
        raise ValueError("a leg is longer than the scale; no vertex-restricted partition exists")

    cuts: list[float] = []
    seg = v[:1].copy()  # points of the current segment (possibly hull-reduced)
    reduced_size = 1
    leg_start, s_start = v[0], 0.0
    j = 1
    block = 16
    spacing = ell * (1 + 1e-12)
    while j < len(v):
        hi = min(len(v), j + block)
        window = v[j:hi]
        far = cdist(window, seg).max(axis=1)
        if len(window) > 1:
            far = np.maximum(far, np.tril(cdist(window, window), -1).max(axis=1))
        bad = np.flatnonzero(far > ell)
        if bad.size == 0:
            seg = np.vstack([seg, window])
            leg_start, s_start = v[hi - 1], float(arc[hi - 1])
            j = hi
            block = min(block * 2, 512)
        else:
            k = j + int(bad[0])
            if k > j:
                seg = np.vstack([seg, v[j:k]])
                leg_start, s_start = v[k - 1], float(arc[k - 1])
            q = v[k]
            if vertices_only:
                cuts.append(float(arc[k - 1]))
                seg = np.vstack([v[k - 1 : k], q[None, :]])
            else:
                u = float(_exit_param(leg_start, q, seg, ell).min())
                if not math.isfinite(u):
                    u = 1.0
                leg_len = float(np.linalg.norm(q - leg_start))
                cut_point = leg_start + u * (q - leg_start)
                s_cut = s_start + u * leg_len
                cuts.append(s_cut)
                rest = leg_len * (1.0 - u)
                extra = max(0, math.ceil(rest / spacing) - 1)
                direction = (q - leg_start) / leg_len
                if extra:
                    cuts.extend(s_cut + ell * np.arange(1, extra + 1))
                last = cut_point + extra * ell * direction
                seg = np.vstack([last[None, :], q[None, :]])
            leg_start, s_start = q, float(arc[k])
            reduced_size = len(seg)
            j = k + 1
            block = 16
        if len(seg) > max(64, 2 * reduced_size):
            seg = _hull_reduce(seg)
            reduced_size = len(seg)
    return np.asarray(cuts)


def partition_count(curve: PolyCurve, ell: float, vertices_only: bool = False) -> int:
    """Minimal number of contiguous segments of diameter <= ell partitioning the curve.

    Segments are cut at the exact threshold point on a leg. With ``vertices_only``
    cuts are restricted to vertices (every leg must then be <= ell).
    """
    return len(_greedy_cuts(curve, ell, vertices_only)) + 1


@dataclass(frozen=True)
class PrefixCounts:
    """Prefix partition counts M(C_s, l) as a right-continuous step function of s."""

    breakpoints: np.ndarray
    counts: np.ndarray
    total_length: float

    def at(self, s) -> np.ndarray:
        """M(C_s, l) for arc positions s (a cut belongs to the segment it closes)."""
        cuts = self.breakpoints[1:]
        return 1 + np.searchsorted(cuts, np.asarray(s, dtype=float), side="left")


def prefix_partition_counts(curve: PolyCurve, ell: float) -> PrefixCounts:
    """Greedy cut points with the prefix count reached at each of them."""
    cuts = _greedy_cuts(curve, ell)
    breakpoints = np.concatenate([[0.0], cuts])
    return PrefixCounts(breakpoints, np.arange(1, len(breakpoints) + 1), curve.length)


# Packing count


def exit_points(curve: PolyCurve, ell: float) -> np.ndarray:
    """Arc positions of successive first exits from balls of radius ell.

    Starts at the curve's first point; each next point is the earliest point at
    distance >= ell from the previous one.
    """
    _check_scale(ell)
    radius = ell * (1 - 1e-12)
    points = [0.0]
    s = curve.first_exit(curve.vertices[0], radius, 0.0) if len(curve) > 1 else None
    while s is not None:
        points.append(s)
        s = curve.first_exit(curve.point_at(s), radius, s)
    return np.asarray(points)


def packing_count(curve: PolyCurve, ell: float) -> int:
    """Maximal number of arc-ordered points with successive distances >= ell."""
    return len(exit_points(curve, ell))


# Grid (box) counts


def grid_cells(curve: PolyCurve, h: float) -> np.ndarray:
    """Integer indices of the half-open mesh-h cells met by a positive-length piece of the curve.

    The grid is anchored at the origin. A single-point curve meets the cell containing it.
    """
    _check_scale(h)
    v = curve.vertices
    if len(v) == 1:
        return np.floor(v / h).astype(np.int64)
    p, q = v[:-1], v[1:]
    delta = q - p
    g0, g1 = np.floor(p / h), np.floor(q / h)
    lo = np.minimum(g0, g1)
    counts = (np.maximum(g0, g1) - lo).astype(np.int64)
    m, d = counts.shape

    flat = counts.ravel()
    leg_axis = np.repeat(np.arange(m * d), flat)
    local = np.arange(flat.sum()) - np.repeat(np.cumsum(flat) - flat, flat)
    leg, axis = np.divmod(leg_axis, d)
    plane = (lo.ravel()[leg_axis] + 1 + local) * h
    t = (plane - p[leg, axis]) / delta[leg, axis]

    all_leg = np.concatenate([leg, np.arange(m), np.arange(m)])
    all_t = np.concatenate([t, np.zeros(m), np.ones(m)])
    order = np.lexsort((all_t, all_leg))
    all_leg, all_t = all_leg[order], np.clip(all_t[order], 0.0, 1.0)
    same = all_leg[1:] == all_leg[:-1]
    gap = all_t[1:] - all_t[:-1]
    keep = same & (gap > 1e-12)
    mid_leg = all_leg[:-1][keep]
    mid_t = (all_t[:-1][keep] + all_t[1:][keep]) / 2
    mids = p[mid_leg] + mid_t[:, None] * delta[mid_leg]
    return np.unique(np.floor(mids / h).astype(np.int64), axis=0)


def box_count(curve: PolyCurve, ell: float) -> int:
    """Number of grid cells of diameter ell (mesh ell/sqrt(d)) met by the curve."""
    _check_scale(ell)
    return len(grid_cells(curve, ell / math.sqrt(curve.dim)))


def grid_cover_constant(dim: int) -> int:
    """Max number of mesh-(l/sqrt(d)) cells a set of diameter l can meet."""
    return (math.ceil(math.sqrt(dim)) + 1) ** dim


# Curveset text format


def dump_curveset(curves: Sequence[PolyCurve], delta: float, dim: int | None = None) -> str:
    """Serialize curves: header line, then one curve per line."""
    if dim is None:
        dim = curves[0].dim if curves else 2
    lines = [f"{CURVESET_HEADER} d={dim} delta={delta:.17g}"]
    for curve in curves:
        if curve.dim != dim:
            raise ValueError(f"curve of dimension {curve.dim} in a d={dim} curveset")
        coords = " ".join(f"{x:.17g}" for x in curve.vertices.ravel())
        lines.append(f"{len(curve)} {coords}")
    return "\n".join(lines) + "\n"


def parse_curveset(text: str) -> tuple[list[PolyCurve], float]:
    """Parse a curveset; returns the curves (with step delta) and delta."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(CURVESET_HEADER):
        raise ValueError("missing curveset header")
    fields = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
    try:
        dim, delta = int(fields["d"]), float(fields["delta"])
    except KeyError as e:
        raise ValueError(f"curveset header lacks {e.args[0]}") from e
    curves = []
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        n = int(tokens[0])
        coords = np.array(tokens[1:], dtype=float)
        if coords.size != n * dim:
            raise ValueError(f"line {lineno}: expected {n * dim} coordinates, got {coords.size}")
        curves.append(PolyCurve(coords.reshape(n, dim), delta))
    return curves, delta


def save_curveset(path: str | Path, curves: Sequence[PolyCurve], delta: float) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_curveset(curves, delta))
    return path


def load_curveset(path: str | Path) -> tuple[list[PolyCurve], float]:
    return parse_curveset(Path(path).read_text())


def load_config(path: str | Path, region: Box | None = None) -> CurveConfig:
    """Load a curveset as a configuration; continuum files are refined to their longest leg."""
    curves, delta = load_curveset(path)
    if delta <= 0:
        delta = max((c.max_leg for c in curves), default=1.0) or 1.0
    return CurveConfig.from_curves(curves, delta, region)

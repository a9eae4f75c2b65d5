"""Nested fractal subsets of a curve, discrete energies and capacities, and dimension bounds.

The hierarchy at scales L_k = L0 gamma^-k is built segment by segment: inside a
generation-k segment the children [y_n, x_n] are strung along the curve with
y_1 the segment start, x_1 its first exit from B(y_1, L_{k+1}), x_n the first
point at distance >= L_k/m from the children already built, and y_n the last
entrance into B(x_n, L_{k+1}) before x_n.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from curvatlas.crossings import ScaleLadder, sparsity_check
from curvatlas.curves import CurveConfig, PolyCurve, span

logger = logging.getLogger("curvatlas")

HIERARCHY_HEADER = "hierarchy v1"

QP_MAX_ITER = 100_000

# Kernels larger than this skip the eigenvalue definiteness check
_EIG_LIMIT = 2000

_ENERGY_BLOCK = 2048

_PAIR_BLOCK = 100_000


# Hierarchy


@dataclass(frozen=True)
class Segment:
    """A curve piece [s_start, s_end] with its parent index and number of children."""

    s_start: float
    s_end: float
    parent: int
    n_children: int


@dataclass(frozen=True, eq=False)
class FractalHierarchy:
    """Generations of nested curve pieces at scales L0 gamma^-k."""

    curve: PolyCurve
    gamma: float
    m: int
    L0: float
    generations: tuple[tuple[Segment, ...], ...]

    @property
    def k_max(self) -> int:
        return len(self.generations) - 1

    @property
    def eps(self) -> float:
        return self.gamma / self.m - 1

    @property
    def beta(self) -> float:
        return math.sqrt(self.m * (self.m + 1))

    @property
    def scales(self) -> np.ndarray:
        return self.L0 * self.gamma ** -np.arange(self.k_max + 1, dtype=float)

    @property
    def leaves(self) -> tuple[Segment, ...]:
        return self.generations[-1]

    def ancestry(self, generation: int, index: int) -> list[int]:
        """Indices of a segment's ancestors, generation 0 first."""
        chain = []
        for g in range(generation, 0, -1):
            index = self.generations[g][index].parent
            chain.append(index)
        return chain[::-1]


def _check_hierarchy_params(gamma: float, m: int, k_max: int) -> None:
    if not gamma > 1:
        raise ValueError(f"gamma must be > 1, got {gamma}")
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    if not gamma / 2 <= m < gamma:
        raise ValueError(f"m must lie in [gamma/2, gamma) = [{gamma / 2:g}, {gamma:g}), got {m}")
    if k_max < 0:
        raise ValueError(f"k_max must be >= 0, got {k_max}")


def _capsule_intervals(p, d, A, B, rho):
    """Parameter interval of the line p + t d inside each capsule of radius rho around A-B."""
    dd = float(d @ d)
    lo = np.full(len(A), np.inf)
    hi = np.full(len(A), -np.inf)
    for C in (A, B):
        w = p - C
        b = w @ d
        disc = b * b - dd * (np.einsum("ij,ij->i", w, w) - rho * rho)
        root = np.sqrt(np.maximum(disc, 0.0))
        hit = disc >= 0
        lo = np.where(hit, np.minimum(lo, (-b - root) / dd), lo)
        hi = np.where(hit, np.maximum(hi, (-b + root) / dd), hi)

    axis = B - A
    length = np.linalg.norm(axis, axis=1)
    body = length > 0
    e = axis[body] / length[body, None]
    w = p - A[body]
    wu, du = np.einsum("ij,ij->i", w, e), e @ d
    W = w - wu[:, None] * e
    D = d - du[:, None] * e
    aa = np.einsum("ij,ij->i", W, W)
    bq = np.einsum("ij,ij->i", W, D)
    cc = np.einsum("ij,ij->i", D, D)
    with np.errstate(divide="ignore", invalid="ignore"):
        flat = cc <= 1e-300 * dd
        disc = bq * bq - cc * (aa - rho * rho)
        root = np.sqrt(np.maximum(disc, 0.0))
        r_lo = np.where(flat, -np.inf, (-bq - root) / cc)
        r_hi = np.where(flat, np.inf, (-bq + root) / cc)
        radial = np.where(flat, aa <= rho * rho, disc >= 0)
        still = np.abs(du) <= 1e-300
        ta, tb = -wu / du, (length[body] - wu) / du
        s_lo = np.where(still, -np.inf, np.minimum(ta, tb))
        s_hi = np.where(still, np.inf, np.maximum(ta, tb))
        slab = ~still | ((wu >= 0) & (wu <= length[body]))
    b_lo, b_hi = np.maximum(r_lo, s_lo), np.minimum(r_hi, s_hi)
    ok = radial & slab & (b_lo <= b_hi)
    lo[body] = np.where(ok, np.minimum(lo[body], b_lo), lo[body])
    hi[body] = np.where(ok, np.maximum(hi[body], b_hi), hi[body])
    return lo, hi


def _segment_distances(points: np.ndarray, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest of the segments A-B."""
    axis = B - A
    len2 = np.einsum("ij,ij->i", axis, axis)
    rel = points[:, None, :] - A[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(len2 > 0, np.einsum("pij,ij->pi", rel, axis) / len2, 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.linalg.norm(rel - t[..., None] * axis[None], axis=2).min(axis=1)


def _first_free_point(
    curve: PolyCurve, s_from: float, s_to: float, A: np.ndarray, B: np.ndarray, rho: float
) -> float | None:
    """First arc position in [s_from, s_to] at distance >= rho from every segment A-B."""
    v, arc, lengths = curve.vertices, curve.arc_lengths, curve.leg_lengths
    n_legs = len(lengths)
    leg = int(min(np.searchsorted(arc, s_from, side="right") - 1, n_legs - 1))
    t_start = (s_from - arc[leg]) / lengths[leg]
    while leg < n_legs and arc[leg] <= s_to:
        stop = min(n_legs, leg + 64)
        dist = _segment_distances(v[leg : stop + 1], A, B)
        for i in range(leg, stop):
            if arc[i] > s_to:
                return None
            j = i - leg
            if (dist[j] + dist[j + 1] + lengths[i]) / 2 < rho:
                t_start = 0.0
                continue
            lo, hi = _capsule_intervals(v[i], v[i + 1] - v[i], A, B, rho)
            live = (lo <= hi) & (hi >= t_start) & (lo <= 1.0)
            cur = t_start
            for a, b in sorted(zip(lo[live], hi[live], strict=True)):
                if a > cur:
                    break
                cur = max(cur, b)
            if cur <= 1.0:
                s = float(arc[i] + cur * lengths[i])
                return s if s <= s_to else None
            t_start = 0.0
        leg = stop
    return None


def _piece_legs(curve: PolyCurve, s0: float, s1: float) -> tuple[np.ndarray, np.ndarray]:
    piece = curve.subcurve(s0, s1).vertices
    if len(piece) == 1:
        return piece, piece
    return piece[:-1], piece[1:]


def _children(curve: PolyCurve, s0: float, s1: float, L: float, gamma: float, m: int):
    """Child pieces of the segment [s0, s1] at scale L."""
    small = L / gamma
    x = curve.first_exit(curve.point_at(s0), small, s0)
    if x is None or x > s1:
        return []
    pieces = [(s0, x)]
    A, B = _piece_legs(curve, s0, x)
    while True:
        x_next = _first_free_point(curve, x, s1, A, B, L / m)
        if x_next is None:
            return pieces
        y = curve.last_entrance(curve.point_at(x_next), small, x_next)
        y = x if y is None else max(y, x)
        pieces.append((y, x_next))
        a, b = _piece_legs(curve, y, x_next)
        A, B = np.vstack([A, a]), np.vstack([B, b])
        x = x_next


def _segment_pair_distances(P0, P1, Q0, Q1) -> np.ndarray:
    """Distance between segments P0-P1 and Q0-Q1, row by row."""
    d1, d2, r = P1 - P0, Q1 - Q0, P0 - Q0
    a = np.einsum("ij,ij->i", d1, d1)
    b = np.einsum("ij,ij->i", d1, d2)
    c = np.einsum("ij,ij->i", d1, r)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 0, np.clip((b * f - c * e) / denom, 0.0, 1.0), 0.0)
        s = np.where(e > 0, s, np.where(a > 0, np.clip(-c / a, 0.0, 1.0), 0.0))
        t = np.where(e > 0, (b * s + f) / e, 0.0)
        s = np.where(t < 0, np.where(a > 0, np.clip(-c / a, 0.0, 1.0), 0.0), s)
        s = np.where(t > 1, np.where(a > 0, np.clip((b - c) / a, 0.0, 1.0), 0.0), s)
    t = np.clip(t, 0.0, 1.0)
    return np.linalg.norm(r + s[:, None] * d1 - t[:, None] * d2, axis=1)


def _check_separation(curve: PolyCurve, segments: Sequence[Segment], gap: float, gen: int) -> None:
    """Raise unless distinct pieces are >= gap apart, measured leg to leg."""
    if len(segments) < 2:
        return
    A, B, owner = [], [], []
    for i, seg in enumerate(segments):
        a, b = _piece_legs(curve, seg.s_start, seg.s_end)
        A.append(a)
        B.append(b)
        owner.append(np.full(len(a), i))
    A, B, owner = np.vstack(A), np.vstack(B), np.concatenate(owner)
    # legs closer than gap have midpoints within gap + one longest leg
    reach = gap + float(np.linalg.norm(B - A, axis=1).max())
    pairs = cKDTree((A + B) / 2).query_pairs(reach, output_type="ndarray")
    if not pairs.size:
        return
    pairs = pairs[owner[pairs[:, 0]] != owner[pairs[:, 1]]]
    for lo in range(0, len(pairs), _PAIR_BLOCK):
        i, j = pairs[lo : lo + _PAIR_BLOCK].T
        dist = _segment_pair_distances(A[i], B[i], A[j], B[j])
        if np.any(dist < gap * (1 - 1e-9)):
            raise RuntimeError(f"generation {gen} has segments closer than {gap:.4g}")


def build_hierarchy(
    C: PolyCurve, gamma: float, m: int, k_max: int, L0: float | None = None
) -> FractalHierarchy:
    """Nested generations of pieces of C with at least m well-separated children each.

    Generation 0 is the piece from the start to the first exit from the ball of
    radius L0 (default: the span of C).

    Raises:
        ValueError: invalid parameters, or the smallest scale is below the cutoff
        RuntimeError: a hierarchy invariant failed (a bug, not a data condition)
    """
    _check_hierarchy_params(gamma, m, k_max)
    if L0 is None:
        L0 = span(C)
    if not L0 > 0:
        raise ValueError("a curve with zero span has no hierarchy")
    if C.step > 0 and L0 * gamma**-k_max < C.step:
        raise ValueError(
            f"curve too short for {k_max} scales: L0 gamma^-k_max = {L0 * gamma**-k_max:.4g} "
            f"is below the cutoff {C.step:.4g}"
        )
    end = C.first_exit(C.vertices[0], L0 * (1 - 1e-12), 0.0)
    if end is None:
        raise ValueError(f"curve never reaches distance {L0:g} from its start")

    eps = gamma / m - 1
    raw = [[(0.0, end, -1)]]
    for k in range(k_max):
        L = L0 * gamma**-k
        nxt = []
        for parent, (s0, s1, _) in enumerate(raw[-1]):
            kids = _children(C, s0, s1, L, gamma, m)
            if len(kids) < m:
                raise RuntimeError(
                    f"segment {parent} of generation {k} has {len(kids)} < {m} children"
                )
            nxt.extend((a, b, parent) for a, b in kids)
        raw.append(nxt)
        logger.debug("Generation %d: %d segments", k + 1, len(nxt))

    counts = [
        np.bincount([p for _, _, p in gen], minlength=len(prev))
        for prev, gen in zip(raw, raw[1:])
    ]
    counts.append(np.zeros(len(raw[-1]), dtype=int))
    generations = tuple(
        tuple(Segment(s0, s1, parent, int(n)) for (s0, s1, parent), n in zip(gen, cnt, strict=True))
        for gen, cnt in zip(raw, counts, strict=True)
    )
    for k, gen in enumerate(generations[1:], start=1):
        _check_separation(C, gen, eps * L0 * gamma**-k, k)
    return FractalHierarchy(C, float(gamma), int(m), float(L0), generations)


def dump_hierarchy(H: FractalHierarchy) -> str:
    """Indented text: one segment per line as ``generation parent s_start s_end n_children``."""
    lines = [f"{HIERARCHY_HEADER} gamma={H.gamma:.17g} m={H.m} L0={H.L0:.17g} k_max={H.k_max}"]
    for g, gen in enumerate(H.generations):
        for seg in gen:
            lines.append(
                f"{'  ' * g}{g} {seg.parent} {seg.s_start:.17g} {seg.s_end:.17g} {seg.n_children}"
            )
    return "\n".join(lines) + "\n"


def parse_hierarchy(text: str, curve: PolyCurve) -> FractalHierarchy:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(HIERARCHY_HEADER):
        raise ValueError("missing hierarchy header")
    fields = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
    k_max = int(fields["k_max"])
    gens: list[list[Segment]] = [[] for _ in range(k_max + 1)]
    for line in lines[1:]:
        g, parent, s0, s1, n = line.split()
        gens[int(g)].append(Segment(float(s0), float(s1), int(parent), int(n)))
    return FractalHierarchy(
        curve,
        float(fields["gamma"]),
        int(fields["m"]),
        float(fields["L0"]),
        tuple(map(tuple, gens)),
    )


def effective_k0(H: FractalHierarchy) -> int:
    """Smallest k0 with prod of ancestor child counts >= beta^(k - k0) for every segment."""
    log_beta = math.log(H.beta)
    worst = 0
    logprod = np.zeros(1)
    for k in range(1, H.k_max + 1):
        parents = np.array([seg.parent for seg in H.generations[k]], dtype=int)
        counts = np.array([seg.n_children for seg in H.generations[k - 1]], dtype=float)
        logprod = logprod[parents] + np.log(counts[parents])
        need = k - logprod.min() / log_beta
        worst = max(worst, math.ceil(need - 1e-9))
    return worst


# Measures and energies


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Probability weights on finitely many points."""

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        support = np.atleast_2d(np.asarray(self.support, dtype=float))
        weights = np.asarray(self.weights, dtype=float).ravel()
        if len(support) != len(weights) or not len(weights):
            raise ValueError("support and weights must be nonempty with equal length")
        if np.any(weights < 0):
            raise ValueError("weights must be >= 0")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {weights.sum():.17g}")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)


def lexmin_point(curve: PolyCurve, s0: float, s1: float) -> np.ndarray:
    """Lexicographically earliest point of the piece [s0, s1]; always one of its vertices."""
    piece = curve.subcurve(s0, s1).vertices
    return piece[np.lexsort(piece.T[::-1])[0]]


def hierarchy_measure(H: FractalHierarchy) -> DiscreteMeasure:
    """Mass split evenly among children; one atom at each leaf's lexicographic minimum."""
    mass = np.ones(1)
    for k in range(1, H.k_max + 1):
        parents = np.array([seg.parent for seg in H.generations[k]], dtype=int)
        counts = np.array([seg.n_children for seg in H.generations[k - 1]], dtype=float)
        mass = mass[parents] / counts[parents]
    support = np.array([lexmin_point(H.curve, seg.s_start, seg.s_end) for seg in H.leaves])
    return DiscreteMeasure(support, mass)


def _kernel(x: np.ndarray, y: np.ndarray, s: float, ell: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.maximum(cdist(x, y), ell) ** -s


def energy(mu: DiscreteMeasure, s: float, ell: float) -> float:
    """sum_ij w_i w_j max(|x_i - x_j|, ell)^-s, diagonal included; inf on overflow."""
    if not s > 0:
        raise ValueError(f"s must be > 0, got {s}")
    if ell < 0:
        raise ValueError(f"ell must be >= 0, got {ell}")
    x, w = mu.support, mu.weights
    total = 0.0
    for lo in range(0, len(x), _ENERGY_BLOCK):
        block = _kernel(x[lo : lo + _ENERGY_BLOCK], x, s, ell)
        total += float(w[lo : lo + _ENERGY_BLOCK] @ block @ w)
    if not math.isfinite(total):
        logger.warning("Energy overflow at s=%g, l=%g (coincident support points?)", s, ell)
        return math.inf
    return total


@dataclass(frozen=True, eq=False)
class CapacityResult:
    """1/energy of the minimizing (or given) measure; ``gap`` is the final duality gap."""

    s: float
    ell: float
    energy: float
    capacity: float
    method: str
    gap: float = 0.0
    converged: bool = True
    weights: np.ndarray | None = None

    def to_record(self) -> str:
        return (
            f"cap s={self.s:.17g} l={self.ell:.17g} E={self.energy:.17g} "
            f"C={self.capacity:.17g} method={self.method} gap={self.gap:.17g}"
        )

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "ell": self.ell,
            "energy": self.energy,
            "capacity": self.capacity,
            "method": self.method,
            "gap": self.gap,
            "converged": self.converged,
        }


def _frank_wolfe(K: np.ndarray, w: np.ndarray, tol: float, max_iter: int):
    """Minimize w'Kw on the simplex by conditional gradients with away steps."""
    Kw = K @ w
    f = float(w @ Kw)
    gap = math.inf
    for it in range(max_iter):
        if it and it % 256 == 0:
            Kw = K @ w
        grad = 2 * Kw
        i = int(np.argmin(grad))
        gap = float(grad @ w - grad[i])
        if gap <= tol * f:
            return w, f, gap, True
        active = np.flatnonzero(w > 0)
        j = int(active[np.argmax(grad[active])])
        away_gap = float(grad[j] - grad @ w)
        if gap >= away_gap or w[j] >= 1.0:
            Kd = K[:, i] - Kw
            direction = -w.copy()
            direction[i] += 1.0
            step_max = 1.0
        else:
            Kd = Kw - K[:, j]
            direction = w.copy()
            direction[j] -= 1.0
            step_max = w[j] / (1.0 - w[j])
        curv = float(direction @ Kd)
        slope = float(w @ Kd)
        step = step_max if curv <= 0 else min(step_max, max(0.0, -slope / curv))
        if step <= 0:
            return w, f, gap, gap <= tol * f
        w = np.maximum(w + step * direction, 0.0)
        w /= w.sum()
        Kw = Kw + step * Kd
        f = float(w @ Kw)
    return w, f, gap, False


def capacity_qp(
    points,
    s: float,
    ell: float,
    tol: float = 1e-6,
    max_iter: int = QP_MAX_ITER,
    init=None,
    restarts: int = 4,
    seed: int = 0,
) -> CapacityResult:
    """Minimal energy over probability weights on the points; capacity = 1/energy.

    Stops when the linearization gap is <= tol * energy. An indefinite kernel
    (possible for ell > 0) is minimized from several starts and the best kept.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if not len(pts):
        raise ValueError("capacity needs at least one point")
    if not tol > 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    if not s > 0 or ell < 0:
        raise ValueError(f"need s > 0 and ell >= 0, got s={s}, ell={ell}")
    n = len(pts)
    K = _kernel(pts, pts, s, ell)
    if not np.all(np.isfinite(K)):
        logger.warning("Kernel overflow: coincident points with ell = 0")
        return CapacityResult(s, ell, math.inf, 0.0, "qp", math.inf, False)

    w0 = np.full(n, 1.0 / n) if init is None else np.asarray(init, dtype=float) / np.sum(init)
    starts = [w0]
    if 1 < n <= _EIG_LIMIT and np.linalg.eigvalsh(K)[0] < -1e-10 * K.max():
        logger.warning("Kernel is indefinite; minimizing from %d starts", restarts + 1)
        rng = np.random.default_rng(seed)
        starts += list(rng.dirichlet(np.ones(n), size=restarts))

    best = None
    for start in starts:
        w, f, gap, ok = _frank_wolfe(K, start, tol, max_iter)
        if best is None or f < best[1]:
            best = (w, f, gap, ok)
    w, f, gap, ok = best
    if not ok:
        logger.warning("Capacity solver stopped at gap %.3g after %d iterations", gap, max_iter)
    return CapacityResult(s, ell, f, 1.0 / f, "qp", gap, ok, w)


def capacity_brute(points, s: float, ell: float, step: float = 1e-3) -> CapacityResult:
    """Minimal energy over the simplex grid of the given step (small point sets only)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    N = round(1 / step)
    if math.comb(N + n - 1, n - 1) > 5_000_000:
        raise ValueError(f"simplex grid of {n} points at step {step} is too large")
    K = _kernel(pts, pts, s, ell)
    if n == 1:
        E = float(K[0, 0])
        return CapacityResult(s, ell, E, 1.0 / E, "brute", 0.0, True, np.ones(1))
    axes = np.meshgrid(*[np.arange(N + 1)] * (n - 1), indexing="ij")
    free = np.stack([a.ravel() for a in axes], axis=1)
    free = free[free.sum(axis=1) <= N]
    W = np.column_stack([free, N - free.sum(axis=1)]) / N
    energies = np.einsum("ij,jk,ik->i", W, K, W)
    best = int(np.argmin(energies))
    E = float(energies[best])
    return CapacityResult(s, ell, E, 1.0 / E, "brute", 0.0, True, W[best])


def measure_capacity(mu: DiscreteMeasure, s: float, ell: float) -> CapacityResult:
    """1/energy of a given measure, a lower bound on the capacity of its support."""
    E = energy(mu, s, ell)
    return CapacityResult(s, ell, E, 0.0 if math.isinf(E) else 1.0 / E, "hierarchy-bound")


# Bounds


def capacity_lower_bound(H: FractalHierarchy, s: float, k0: int) -> float:
    """(eps L0)^s / (gamma^(s k0) + beta / (1 - gamma^s / beta)), valid for gamma^s < beta."""
    ratio = H.gamma**s / H.beta
    if ratio >= 1:
        raise ValueError(f"need gamma^s < beta: {H.gamma:g}^{s:g} >= {H.beta:.6g}")
    return (H.eps * H.L0) ** s / (H.gamma ** (s * k0) + H.beta / (1 - ratio))


def dimension_exponent(gamma: float, m: int) -> float:
    """s solving gamma^s = sqrt(m (m + 1))."""
    return math.log(math.sqrt(m * (m + 1))) / math.log(gamma)


def limit_dimension_bound(m: int) -> float:
    """1 + ln(1 + 1/m) / (2 ln m), the bound when runs are sparse for every gamma > m."""
    return 1 + math.log(1 + 1 / m) / (2 * math.log(m))


def dimension_bound_scan(
    C: PolyCurve,
    m: int,
    gamma_list: Sequence[float] | None = None,
    k0: int = 0,
    k_max: int | None = None,
    width_factor: float = 10.0,
) -> dict:
    """Sparsity of the straight runs of C for each gamma and the resulting dimension bound.

    gamma defaults to eight values in (m, 2m]. The bound is the largest
    log(beta)/log(gamma) over sparse gammas, at least 1. A finite scan never
    certifies sparsity for every gamma > m, so ``limit_bound`` (the m-only
    limit value) is reported separately when every scanned gamma is sparse and
    is not folded into ``bound``.
    """
    if m < 2:
        raise ValueError(f"m must be >= 2, got {m}")
    if gamma_list is None:
        gamma_list = np.linspace(m, 2 * m, 9)[1:].tolist()
    L0 = span(C) or 1.0
    cutoff = C.step if C.step > 0 else min(C.max_leg, L0 / 256)
    config = CurveConfig.from_curves([C], cutoff)
    rows = []
    for gamma in gamma_list:
        if not m < gamma <= 2 * m:
            raise ValueError(f"gamma must lie in (m, 2m], got {gamma}")
        depth = k_max
        if depth is None:
            depth = max(0, math.floor(math.log(L0 / cutoff) / math.log(gamma)))
        ladder = ScaleLadder(L0, gamma, depth, k0)
        report = sparsity_check(config, ladder, width_factor=width_factor)
        rows.append(
            {
                "gamma": gamma,
                "sparse": report["sparse"],
                "s": dimension_exponent(gamma, m),
                "longest_chain": report["longest_chain"],
                "n_runs": report["n_runs"],
            }
        )
    sparse_s = [r["s"] for r in rows if r["sparse"]]
    all_sparse = bool(rows) and len(sparse_s) == len(rows)
    return {
        "m": m,
        "k0": k0,
        "rows": rows,
        "all_sparse": all_sparse,
        "bound": max([1.0, *sparse_s]),
        "limit_bound": limit_dimension_bound(m) if all_sparse else None,
    }


def dimension_lower_bound(
    C: PolyCurve, m: int, gamma_list: Sequence[float] | None = None, k0: int = 0, **kwargs
) -> float:
    """Lower bound on the Hausdorff dimension of C from sparsity of its straight runs."""
    return dimension_bound_scan(C, m, gamma_list, k0, **kwargs)["bound"]

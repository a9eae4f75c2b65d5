"""Fréchet distance between polygonal curves and the Hausdorff metric on configurations."""

from __future__ import annotations

import csv
import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from curvatlas.curves import CurveConfig, PolyCurve, diameter

logger = logging.getLogger("curvatlas")

# Slack on free-space interval comparisons, in leg-parameter units
_EPS = 1e-12

_EMPTY_LO, _EMPTY_HI = 2.0, -1.0


@dataclass(frozen=True)
class MetricParams:
    """Bisection tolerance; None means 1e-9 times the larger curve diameter."""

    bisection_tol: float | None = None

    def __post_init__(self):
        if self.bisection_tol is not None and not self.bisection_tol > 0:
            raise ValueError(f"bisection_tol must be > 0, got {self.bisection_tol}")


def _pass_intervals(a: np.ndarray, b: np.ndarray, points: np.ndarray, eps: float):
    """Parameters t in [0, 1] with |a + t (b - a) - q| <= eps, per leg a-b and point q.

    Arrays broadcast row-wise; empty intervals come back as (2, -1).
    """
    d = b - a
    len2 = np.einsum("ij,ij->i", d, d)
    rel = points - a
    proj = np.einsum("ij,ij->i", rel, d)
    disc = proj**2 - len2 * (np.einsum("ij,ij->i", rel, rel) - eps**2)
    root = np.sqrt(np.maximum(disc, 0.0))
    lo = np.maximum((proj - root) / len2, 0.0)
    hi = np.minimum((proj + root) / len2, 1.0)
    empty = (disc < 0) | (lo > hi + _EPS)
    return np.where(empty, _EMPTY_LO, lo), np.where(empty, _EMPTY_HI, hi)


def frechet_decision(P: np.ndarray, Q: np.ndarray, eps: float) -> bool:
    """Whether the Fréchet distance between the chains P and Q is <= eps.

    Free-space reachability cell by cell; each column of cells (one leg of Q)
    is resolved for all legs of P at once.
    """
    if np.linalg.norm(P[0] - Q[0]) > eps or np.linalg.norm(P[-1] - Q[-1]) > eps:
        return False
    n, m = len(P) - 1, len(Q) - 1
    pa, pb = P[:-1], P[1:]

    # bottom boundary y = 0: reachable along it from the start corner
    br_lo, br_hi = _pass_intervals(pa, pb, np.repeat(Q[:1], n, axis=0), eps)
    ok = (br_lo <= _EPS) & (br_hi >= 1 - _EPS)
    reach = np.concatenate([[True], np.cumprod(ok[:-1]).astype(bool)])
    reach &= br_lo <= _EPS
    br_lo = np.where(reach, br_lo, _EMPTY_LO)
    br_hi = np.where(reach, br_hi, _EMPTY_HI)

    left_open = True
    lr_lo = lr_hi = None
    for j in range(m):
        qa, qb = Q[j], Q[j + 1]
        # free intervals on the vertical edges x = i for this leg of Q
        lf_lo, lf_hi = _pass_intervals(
            np.repeat(qa[None], n + 1, axis=0), np.repeat(qb[None], n + 1, axis=0), P, eps
        )
        # left boundary x = 0
        start_ok = left_open and lf_lo[0] <= _EPS
        left_open = start_ok and lf_hi[0] >= 1 - _EPS

        reset = np.concatenate([[True], br_lo <= br_hi])
        group = np.cumsum(reset) - 1
        lo_eff = lf_lo.copy()
        if not start_ok:
            lo_eff[0] = _EMPTY_LO
        cm = np.maximum.accumulate(lo_eff + 2 * group) - 2 * group
        fail = (lf_lo > lf_hi) | (cm > lf_hi + _EPS)
        fail[0] = not start_ok
        cf = np.cumsum(fail)
        starts = np.flatnonzero(reset)
        base = (cf - fail)[starts][group]
        valid = cf - base == 0
        lr_lo = np.where(valid, cm, _EMPTY_LO)
        lr_hi = np.where(valid, lf_hi, _EMPTY_HI)

        # top edges of this column: bottom edges of the next
        bf_lo, bf_hi = _pass_intervals(pa, pb, np.repeat(Q[j + 1 : j + 2], n, axis=0), eps)
        from_left = lr_lo[:-1] <= lr_hi[:-1]
        from_below = br_lo <= br_hi
        nb_lo = np.where(from_left, bf_lo, np.maximum(bf_lo, br_lo))
        nb_ok = (bf_lo <= bf_hi) & (from_left | (from_below & (nb_lo <= bf_hi + _EPS)))
        br_lo = np.where(nb_ok, nb_lo, _EMPTY_LO)
        br_hi = np.where(nb_ok, bf_hi, _EMPTY_HI)

    return bool(lr_hi[-1] >= 1 - _EPS or br_hi[-1] >= 1 - _EPS)


def _ordered(C1: PolyCurve, C2: PolyCurve) -> tuple[PolyCurve, PolyCurve]:
    """A canonical order of the pair, so the computation is symmetric bit for bit."""
    if C1.vertices.tobytes() <= C2.vertices.tobytes():
        return C1, C2
    return C2, C1


def curve_distance(C1: PolyCurve, C2: PolyCurve, tol: float | None = None) -> float:
    """Continuous Fréchet distance, bisected to within tol (an upper estimate)."""
    A, B = _ordered(C1, C2)
    P, Q = A.vertices, B.vertices
    if A.dim != B.dim:
        raise ValueError(f"curves of dimension {A.dim} and {B.dim}")
    if len(P) == 1 or len(Q) == 1:
        point, chain = (P[0], Q) if len(P) == 1 else (Q[0], P)
        return float(np.linalg.norm(chain - point, axis=1).max())

    diam_p, diam_q = diameter(A), diameter(B)
    if tol is None:
        tol = 1e-9 * max(diam_p, diam_q, 1e-300)
    lo = max(float(np.linalg.norm(P[0] - Q[0])), float(np.linalg.norm(P[-1] - Q[-1])))
    if frechet_decision(P, Q, lo):
        return lo
    hi = lo + diam_p + diam_q
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if frechet_decision(P, Q, mid):
            hi = mid
        else:
            lo = mid
    return hi


def cross_distances(
    first: Sequence[PolyCurve],
    second: Sequence[PolyCurve],
    params: MetricParams | None = None,
    threads: int = 1,
) -> np.ndarray:
    """Matrix of curve distances between two curve lists."""
    tol = (params or MetricParams()).bisection_tol
    pairs = [(i, j) for i in range(len(first)) for j in range(len(second))]

    def one(pair):
        i, j = pair
        return curve_distance(first[i], second[j], tol)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(one, pairs))
    else:
        values = [one(p) for p in pairs]
    return np.array(values, dtype=float).reshape(len(first), len(second))


def distance_matrix(
    curves: Sequence[PolyCurve], params: MetricParams | None = None, threads: int = 1
) -> np.ndarray:
    """Symmetric matrix of pairwise curve distances with a zero diagonal."""
    n = len(curves)
    out = np.zeros((n, n))
    upper = np.triu_indices(n, k=1)
    tol = (params or MetricParams()).bisection_tol

    def one(pair):
        return curve_distance(curves[pair[0]], curves[pair[1]], tol)

    pairs = list(zip(*upper, strict=True))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(one, pairs))
    else:
        values = [one(p) for p in pairs]
    out[upper] = values
    return out + out.T


def write_distance_csv(path: str | Path, matrix: np.ndarray) -> Path:
    """CSV with a header row of curve indices and one row per curve."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["curve", *range(matrix.shape[1])])
        for i, row in enumerate(matrix):
            writer.writerow([i, *(f"{x:.17g}" for x in row)])
    return path


def config_distance(
    F1: CurveConfig, F2: CurveConfig, params: MetricParams | None = None, threads: int = 1
) -> float:
    """Hausdorff distance between configurations under the curve metric.

    An empty configuration against a nonempty one is at the region diameter.
    """
    if not len(F1) and not len(F2):
        return 0.0
    if not len(F1) or not len(F2):
        region = F1.region if len(F1) else F2.region
        logger.warning("Empty configuration; distance set to the region diameter")
        return region.diameter
    D = cross_distances(F1.curves, F2.curves, params, threads)
    return float(max(D.min(axis=1).max(), D.min(axis=0).max()))


def directed_distances(
    F1: CurveConfig, F2: CurveConfig, params: MetricParams | None = None
) -> tuple[float, float]:
    """(sup over F1 of the distance to F2, sup over F2 of the distance to F1)."""
    D = cross_distances(F1.curves, F2.curves, params)
    return float(D.min(axis=1).max()), float(D.min(axis=0).max())


def coupling_gap(series: Sequence[CurveConfig], params: MetricParams | None = None) -> dict:
    """Distances between consecutive configurations of a series at decreasing cutoffs."""
    if len(series) < 2:
        raise ValueError(f"need at least 2 configurations, got {len(series)}")
    gaps = [config_distance(a, b, params) for a, b in zip(series, series[1:])]
    decreasing = all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))
    return {
        "cutoffs": [F.cutoff for F in series],
        "gaps": gaps,
        "monotone_decreasing": decreasing,
    }


def resample(curve: PolyCurve, n: int) -> np.ndarray:
    """n points at equal arc-length spacing."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    return curve.points_at(np.linspace(0.0, curve.length, n))


def discrete_frechet(P: np.ndarray, Q: np.ndarray) -> float:
    """Discrete Fréchet distance of two point sequences (coupled walk)."""
    d = np.linalg.norm(P[:, None, :] - Q[None, :, :], axis=2)
    ca = np.empty_like(d)
    ca[0] = np.maximum.accumulate(d[0])
    for i in range(1, len(P)):
        ca[i, 0] = max(d[i, 0], ca[i - 1, 0])
        for j in range(1, len(Q)):
            ca[i, j] = max(d[i, j], min(ca[i - 1, j], ca[i - 1, j - 1], ca[i, j - 1]))
    return float(ca[-1, -1])

"""Tortuosity and dimension exponents, and the time-of-travel Hölder reparametrization."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy import stats

from curvatlas.curves import (
    CurveConfig,
    PolyCurve,
    _greedy_cuts,
    box_count,
    diameter,
    packing_count,
    partition_count,
)

logger = logging.getLogger("curvatlas")

# Upper cap on the number of dyadic scales in the reparametrization
MAX_SCALES = 20


class FitError(ValueError):
    """A log-log regression cannot be formed (too few scales, zero counts)."""


@dataclass(frozen=True)
class ExponentFit:
    """Least-squares slope of a log-log relation.

    For counts against scale the exponent is the slope of log(count) against
    log(1/l). ``window`` holds the smallest and largest abscissa actually used.
    """

    kind: str
    exponent: float
    intercept: float
    window: tuple[float, float]
    residual_rms: float
    n_scales: int
    stderr: float = 0.0

    def __post_init__(self):
        if not self.window[0] < self.window[1]:
            raise ValueError(f"fit window needs lmin < lmax, got {self.window}")
        if self.n_scales < 3:
            raise ValueError(f"fit needs >= 3 scales, got {self.n_scales}")

    def to_record(self) -> str:
        return (
            f"fit kind={self.kind} exponent={self.exponent:.17g} "
            f"residual={self.residual_rms:.17g} lmin={self.window[0]:.17g} "
            f"lmax={self.window[1]:.17g} n={self.n_scales}"
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "exponent": self.exponent,
            "intercept": self.intercept,
            "lmin": self.window[0],
            "lmax": self.window[1],
            "residual_rms": self.residual_rms,
            "n_scales": self.n_scales,
            "stderr": self.stderr,
        }


def parse_fit_record(line: str) -> ExponentFit:
    """Parse a ``fit kind=... exponent=...`` record (intercept is not carried)."""
    tokens = line.split()
    if not tokens or tokens[0] != "fit":
        raise ValueError(f"not a fit record: {line!r}")
    fields = dict(tok.split("=", 1) for tok in tokens[1:])
    return ExponentFit(
        kind=fields["kind"],
        exponent=float(fields["exponent"]),
        intercept=float("nan"),
        window=(float(fields["lmin"]), float(fields["lmax"])),
        residual_rms=float(fields["residual"]),
        n_scales=int(fields["n"]),
    )


def linear_fit(x, y, kind: str, window: tuple[float, float]) -> ExponentFit:
    """Ordinary least squares of y on x, packaged as an ExponentFit."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.unique(x).size < 3:
        raise FitError(f"{kind}: need >= 3 distinct scales, got {np.unique(x).size}")
    result = stats.linregress(x, y)
    residual = y - (result.intercept + result.slope * x)
    return ExponentFit(
        kind=kind,
        exponent=float(result.slope),
        intercept=float(result.intercept),
        window=window,
        residual_rms=float(np.sqrt(np.mean(residual**2))),
        n_scales=int(x.size),
        stderr=float(result.stderr),
    )


def fit_exponent(
    samples: Sequence[tuple[float, float]],
    window: tuple[float, float] | None = None,
    kind: str = "tau",
) -> ExponentFit:
    """Slope of log(count) against log(1/l) over the samples inside the window.

    Args:
        samples: (scale, count) pairs
        window: inclusive (lmin, lmax); all samples when omitted
        kind: label carried into the fit record

    Raises:
        FitError: fewer than three scales in the window, or a zero count
    """
    data = np.asarray(samples, dtype=float).reshape(-1, 2)
    if window is not None:
        lo, hi = window
        slack = 1e-12
        data = data[(data[:, 0] >= lo * (1 - slack)) & (data[:, 0] <= hi * (1 + slack))]
    if len(data) < 3:
        raise FitError(f"{kind}: need >= 3 scales in the window, got {len(data)}")
    if np.any(data[:, 1] <= 0):
        raise FitError(f"{kind}: zero counts cannot be fitted on a log scale")
    scales = data[:, 0]
    return linear_fit(
        np.log(1.0 / scales), np.log(data[:, 1]), kind, (float(scales.min()), float(scales.max()))
    )


def dyadic_scales(lmin: float, lmax: float) -> list[float]:
    """Dyadic scales 2^-n inside [lmin, lmax], coarsest first."""
    if not 0 < lmin <= lmax:
        raise ValueError(f"need 0 < lmin <= lmax, got ({lmin}, {lmax})")
    n_lo = math.ceil(-math.log2(lmax) - 1e-9)
    n_hi = math.floor(-math.log2(lmin) + 1e-9)
    return [2.0**-n for n in range(n_lo, n_hi + 1)]


def scale_grid(lmin: float, lmax: float, per_octave: int = 4) -> np.ndarray:
    """Geometric grid 2^(-j/per_octave) covering [lmin, lmax], coarsest first."""
    j_lo = math.floor(-math.log2(lmax) * per_octave)
    j_hi = math.ceil(-math.log2(lmin) * per_octave)
    return 2.0 ** (-np.arange(j_lo, j_hi + 1) / per_octave)


def default_window(curve: PolyCurve) -> tuple[float, float]:
    """[4 delta, diameter/4]; raises FitError when the curve is too small for it."""
    step = curve.effective_step
    diam = diameter(curve)
    if step <= 0 or diam < 4 * step:
        raise FitError(f"diameter {diam:.4g} is below 4 x step {step:.4g}")
    return 4 * step, diam / 4


def count_samples(
    curve: PolyCurve, scales: Sequence[float], counter: Callable[[PolyCurve, float], int]
) -> list[tuple[float, int]]:
    return [(ell, counter(curve, ell)) for ell in scales]


# Hölder reparametrization


@dataclass(frozen=True, eq=False)
class Parametrization:
    """Piecewise-linear time of travel t(s), strictly increasing from (0, 0) to (L, 1).

    ``n_max`` is the finest scale index 2^-n_max the map was built from, if known.
    """

    arc: np.ndarray
    time: np.ndarray
    n_max: int | None = None

    def __post_init__(self):
        arc = np.asarray(self.arc, dtype=float)
        time = np.asarray(self.time, dtype=float)
        if arc.shape != time.shape or arc.size < 2:
            raise ValueError("parametrization needs >= 2 matching breakpoints")
        if arc[0] != 0 or time[0] != 0 or time[-1] != 1:
            raise ValueError("parametrization must run from (0, 0) to (L, 1)")
        if np.any(np.diff(arc) <= 0) or np.any(np.diff(time) <= 0):
            raise ValueError("parametrization breakpoints must be strictly increasing")
        object.__setattr__(self, "arc", arc)
        object.__setattr__(self, "time", time)

    @property
    def breakpoints(self) -> list[tuple[float, float]]:
        return list(zip(self.arc.tolist(), self.time.tolist(), strict=True))

    def time_at(self, s) -> np.ndarray:
        return np.interp(s, self.arc, self.time)

    def arc_at(self, t) -> np.ndarray:
        return np.interp(t, self.time, self.arc)


def default_n_max(curve: PolyCurve) -> int:
    step = curve.effective_step
    if step <= 0:
        return 1
    return int(min(MAX_SCALES, max(1, math.ceil(math.log2(1.0 / step)) + 2)))


def reparametrize_holder(curve: PolyCurve, n_max: int | None = None) -> Parametrization:
    """Time-of-travel parametrization t(s) = sum_n w_n M_n(s) / M_n(L) / sum_n w_n.

    M_n(s) is the prefix partition count at scale 2^-n, made continuous by
    interpolating linearly through (0, 0), (c_j, j) at the greedy cuts c_j and
    (L, M_n); w_n = (n + 1)^-2.
    """
    if n_max is None:
        n_max = default_n_max(curve)
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    total = curve.length
    if total <= 0:
        raise ValueError("a single-point curve has no time-of-travel parametrization")

    knots = []
    for n in range(n_max + 1):
        cuts = _greedy_cuts(curve, 2.0**-n)
        cuts = cuts[(cuts > 0) & (cuts < total)]
        xs = np.concatenate([[0.0], cuts, [total]])
        ys = np.concatenate([np.arange(len(cuts) + 1, dtype=float), [len(cuts) + 1.0]])
        knots.append((n, xs, ys / ys[-1]))

    arc = np.unique(np.concatenate([xs for _, xs, _ in knots]))
    weights = np.array([(n + 1.0) ** -2 for n, _, _ in knots])
    time = sum(w * np.interp(arc, xs, ys) for w, (_, xs, ys) in zip(weights, knots, strict=True))
    time = time / weights.sum()
    time[0], time[-1] = 0.0, 1.0
    logger.debug("Time of travel over %d scales, %d breakpoints", n_max + 1, arc.size)
    return Parametrization(arc, time, n_max)


def modulus_bound(delta_q: np.ndarray, psi_half: np.ndarray) -> np.ndarray:
    """psi(dq/2) / (2 log2(4/dq)^2), the lower bound on the time gap."""
    return psi_half / (2.0 * np.log2(4.0 / delta_q) ** 2)


def verify_modulus(
    curve: PolyCurve,
    param: Parametrization,
    n_pairs: int = 10_000,
    seed: int = 0,
    per_octave: int = 4,
) -> dict:
    """Check |t1 - t2| >= psi(dq/2) / (2 log2(4/dq)^2) on random parameter pairs.

    psi(l) = 1/partition_count(curve, l) is evaluated at the nearest grid scale
    above dq/2, which only enlarges the right-hand side. Pairs with equal
    parameters or coincident points are skipped, as are pairs with dq/2 below
    2^-(n_max + 2), n_max being the finest scale the parametrization was built on.

    Returns:
        Dict with violations, worst_margin, checked and skipped counts
    """
    rng = np.random.default_rng(seed)
    t = rng.random((2, n_pairs))
    points = [curve.points_at(param.arc_at(row)) for row in t]
    dt = np.abs(t[0] - t[1])
    dq = np.linalg.norm(points[0] - points[1], axis=1)

    n_max = param.n_max if param.n_max is not None else default_n_max(curve)
    floor = 2.0 ** -(n_max + 2)
    usable = (dt > 0) & (dq / 2 >= floor) & (dq < 4)
    if not np.any(usable):
        return {"violations": 0, "worst_margin": math.inf, "checked": 0, "skipped": n_pairs}

    half = dq[usable] / 2
    grid = scale_grid(float(half.min()), float(half.max()), per_octave)
    counts = np.array([partition_count(curve, ell) for ell in grid])
    # grid is decreasing; pick the smallest grid scale >= dq/2
    idx = np.searchsorted(-grid, -half, side="right") - 1
    idx = np.clip(idx, 0, len(grid) - 1)
    margin = dt[usable] - modulus_bound(dq[usable], 1.0 / counts[idx])
    violations = int(np.count_nonzero(margin < 0))
    if violations:
        logger.warning("Modulus check: %d violations out of %d pairs", violations, margin.size)
    return {
        "violations": violations,
        "worst_margin": float(margin.min()),
        "checked": int(margin.size),
        "skipped": int(n_pairs - margin.size),
    }


# Dimension summaries


def dimension_summary(
    curve: PolyCurve,
    eps: float,
    k: int,
    window: tuple[float, float] | None = None,
) -> dict:
    """Fitted tortuosity and box exponents with their ordering checks.

    Returns tau_hat (from partition counts), dimB_hat (from grid counts),
    alpha_lower = 1/tau_hat, the flags ``ordered`` (dimB <= tau) and
    ``tempered`` (tau <= (1+eps) dimB), both with a slack of twice the larger
    fit residual, the k-fold crossing scale of power eps, and whether
    M(C, 2l) <= exit-point count held at every scale.
    """
    from curvatlas.crossings import min_kfold_scale

    if window is None:
        window = default_window(curve)
    scales = dyadic_scales(*window)
    m_samples = count_samples(curve, scales, partition_count)
    n_samples = count_samples(curve, scales, box_count)
    tau = fit_exponent(m_samples, window, kind="tau")
    dim_b = fit_exponent(n_samples, window, kind="dimB")
    slack = 2 * max(tau.residual_rms, dim_b.residual_rms)
    exit_ok = all(partition_count(curve, 2 * ell) <= packing_count(curve, ell) for ell in scales)
    cutoff = curve.effective_step
    kfold = min_kfold_scale(CurveConfig.from_curves([curve], cutoff), eps, k)
    return {
        "tau": tau,
        "dimB": dim_b,
        "tau_hat": tau.exponent,
        "dimB_hat": dim_b.exponent,
        "alpha_lower": 1.0 / tau.exponent if tau.exponent > 0 else math.inf,
        "ordered": dim_b.exponent <= tau.exponent + slack,
        "tempered": tau.exponent <= (1 + eps) * dim_b.exponent + slack,
        "eps": eps,
        "k": k,
        "kfold_scale": kfold,
        "exit_bound_holds": exit_ok,
        "samples": [
            {"ell": ell, "partition": m, "box": nb}
            for (ell, m), (_, nb) in zip(m_samples, n_samples, strict=True)
        ],
    }


def tempered_crossing_report(
    curve: PolyCurve, eps: float, k_values: Sequence[int], window=None
) -> dict:
    """k-fold crossing scales of power eps for several k, with the exponent ordering."""
    from curvatlas.crossings import min_kfold_scale

    if window is None:
        window = default_window(curve)
    scales = dyadic_scales(*window)
    tau = fit_exponent(count_samples(curve, scales, partition_count), window, "tau")
    dim_b = fit_exponent(count_samples(curve, scales, box_count), window, "dimB")
    config = CurveConfig.from_curves([curve], curve.effective_step)
    rows = [{"k": k, "kfold_scale": min_kfold_scale(config, eps, k)} for k in k_values]
    return {
        "eps": eps,
        "tau_hat": tau.exponent,
        "dimB_hat": dim_b.exponent,
        "within_tempered_bound": tau.exponent
        <= (1 + eps) * dim_b.exponent + 2 * max(tau.residual_rms, dim_b.residual_rms),
        "crossings": rows,
    }

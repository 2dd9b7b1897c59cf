"""
Generalized Hurst exponent estimation
=====================================

Multifractal detrended fluctuation analysis (MFDFA) over a grid of moment
orders q. For each scale s the profile (cumulative sum of the mean-centered
series) is split into non-overlapping windows, each window is detrended with
a least-squares polynomial, and the q-th order average of the window
fluctuations is formed. The slope of log F_q(s) versus log s is h(q).

h(2) estimates the self-similarity index H; the spread
delta_h = h(q_min) - h(q_max) quantifies heterogeneity (0 for monofractal
input, large for bursty multifractal input).

Windows are taken from both ends of the profile so the tail of a series
whose length is not a multiple of s still contributes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInputError,
    EstimationError,
    InsufficientDataError,
    ParameterError,
)

# Windows whose RMS fluctuation falls below this are excluded from q<0
# averages (they would otherwise blow up the negative moments).
FLUCTUATION_FLOOR = 1e-12

DEFAULT_Q = (-5.0, -4.0, -3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 4.0, 5.0)


@dataclass(frozen=True)
class QGrid:
    """Ordered grid of nonzero moment orders; must contain q=2."""

    values: tuple[float, ...] = DEFAULT_Q

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) < 1:
            raise ParameterError("q grid is empty")
        if any(v == 0.0 for v in vals):
            raise ParameterError("q grid must not contain 0")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ParameterError("q grid must be strictly increasing")
        if 2.0 not in vals:
            raise ParameterError("q grid must contain q=2 (the H estimate)")


@dataclass(frozen=True)
class ScaleGrid:
    """Window sizes (in slots) used for the scaling fit."""

    scales: tuple[int, ...]
    detrend_order: int = 1

    def __post_init__(self):
        scales = tuple(int(s) for s in self.scales)
        object.__setattr__(self, "scales", scales)
        if self.detrend_order < 0:
            raise ParameterError("detrend_order must be nonnegative")
        if len(scales) < 2:
            raise ParameterError("need at least two scales for a fit")
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise ParameterError("scales must be strictly increasing")
        if scales[0] < self.detrend_order + 2:
            raise ParameterError(
                f"smallest scale {scales[0]} too small for order-"
                f"{self.detrend_order} detrending"
            )

    @classmethod
    def default(cls, n: int, n_scales: int = 16, min_scale: int = 16) -> "ScaleGrid":
        """Log-spaced integer scales between ``min_scale`` and ``n // 16``.

        The upper bound keeps >= 16 windows per scale; higher-moment
        averages over fewer windows bias the scaling fit.
        """
        max_scale = n // 16
        if max_scale <= min_scale:
            raise ParameterError(f"series of length {n} too short for scaling fit")
        raw = np.logspace(np.log10(min_scale), np.log10(max_scale), num=n_scales)
        scales = np.unique(np.floor(raw).astype(int))
        return cls(scales=tuple(int(s) for s in scales))


@dataclass(frozen=True)
class HurstCurve:
    """Estimated h(q) with fit diagnostics.

    ``points`` maps q -> h(q); ``prefactors`` holds the log-log intercepts,
    ``fit_quality`` the coefficient of determination of each scaling fit,
    and ``dropped_windows`` the number of near-zero windows excluded from
    q<0 averages.
    """

    points: dict[float, float]
    delta_h: float
    prefactors: dict[float, float] = field(default_factory=dict)
    fit_quality: dict[float, float] = field(default_factory=dict)
    dropped_windows: dict[float, int] = field(default_factory=dict)

    @property
    def h2(self) -> float:
        """Self-similarity estimate H = h(2)."""
        return self.points[2.0]

    def as_rows(self) -> list[tuple[float, float, float, float]]:
        """(q, h_q, intercept, r2) rows in q order."""
        return [
            (
                q,
                self.points[q],
                self.prefactors.get(q, float("nan")),
                self.fit_quality.get(q, float("nan")),
            )
            for q in sorted(self.points)
        ]


def delta_h(curve: HurstCurve) -> float:
    """Range of the generalized Hurst exponent: h(q_min) - h(q_max).

    Negative values (increasing h(q)) are permitted but flagged with a
    warning; physical traffic yields nonincreasing h(q).
    """
    if len(curve.points) < 2:
        raise InsufficientDataError("delta_h needs at least two h(q) points")
    qs = sorted(curve.points)
    value = curve.points[qs[0]] - curve.points[qs[-1]]
    if value < 0:
        warnings.warn("h(q) increases with q; delta_h is negative", stacklevel=2)
    return value


def _window_fluctuations(profile: np.ndarray, scale: int, order: int) -> np.ndarray:
    """Mean squared residual of each detrended window at one scale.

    Windows are carved from both the start and the end of the profile
    (2 * floor(N/s) windows total).
    """
    n = len(profile)
    k = n // scale
    fwd = profile[: k * scale].reshape(k, scale)
    bwd = profile[n - k * scale :].reshape(k, scale)
    windows = np.vstack([fwd, bwd])

    t = np.arange(scale, dtype=float)
    design = np.vander(t, order + 1, increasing=True)
    coeffs, *_ = np.linalg.lstsq(design, windows.T, rcond=None)
    residuals = windows - (design @ coeffs).T
    return np.mean(residuals**2, axis=1)


def estimate_hurst_curve(
    series,
    q: QGrid | None = None,
    scales: ScaleGrid | None = None,
) -> HurstCurve:
    """Estimate h(q) over ``q.values`` from the scaling of detrended fluctuations.

    Raises DegenerateInputError for constant input and EstimationError when
    the series is too short for the requested scales.
    """
    x = np.asarray(series, dtype=float).ravel()
    if x.size == 0:
        raise DegenerateInputError("empty series")
    if np.ptp(x) == 0.0:
        raise DegenerateInputError("constant series has no scaling behaviour")
    q = q or QGrid()
    scales = scales or ScaleGrid.default(len(x))
    if len(x) < 4 * scales.scales[-1]:
        raise EstimationError(
            f"series length {len(x)} < 4 x max scale {scales.scales[-1]}"
        )

    profile = np.cumsum(x - x.mean())
    qs = np.asarray(q.values)

    log_s: list[float] = []
    log_fq: list[np.ndarray] = []  # one row per scale, one column per q
    dropped = dict.fromkeys(q.values, 0)

    for s in scales.scales:
        f2 = _window_fluctuations(profile, s, scales.detrend_order)
        f2 = f2[np.isfinite(f2)]
        if f2.size == 0:
            continue
        positive = f2[np.sqrt(f2) >= FLUCTUATION_FLOOR]
        n_dropped = f2.size - positive.size

        row = np.empty(len(qs))
        for j, qv in enumerate(qs):
            src = f2 if qv > 0 else positive
            if qv < 0:
                dropped[qv] += n_dropped
            if src.size == 0:
                row[j] = np.nan
                continue
            row[j] = np.mean(src ** (qv / 2.0)) ** (1.0 / qv)
        log_s.append(np.log2(s))
        log_fq.append(np.log2(row))

    if len(log_s) < 2:
        raise EstimationError("fewer than two usable scales")

    ls = np.asarray(log_s)
    lf = np.vstack(log_fq)  # shape (n_scales, n_q)

    points: dict[float, float] = {}
    prefactors: dict[float, float] = {}
    fit_quality: dict[float, float] = {}
    for j, qv in enumerate(qs):
        col = lf[:, j]
        ok = np.isfinite(col)
        if ok.sum() < 2:
            raise EstimationError(f"no usable scaling points for q={qv}")
        slope, intercept = np.polyfit(ls[ok], col[ok], 1)
        fitted = slope * ls[ok] + intercept
        ss_res = float(np.sum((col[ok] - fitted) ** 2))
        ss_tot = float(np.sum((col[ok] - col[ok].mean()) ** 2))
        points[float(qv)] = float(slope)
        prefactors[float(qv)] = float(intercept)
        fit_quality[float(qv)] = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot

    q_sorted = sorted(points)
    dh = points[q_sorted[0]] - points[q_sorted[-1]]
    return HurstCurve(
        points=points,
        delta_h=dh,
        prefactors=prefactors,
        fit_quality=fit_quality,
        dropped_windows=dropped,
    )


def binomial_cascade_oracle(p: float, q_values) -> dict[float, float]:
    """Analytic h(q) of a deterministic binomial cascade with weight p.

    tau(q) = -log2(p^q + (1-p)^q), h(q) = (tau(q) + 1) / q.
    """
    if not 0.0 < p < 1.0:
        raise ParameterError("cascade weight p must lie in (0, 1)")
    out = {}
    for qv in q_values:
        if qv == 0:
            continue
        tau = -np.log2(p**qv + (1.0 - p) ** qv)
        out[float(qv)] = float((tau + 1.0) / qv)
    return out

"""
Piecewise-linear link g in Y ~ g(b^t (X - x_bar)).

Knots sit at the index means of equal-count bins, values at the matching response
means. Between knots the link interpolates; beyond the end knots it continues the
boundary segments.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from design import Dataset, slice_design
from errors import DegenerateIndex, GrsirError, InvalidConfig, OutOfRange, ShapeMismatch
from estimator import FitResult, fit_dataset, fit_grsir
from priors import PriorSpec, materialize

MAX_DEFAULT_BINS = 25


@dataclass(frozen=True)
class PiecewiseLinearLink:
    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if knots.size < 2 or knots.size != values.size:
            raise InvalidConfig(f"link needs >= 2 knots with one value each (got {knots.size}/{values.size})")
        if not (np.all(np.isfinite(knots)) and np.all(np.isfinite(values))):
            raise InvalidConfig("link knots and values must be finite")
        if np.any(np.diff(knots) <= 0):
            raise InvalidConfig("link knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return self.knots.size

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k, v = self.knots, self.values
        out = np.interp(t, k, v)
        lo, hi = t < k[0], t > k[-1]
        if np.any(lo):
            out[lo] = v[0] + (t[lo] - k[0]) * (v[1] - v[0]) / (k[1] - k[0])
        if np.any(hi):
            out[hi] = v[-1] + (t[hi] - k[-1]) * (v[-1] - v[-2]) / (k[-1] - k[-2])
        return out


def default_num_bins(n: int) -> int:
    return max(2, min(MAX_DEFAULT_BINS, n // 10))


def fit_link(index: Sequence[float], y: Sequence[float], num_bins: Optional[int] = None) -> PiecewiseLinearLink:
    t = np.asarray(index, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if t.size != y.size:
        raise ShapeMismatch(f"index has {t.size} values but y has {y.size}")
    n = t.size
    m = default_num_bins(n) if num_bins is None else int(num_bins)
    if m < 2:
        raise InvalidConfig(f"--link-bins must be >= 2 (got {m})")
    if n < 2 * m:
        raise OutOfRange(f"link with {m} bins needs n >= {2 * m} observations (got n={n})")
    if np.ptp(t) < 1e-12 * abs(float(t.mean())) + 1e-300:
        raise DegenerateIndex("projected index is constant; no link can be fitted")
    if np.unique(t).size < m:
        raise DegenerateIndex(f"projected index has fewer than {m} distinct values")

    order = np.argsort(t, kind="mergesort")
    bins = np.array_split(order, m)
    knots = np.array([t[b].mean() for b in bins])
    values = np.array([y[b].mean() for b in bins])
    sizes = np.array([b.size for b in bins], dtype=float)

    # bins of identical index values share a knot
    uniq, inverse = np.unique(knots, return_inverse=True)
    if uniq.size < knots.size:
        values = np.bincount(inverse, weights=values * sizes) / np.bincount(inverse, weights=sizes)
        knots = uniq
    if knots.size < 2:
        raise DegenerateIndex("projected index collapses onto a single knot")
    return PiecewiseLinearLink(knots, values)


def project_index(b_hat: np.ndarray, x_bar: np.ndarray, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    b_hat = np.asarray(b_hat, dtype=float).ravel()
    if X.shape[1] != b_hat.size or np.asarray(x_bar).size != b_hat.size:
        raise ShapeMismatch(f"model expects p={b_hat.size} predictors, data has {X.shape[1]}")
    return (X - x_bar) @ b_hat


def predict(link: PiecewiseLinearLink, b_hat: np.ndarray, x_bar: np.ndarray, X_new: np.ndarray) -> np.ndarray:
    return link(project_index(b_hat, x_bar, X_new))


def fit_forward(data: Dataset, prior: Optional[PriorSpec], num_slices: int,
                num_bins: Optional[int] = None, K: int = 1):
    """Direction fit followed by a link on the leading component's training index."""
    assignment, moments, fit = fit_dataset(data, prior, num_slices, K)
    link = fit_link(project_index(fit.direction, moments.x_bar, data.X), data.y, num_bins)
    return assignment, moments, fit, link


def training_mse(data: Dataset, fit: FitResult, x_bar: np.ndarray, link: PiecewiseLinearLink) -> float:
    resid = data.y - predict(link, fit.direction, x_bar, data.X)
    return float(np.mean(resid ** 2))


def select_tau_in_sample(data: Dataset, num_slices: int, prior_name: str, tau_grid: Sequence[float],
                         d: Optional[int] = None,
                         num_bins: Optional[int] = None) -> Tuple[float, List[Tuple[float, float]]]:
    """
    Pick tau by the training-set MSE of the fit -> link -> predict pipeline.

    The data that choose tau also score it, so the returned MSE is optimistic.
    """
    taus = [float(t) for t in tau_grid]
    if not taus:
        raise InvalidConfig("--select-tau needs a non-empty tau grid")
    print("[fit] warning: tau chosen by in-sample MSE; the reported error is optimistic",
          file=sys.stderr, flush=True)

    _, moments = slice_design(data, num_slices)
    table: List[Tuple[float, float]] = []
    last_error: Optional[GrsirError] = None
    for tau in taus:
        try:
            spec = PriorSpec(prior_name, tau, d)
            fit = fit_grsir(moments, materialize(spec, moments.sigma_hat))
            link = fit_link(project_index(fit.direction, moments.x_bar, data.X), data.y, num_bins)
            table.append((tau, training_mse(data, fit, moments.x_bar, link)))
        except GrsirError as e:
            last_error = e
            table.append((tau, math.nan))

    scored = [(mse, i) for i, (_, mse) in enumerate(table) if not math.isnan(mse)]
    if not scored:
        raise last_error
    best = min(scored)[1]
    return table[best][0], table

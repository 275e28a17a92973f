"""
Slices, basis functions and empirical moments for inverse regression.

Everything downstream (priors, estimator, simulation) consumes a DesignMoments
built here. All moments use the 1/n divisor so that the closed-form identities
(M^t W^-1 M == Gamma for the indicator basis) hold to rounding error.

Slice labels are 0-based: 0..h, and the last slice (label h) carries no basis
function.
"""
from __future__ import annotations

import csv
import pathlib
from dataclasses import dataclass
from functools import cached_property
from typing import List, Sequence, Tuple

import numpy as np
from scipy import linalg

from errors import (
    DegenerateResponse,
    DegenerateSlice,
    InputError,
    InvalidConfig,
    ShapeMismatch,
    SingularBasisCovariance,
)

DEFAULT_NUM_SLICES = 10
RANK_TOL = 1e-12


# ----------------------------- Domain types ------------------------------ #

@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or y.ndim != 1:
            raise ShapeMismatch(f"X must be n×p and y length n (got X{X.shape}, y{y.shape})")
        if X.shape[0] != y.shape[0]:
            raise ShapeMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]} values")
        if X.shape[0] < 2 or X.shape[1] < 1:
            raise InputError(f"need n >= 2 observations and p >= 1 predictors (got n={X.shape[0]}, p={X.shape[1]})")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InputError("dataset contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class SliceAssignment:
    labels: np.ndarray
    counts: np.ndarray
    proportions: np.ndarray
    boundaries: np.ndarray

    def __post_init__(self):
        if np.any(self.counts < 1):
            raise DegenerateResponse(f"empty slice in counts {self.counts.tolist()}")
        if abs(float(self.proportions.sum()) - 1.0) > 1e-12:
            raise InputError("slice proportions do not sum to one")

    @property
    def num_slices(self) -> int:
        return int(self.counts.size)

    @property
    def h(self) -> int:
        """Number of basis functions (slices minus the dropped last one)."""
        return self.num_slices - 1


@dataclass(frozen=True)
class DesignMoments:
    w: np.ndarray
    m: np.ndarray
    sigma_hat: np.ndarray
    gamma_hat: np.ndarray
    x_bar: np.ndarray
    s_bar: np.ndarray
    slice_means: np.ndarray
    proportions: np.ndarray
    n: int

    @property
    def p(self) -> int:
        return self.sigma_hat.shape[0]

    @property
    def h(self) -> int:
        return self.w.shape[0]

    @cached_property
    def w_inverse(self) -> np.ndarray:
        evals = linalg.eigvalsh(self.w)
        if evals[-1] <= 0 or evals[0] <= RANK_TOL * evals[-1]:
            raise SingularBasisCovariance(
                f"basis covariance W is singular (eigenvalues in [{evals[0]:.3g}, {evals[-1]:.3g}])")
        w_inv = linalg.inv(self.w)
        return 0.5 * (w_inv + w_inv.T)

    @cached_property
    def inverse_regression_matrix(self) -> np.ndarray:
        """M^t W^-1 M; equals gamma_hat for the indicator basis."""
        a = self.m.T @ self.w_inverse @ self.m
        return 0.5 * (a + a.T)


# ------------------------------- Slicing --------------------------------- #

def make_slices(y: Sequence[float], num_slices: int = DEFAULT_NUM_SLICES) -> SliceAssignment:
    """Equal-count slices of the response; tie groups are never split."""
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if num_slices < 2:
        raise InvalidConfig(f"--slices must be >= 2 (got {num_slices})")
    order = np.argsort(y, kind="mergesort")
    ys = y[order]
    _, first = np.unique(ys, return_index=True)
    n_groups = first.size
    if n_groups < num_slices:
        raise DegenerateResponse(
            f"response has {n_groups} distinct value(s), fewer than the {num_slices} requested slices")
    # group_end[g] = sorted position right after tie group g
    group_end = np.append(first[1:], n)

    sizes = np.full(num_slices, n // num_slices)
    sizes[: n % num_slices] += 1
    targets = np.cumsum(sizes)[:-1]

    cuts: List[int] = []
    prev = 0
    for k, target in enumerate(targets):
        lo = prev + 1
        hi = n_groups - (num_slices - 1 - k)
        cand = np.arange(lo, hi + 1)
        best = int(cand[np.argmin(np.abs(group_end[cand - 1] - target))])
        cuts.append(best)
        prev = best
    cut_pos = group_end[np.asarray(cuts) - 1]

    labels = np.empty(n, dtype=int)
    labels[order] = np.searchsorted(cut_pos, np.arange(n), side="right")
    counts = np.bincount(labels, minlength=num_slices)
    boundaries = 0.5 * (ys[cut_pos - 1] + ys[cut_pos])
    return SliceAssignment(labels=labels, counts=counts, proportions=counts / n, boundaries=boundaries)


def indicator_matrix(labels: Sequence[int], h: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    s = np.zeros((labels.size, h))
    keep = labels < h
    s[np.nonzero(keep)[0], labels[keep]] = 1.0
    return s


def indicator_basis(assignment: SliceAssignment) -> np.ndarray:
    """n×h evaluation of s_j(y) = 1{y in slice j}, the last slice dropped."""
    return indicator_matrix(assignment.labels, assignment.h)


# ------------------------------- Moments --------------------------------- #

def compute_moments(data: Dataset, basis: np.ndarray, assignment: SliceAssignment) -> DesignMoments:
    basis = np.asarray(basis, dtype=float)
    if basis.ndim != 2 or basis.shape[0] != data.n:
        raise ShapeMismatch(f"basis must be {data.n}×h (got {basis.shape})")
    if assignment.labels.size != data.n:
        raise ShapeMismatch("slice assignment does not match the dataset size")
    n = data.n
    x_bar = data.X.mean(axis=0)
    s_bar = basis.mean(axis=0)
    xc = data.X - x_bar
    sc = basis - s_bar

    w = sc.T @ sc / n
    m = sc.T @ xc / n
    sigma = xc.T @ xc / n

    sums = np.zeros((assignment.num_slices, data.p))
    np.add.at(sums, assignment.labels, data.X)
    slice_means = sums / assignment.counts[:, None]
    dev = slice_means - x_bar
    gamma = (dev * assignment.proportions[:, None]).T @ dev

    return DesignMoments(
        w=0.5 * (w + w.T),
        m=m,
        sigma_hat=0.5 * (sigma + sigma.T),
        gamma_hat=0.5 * (gamma + gamma.T),
        x_bar=x_bar,
        s_bar=s_bar,
        slice_means=slice_means,
        proportions=assignment.proportions.copy(),
        n=n,
    )


def w_inverse_indicator(proportions: Sequence[float]) -> np.ndarray:
    """Closed-form W^-1 for the indicator basis: diag(1/f_1..1/f_h) + U/f_{h+1}."""
    f = np.asarray(proportions, dtype=float)
    if f.size < 2:
        raise InputError("need at least two slice proportions")
    if np.any(f <= 0):
        raise DegenerateSlice(f"zero slice proportion in {f.tolist()}")
    h = f.size - 1
    return np.diag(1.0 / f[:h]) + np.ones((h, h)) / f[h]


def slice_design(data: Dataset, num_slices: int = DEFAULT_NUM_SLICES) -> Tuple[SliceAssignment, DesignMoments]:
    """Slices + indicator basis + moments in one call."""
    assignment = make_slices(data.y, num_slices)
    return assignment, compute_moments(data, indicator_basis(assignment), assignment)


# ------------------------------- CSV I/O --------------------------------- #

def read_dataset_csv(path: pathlib.Path, response: str) -> Tuple[Dataset, List[str]]:
    """Header row, comma separated, UTF-8; all non-response columns are predictors."""
    path = pathlib.Path(path)
    if not path.exists():
        raise InputError(f"--data: file not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if len(rows) < 2:
        raise InputError(f"--data: {path} has no data rows")
    header = [h.strip() for h in rows[0]]
    if response not in header:
        raise InputError(f"--response: column '{response}' not in {path} (columns: {', '.join(header)})")
    r = header.index(response)
    names = [h for i, h in enumerate(header) if i != r]
    try:
        table = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=float)
    except ValueError as e:
        raise InputError(f"--data: non-numeric value in {path}: {e}") from None
    if table.ndim != 2 or table.shape[1] != len(header):
        raise InputError(f"--data: ragged rows in {path}")
    X = np.delete(table, r, axis=1)
    return Dataset(X=X, y=table[:, r]), names


def read_predictors_csv(path: pathlib.Path, drop: Sequence[str] = ()) -> Tuple[np.ndarray, List[str]]:
    path = pathlib.Path(path)
    if not path.exists():
        raise InputError(f"--data: file not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if len(rows) < 2:
        raise InputError(f"--data: {path} has no data rows")
    header = [h.strip() for h in rows[0]]
    keep = [i for i, h in enumerate(header) if h not in set(drop)]
    try:
        X = np.array([[float(row[i]) for i in keep] for row in rows[1:] if row], dtype=float)
    except (ValueError, IndexError) as e:
        raise InputError(f"--data: bad row in {path}: {e}") from None
    if not np.all(np.isfinite(X)):
        raise InputError(f"--data: non-finite predictor values in {path}")
    return X, [header[i] for i in keep]


def write_dataset_csv(path: pathlib.Path, data: Dataset, names: Sequence[str], response: str = "y") -> None:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(list(names) + [response])
        for xi, yi in zip(data.X, data.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])

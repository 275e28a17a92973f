"""
Synthetic single-index scenarios and the three comparison experiments.

Population:  Sigma = Q diag(p^theta, ..., 1^theta) Q^t,  beta = Q (1,1,1,1,1,0,...)^t / sqrt(5)
Model 1:     Y = sin(pi/(2 sigma) beta^t X) + eps
Model 2:     Y = |beta^t X / sigma - 1/2| + eps,      sigma^2 = beta^t Sigma beta

Random streams are Philox generators keyed by (seed, purpose, replicate), so a
replicate draws the same numbers whether it runs first, last, or on another thread.

Experiments
  1  tau sweep at fixed theta and d
  2  theta sweep, each method at its grid-best tau (argmax MSC)
  3  d sweep for the PCA methods at grid-best tau; non-PCA methods once at d=p
"""
from __future__ import annotations

import csv
import json
import math
import pathlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from design import Dataset, slice_design
from errors import DimensionTooSmall, GrsirError, InvalidConfig, SingularCovariance
from estimator import check_signal, fit_dataset, solve_pencil, solve_projected
from priors import PRIORS, RANK_TOL, PriorSpec, default_cutoff, materialize_spectrum, spectral_decompose

PURPOSE_Q, PURPOSE_X, PURPOSE_NOISE = 0, 1, 2
METHODS: Tuple[str, ...] = tuple(PRIORS)
PCA_METHODS = tuple(m for m in METHODS if PRIORS[m][2])
DEFAULT_THETA_GRID = tuple(round(0.1 * i, 10) for i in range(31))
CRITERION = "argmax MSC over tau grid"
MSC_TIE_TOL = 1e-9


def rng_stream(seed: int, purpose: int, replicate: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(purpose), int(replicate)))
    return np.random.Generator(np.random.Philox(ss))


# ------------------------------ Population ------------------------------- #

def random_orthogonal(p: int, seed: int) -> np.ndarray:
    """QR of a Gaussian matrix, signs fixed so R has a positive diagonal."""
    if p < 1:
        raise InvalidConfig(f"p must be >= 1 (got {p})")
    a = rng_stream(seed, PURPOSE_Q).standard_normal((p, p))
    q, r = np.linalg.qr(a)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def make_population(p: int, theta: float, Q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if p < 5:
        raise DimensionTooSmall(f"the true index uses five directions; need p >= 5 (got p={p})")
    if Q.shape != (p, p):
        raise InvalidConfig(f"Q must be {p}×{p} (got {Q.shape})")
    delta = np.arange(p, 0, -1, dtype=float) ** theta
    sigma = (Q * delta) @ Q.T
    beta = Q[:, :5].sum(axis=1) / math.sqrt(5.0)
    return 0.5 * (sigma + sigma.T), beta


def sample_predictors(n: int, sigma: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    low = linalg.cholesky(sigma, lower=True)
    return rng.standard_normal((n, sigma.shape[0])) @ low.T


def model_response(model_id: int, index: np.ndarray, scale: float, noise_sd: float,
                   rng: Optional[np.random.Generator]) -> np.ndarray:
    if model_id == 1:
        y = np.sin(math.pi * index / (2.0 * scale))
    elif model_id == 2:
        y = np.abs(index / scale - 0.5)
    else:
        raise InvalidConfig(f"--model must be 1 or 2 (got {model_id})")
    if noise_sd > 0:
        y = y + noise_sd * rng.standard_normal(index.size)
    return y


def index_scale(sigma: np.ndarray, beta: np.ndarray) -> float:
    return math.sqrt(float(beta @ sigma @ beta))


def sample_model(model_id: int, n: int, sigma: np.ndarray, beta: np.ndarray,
                 noise_sd: float, seed: int, replicate: int = 0) -> Dataset:
    if noise_sd < 0:
        raise InvalidConfig(f"--noise-sd must be >= 0 (got {noise_sd})")
    X = sample_predictors(n, sigma, rng_stream(seed, PURPOSE_X, replicate))
    y = model_response(model_id, X @ beta, index_scale(sigma, beta), noise_sd,
                       rng_stream(seed, PURPOSE_NOISE, replicate))
    return Dataset(X=X, y=y)


# ------------------------------- Criteria -------------------------------- #

def _unit_rows(directions) -> np.ndarray:
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def msc(directions, beta) -> float:
    """Mean squared cosine between each estimated direction and beta."""
    beta = np.asarray(beta, dtype=float)
    cos = _unit_rows(directions) @ (beta / np.linalg.norm(beta))
    return float(np.mean(cos ** 2))


def vsc(directions) -> float:
    """Mean squared cosine over ordered pairs of distinct replicates."""
    d = _unit_rows(directions)
    N = d.shape[0]
    if N < 2:
        raise InvalidConfig(f"VSC needs at least 2 replicates (got {N})")
    g2 = (d @ d.T) ** 2
    return float((g2.sum() - np.trace(g2)) / (N * (N - 1)))


def tau_grid(log_min: float = -5.0, log_max: float = 25.0, count: int = 150, base: str = "e") -> np.ndarray:
    if count < 1:
        raise InvalidConfig(f"tau grid count must be >= 1 (got {count})")
    if log_max < log_min:
        raise InvalidConfig(f"tau grid: log_max {log_max} < log_min {log_min}")
    exps = np.linspace(log_min, log_max, count)
    if str(base) == "e":
        return np.exp(exps)
    if str(base) == "10":
        return 10.0 ** exps
    raise InvalidConfig(f"tau grid base must be 'e' or '10' (got {base})")


# ----------------------------- Domain types ------------------------------ #

@dataclass(frozen=True)
class ScenarioConfig:
    n: int = 100
    p: int = 50
    theta: float = 2.0
    model_id: int = 1
    noise_sd: float = 0.03
    N: int = 100
    seed: int = 0
    num_slices: int = 10
    tau_log_min: float = -5.0
    tau_log_max: float = 25.0
    tau_count: int = 150
    tau_base: str = "e"
    d: Optional[int] = None
    d_grid: Tuple[int, ...] = ()
    theta_grid: Tuple[float, ...] = DEFAULT_THETA_GRID
    methods: Tuple[str, ...] = METHODS
    independent_replicates: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.model_id not in (1, 2):
            raise InvalidConfig(f"--model must be 1 or 2 (got {self.model_id})")
        if self.p < 5:
            raise DimensionTooSmall(f"--p must be >= 5 (got {self.p})")
        if self.num_slices < 2:
            raise InvalidConfig(f"--slices must be >= 2 (got {self.num_slices})")
        if self.n < self.num_slices or self.n < 2:
            raise InvalidConfig(f"--n={self.n} is too small for {self.num_slices} slices")
        if self.N < 2:
            raise InvalidConfig(f"--replicates must be >= 2 for VSC (got {self.N})")
        if self.theta < 0 or any(t < 0 for t in self.theta_grid):
            raise InvalidConfig("theta must be >= 0")
        if self.noise_sd < 0:
            raise InvalidConfig(f"--noise-sd must be >= 0 (got {self.noise_sd})")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise InvalidConfig(f"--methods: unknown or empty {bad} (choose from {', '.join(METHODS)})")
        for d in ((self.d,) if self.d is not None else ()) + tuple(self.d_grid):
            if not 1 <= d <= self.p:
                raise InvalidConfig(f"cut-off d={d} outside 1..p={self.p}")
        if self.threads < 1:
            raise InvalidConfig(f"threads must be >= 1 (got {self.threads})")
        tau_grid(self.tau_log_min, self.tau_log_max, self.tau_count, self.tau_base)

    @property
    def tau_values(self) -> np.ndarray:
        return tau_grid(self.tau_log_min, self.tau_log_max, self.tau_count, self.tau_base)

    @property
    def cutoff(self) -> int:
        return self.d if self.d is not None else default_cutoff(self.p)

    @property
    def d_values(self) -> Tuple[int, ...]:
        return tuple(self.d_grid) if self.d_grid else tuple(range(1, self.p + 1))


@dataclass(frozen=True)
class CriterionRow:
    experiment: int
    method: str
    tau: Optional[float]
    theta: float
    d: int
    h: int
    N: int
    msc: Optional[float]
    vsc: Optional[float]
    mean_lambda: Optional[float]
    failures: int
    seed: int
    runtime: float = field(default=0.0, compare=False)


CSV_COLUMNS = ("experiment", "method", "tau", "theta", "d", "h", "N",
               "msc", "vsc", "mean_lambda", "failures", "seed")


def _cell_text(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


@dataclass(frozen=True)
class CriterionReport:
    experiment: int
    rows: Tuple[CriterionRow, ...]
    metadata: Dict = field(default_factory=dict, compare=False)

    def best_rows(self) -> Dict[str, CriterionRow]:
        """Highest-MSC row per method (first one on ties)."""
        best: Dict[str, CriterionRow] = {}
        for row in self.rows:
            if row.msc is None:
                continue
            cur = best.get(row.method)
            if cur is None or row.msc > cur.msc:
                best[row.method] = row
        return best

    def write_csv(self, path: pathlib.Path) -> None:
        path = pathlib.Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for row in self.rows:
                w.writerow([_cell_text(getattr(row, c)) for c in CSV_COLUMNS])

    def write_sidecar(self, path: pathlib.Path, extra: Optional[Dict] = None) -> pathlib.Path:
        meta = dict(self.metadata)
        meta["runtime_seconds"] = {f"{r.method}|{r.tau}|{r.theta}|{r.d}": r.runtime for r in self.rows}
        meta.update(extra or {})
        side = pathlib.Path(str(path) + ".meta.json")
        side.write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
        return side


# ------------------------------- Engine ---------------------------------- #

@dataclass(frozen=True)
class _Cell:
    method: str
    tau: float
    d: int


@dataclass
class _CellResult:
    directions: List[np.ndarray] = field(default_factory=list)
    lambdas: List[float] = field(default_factory=list)
    failures: int = 0
    runtime: float = 0.0


def _replicate_data(cfg: ScenarioConfig, sigma: np.ndarray, beta: np.ndarray, r: int,
                    shared_X: Optional[np.ndarray]) -> Dataset:
    if shared_X is None:
        X = sample_predictors(cfg.n, sigma, rng_stream(cfg.seed, PURPOSE_X, r))
    else:
        X = shared_X
    y = model_response(cfg.model_id, X @ beta, index_scale(sigma, beta), cfg.noise_sd,
                       rng_stream(cfg.seed, PURPOSE_NOISE, r))
    return Dataset(X=X, y=y)


def _solve_replicate(data: Dataset, num_slices: int, cells: Sequence[_Cell]):
    """Leading direction and eigenvalue for every cell on one replicate."""
    out = []
    try:
        _, moments = slice_design(data, num_slices)
        evals, evecs = spectral_decompose(moments.sigma_hat)
        gamma_t = evecs.T @ moments.inverse_regression_matrix @ evecs
        gamma_t = 0.5 * (gamma_t + gamma_t.T)
        sigma_t = np.diag(evals)
    except GrsirError as e:
        return [(None, math.nan, e, 0.0) for _ in cells]

    plain: Optional[tuple] = None
    for cell in cells:
        t0 = time.perf_counter()
        try:
            if cell.method == "sir":
                if plain is None:
                    if evals[-1] <= RANK_TOL * evals[0]:
                        raise SingularCovariance("predictor covariance is singular")
                    check_signal(gamma_t, sigma_t)
                    lam, a = solve_pencil(gamma_t, sigma_t)
                    plain = (lam[0], evecs @ a[:, 0])
                lam0, b = plain
            else:
                mat = materialize_spectrum(PriorSpec(cell.method, cell.tau, cell.d), evals, evecs)
                k = mat.d
                check_signal(gamma_t[:k, :k], sigma_t[:k, :k])
                lam, a = solve_projected(gamma_t[:k, :k], sigma_t[:k, :k], mat.omega_inv_on_subspace)
                lam0, b = lam[0], mat.basis @ a[:, 0]
            out.append((b / np.linalg.norm(b), float(lam0), None, time.perf_counter() - t0))
        except GrsirError as e:
            out.append((None, math.nan, e, time.perf_counter() - t0))
    return out


def _evaluate_cells(cfg: ScenarioConfig, theta: float, Q: np.ndarray,
                    cells: Sequence[_Cell]) -> Tuple[List[_CellResult], np.ndarray]:
    sigma, beta = make_population(cfg.p, theta, Q)
    shared_X = None
    if not cfg.independent_replicates:
        shared_X = sample_predictors(cfg.n, sigma, rng_stream(cfg.seed, PURPOSE_X, 0))

    def task(r: int):
        return _solve_replicate(_replicate_data(cfg, sigma, beta, r, shared_X), cfg.num_slices, cells)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            per_rep = list(pool.map(task, range(cfg.N)))
    else:
        per_rep = [task(r) for r in range(cfg.N)]

    results = [_CellResult() for _ in cells]
    for rep in per_rep:
        for res, (b, lam, err, dt) in zip(results, rep):
            res.runtime += dt
            if err is None:
                res.directions.append(b)
                res.lambdas.append(lam)
            else:
                res.failures += 1
    return results, beta


def _row(exp_id: int, cfg: ScenarioConfig, cell: _Cell, theta: float, res: _CellResult,
         beta: np.ndarray) -> CriterionRow:
    ok = len(res.directions)
    m = msc(res.directions, beta) if ok else None
    v = vsc(res.directions) if ok >= 2 else None
    return CriterionRow(
        experiment=exp_id, method=cell.method, tau=float(cell.tau), theta=float(theta), d=cell.d,
        h=cfg.num_slices - 1, N=cfg.N, msc=m, vsc=v,
        mean_lambda=float(np.mean(res.lambdas)) if ok else None,
        failures=res.failures, seed=cfg.seed, runtime=res.runtime,
    )


def _sweep_cells(methods: Iterable[str], taus: Sequence[float], d_for) -> List[_Cell]:
    return [_Cell(m, float(t), d_for(m)) for m in methods for t in taus]


def _best_per_group(rows: Sequence[CriterionRow], key) -> List[CriterionRow]:
    """
    Grid-best tau per group; a group with no MSC keeps its first row with tau blanked.

    MSC values within MSC_TIE_TOL of the maximum tie, and the smallest tau wins.
    """
    groups: Dict = {}
    for row in rows:
        groups.setdefault(key(row), []).append(row)
    best = []
    for group in groups.values():
        scored = [r for r in group if r.msc is not None]
        if scored:
            top = max(r.msc for r in scored)
            best.append(min((r for r in scored if r.msc >= top - MSC_TIE_TOL), key=lambda r: r.tau))
        else:
            best.append(replace(group[0], tau=None))
    return best


def _sort_rows(rows: Iterable[CriterionRow]) -> Tuple[CriterionRow, ...]:
    order = {m: i for i, m in enumerate(METHODS)}
    return tuple(sorted(rows, key=lambda r: (order[r.method], r.theta, r.d,
                                             -1.0 if r.tau is None else r.tau)))


def run_experiment(exp_id: int, cfg: ScenarioConfig) -> CriterionReport:
    if exp_id not in (1, 2, 3):
        raise InvalidConfig(f"experiment id must be 1, 2 or 3 (got {exp_id})")
    started = time.perf_counter()
    Q = random_orthogonal(cfg.p, cfg.seed)
    taus = cfg.tau_values
    p = cfg.p

    def d_for(method: str) -> int:
        return cfg.cutoff if PRIORS[method][2] else p

    rows: List[CriterionRow] = []
    if exp_id == 1:
        cells = _sweep_cells(cfg.methods, taus, d_for)
        results, beta = _evaluate_cells(cfg, cfg.theta, Q, cells)
        rows = [_row(1, cfg, c, cfg.theta, r, beta) for c, r in zip(cells, results)]
    elif exp_id == 2:
        for theta in cfg.theta_grid:
            cells = _sweep_cells(cfg.methods, taus, d_for)
            results, beta = _evaluate_cells(cfg, theta, Q, cells)
            sweep = [_row(2, cfg, c, theta, r, beta) for c, r in zip(cells, results)]
            rows.extend(_best_per_group(sweep, key=lambda r: r.method))
    else:
        cells = [_Cell(m, float(t), d) for m in cfg.methods if m in PCA_METHODS
                 for d in cfg.d_values for t in taus]
        cells += [_Cell(m, float(t), p) for m in cfg.methods if m not in PCA_METHODS for t in taus]
        results, beta = _evaluate_cells(cfg, cfg.theta, Q, cells)
        sweep = [_row(3, cfg, c, cfg.theta, r, beta) for c, r in zip(cells, results)]
        rows = _best_per_group(sweep, key=lambda r: (r.method, r.d))

    meta = {
        "experiment": exp_id,
        "scenario": asdict(cfg),
        "tau_grid": {"log_min": cfg.tau_log_min, "log_max": cfg.tau_log_max,
                     "count": cfg.tau_count, "base": cfg.tau_base},
        "tau_selection": CRITERION if exp_id in (2, 3) else None,
        "replicates_share_X": not cfg.independent_replicates,
        "total_runtime_seconds": time.perf_counter() - started,
    }
    return CriterionReport(experiment=exp_id, rows=_sort_rows(rows), metadata=meta)


# ---------------------------- Projection pairs --------------------------- #

@dataclass(frozen=True)
class ProjectionPairs:
    true_index: np.ndarray
    estimated: Dict[str, np.ndarray]
    methods: Tuple[str, ...]

    def write_csv(self, path: pathlib.Path) -> None:
        path = pathlib.Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["true_index"] + list(self.methods))
            for i, t in enumerate(self.true_index):
                w.writerow([repr(float(t))] + [repr(float(self.estimated[m][i])) for m in self.methods])


def projection_pairs(cfg: ScenarioConfig, methods: Sequence[str] = ("sir", "pca-tikhonov"),
                     replicate: int = 0, tau: float = 1.0) -> ProjectionPairs:
    """(beta^t X_i, b_hat^t X_i) on one replicate; estimates are flipped to agree in sign with beta."""
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise InvalidConfig(f"--pair-methods: unknown or empty {bad}")
    Q = random_orthogonal(cfg.p, cfg.seed)
    sigma, beta = make_population(cfg.p, cfg.theta, Q)
    shared_X = None
    if not cfg.independent_replicates:
        shared_X = sample_predictors(cfg.n, sigma, rng_stream(cfg.seed, PURPOSE_X, 0))
    data = _replicate_data(cfg, sigma, beta, replicate, shared_X)

    estimated: Dict[str, np.ndarray] = {}
    for m in methods:
        prior = None if m == "sir" else PriorSpec(m, tau, cfg.cutoff if PRIORS[m][2] else None)
        _, _, fit = fit_dataset(data, prior, cfg.num_slices)
        b = fit.direction if fit.direction @ beta >= 0 else -fit.direction
        estimated[m] = data.X @ b
    return ProjectionPairs(true_index=data.X @ beta, estimated=estimated, methods=tuple(methods))

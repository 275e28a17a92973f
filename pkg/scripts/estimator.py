"""
Maximum-likelihood fits of the single/multi-index inverse regression model.

  fit_sir    unregularized: top eigenvectors of Sigma^-1 M^t W^-1 M
  fit_grsir  Gaussian prior Omega: top eigenvectors of (Omega Sigma + I)^-1 Omega M^t W^-1 M

Both eigenproblems are solved as symmetric-definite pencils (Cholesky reduction);
the regularized one in the prior's retained subspace, where it reads
    Gamma~ a = lambda (Sigma~ + Omega~^-1) a,   b = B a.
"""
from __future__ import annotations

import json
import math
import pathlib
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from design import Dataset, DesignMoments, SliceAssignment, slice_design, DEFAULT_NUM_SLICES
from errors import (
    CholeskyFailure,
    InputError,
    InvalidConfig,
    NoSignal,
    NonPositiveDefinite,
    OutOfRange,
    SaturatedSignal,
    SingularCovariance,
    SubspaceTooSmall,
)
from priors import RANK_TOL, PriorMaterialization, PriorSpec, materialize, project_problem

NO_SIGNAL_TOL = 1e-12      # trace(Gamma) relative to trace(Sigma)
SATURATION_TOL = 1e-10
GAP_TOL = 1e-10


# ----------------------------- Domain types ------------------------------ #

@dataclass(frozen=True)
class FitResult:
    directions: np.ndarray
    eigenvalues: np.ndarray
    rho_hat: np.ndarray
    c_hat: Optional[np.ndarray] = None
    mu_hat: Optional[np.ndarray] = None
    v_hat: Optional[np.ndarray] = None
    theta_b: Optional[float] = None
    eta_b: Optional[float] = None
    objective: Optional[float] = None
    degenerate_gap: bool = False

    @property
    def direction(self) -> np.ndarray:
        return self.directions[:, 0]

    @property
    def lambda_hat(self) -> float:
        return float(self.eigenvalues[0])


@dataclass(frozen=True)
class ModelArtifact:
    fit: FitResult
    prior: Optional[PriorSpec]
    h: int
    slice_boundaries: np.ndarray
    x_bar: np.ndarray
    n: int
    seed: Optional[int] = None
    response: str = "y"
    predictors: Tuple[str, ...] = ()
    link: Optional[Any] = None

    @property
    def p(self) -> int:
        return self.x_bar.size

    def to_dict(self) -> Dict[str, Any]:
        prior = self.prior
        out: Dict[str, Any] = {
            "prior": prior.variant if prior else "sir",
            "tau": prior.tau if prior else None,
            "d": prior.d if prior else None,
            "h": self.h,
            "slice_boundaries": self.slice_boundaries.tolist(),
            "b_hat": self.fit.directions.T.tolist(),
            "c_hat": None if self.fit.c_hat is None else self.fit.c_hat.tolist(),
            "mu_hat": None if self.fit.mu_hat is None else self.fit.mu_hat.tolist(),
            "lambda_hat": self.fit.eigenvalues.tolist(),
            "rho_hat": self.fit.rho_hat.tolist(),
            "x_bar": self.x_bar.tolist(),
            "seed": self.seed,
            "n": self.n,
            "p": self.p,
            "response": self.response,
            "predictors": list(self.predictors),
        }
        if prior is not None and prior.weights is not None:
            out["weights"] = list(prior.weights)
        if self.link is not None:
            out["link"] = {"knots": self.link.knots.tolist(), "values": self.link.values.tolist()}
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelArtifact":
        try:
            name = data["prior"]
            if name == "sir" and data.get("tau") is None:
                prior = None
            else:
                weights = data.get("weights")
                prior = PriorSpec(name, float(data["tau"]), data.get("d"),
                                  tuple(weights) if weights else None)
            directions = np.asarray(data["b_hat"], dtype=float).T
            eigenvalues = np.asarray(data["lambda_hat"], dtype=float)
            fit = FitResult(
                directions=directions,
                eigenvalues=eigenvalues,
                rho_hat=np.asarray(data["rho_hat"], dtype=float),
                c_hat=None if data.get("c_hat") is None else np.asarray(data["c_hat"], dtype=float),
                mu_hat=None if data.get("mu_hat") is None else np.asarray(data["mu_hat"], dtype=float),
            )
            link = None
            if data.get("link"):
                from forward_link import PiecewiseLinearLink
                link = PiecewiseLinearLink(np.asarray(data["link"]["knots"], dtype=float),
                                           np.asarray(data["link"]["values"], dtype=float))
            return cls(
                fit=fit,
                prior=prior,
                h=int(data["h"]),
                slice_boundaries=np.asarray(data["slice_boundaries"], dtype=float),
                x_bar=np.asarray(data["x_bar"], dtype=float),
                n=int(data["n"]),
                seed=data.get("seed"),
                response=data.get("response", "y"),
                predictors=tuple(data.get("predictors", ())),
                link=link,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"--model: malformed model artifact ({e})") from None

    def save(self, path: pathlib.Path) -> None:
        path = pathlib.Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        # json writes floats with repr(): shortest round-trip form, bit-exact on reload
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: pathlib.Path) -> "ModelArtifact":
        path = pathlib.Path(path)
        if not path.exists():
            raise InputError(f"--model: file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise InputError(f"--model: {path} is not valid JSON ({e})") from None
        return cls.from_dict(data)


# ---------------------------- Linear algebra ----------------------------- #

def _sign_convention(b: np.ndarray) -> np.ndarray:
    """Unit columns whose largest-magnitude coordinate is positive."""
    b = b / np.linalg.norm(b, axis=0)
    idx = np.argmax(np.abs(b), axis=0)
    signs = np.sign(b[idx, np.arange(b.shape[1])])
    signs[signs == 0] = 1.0
    return b * signs


def solve_pencil(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """All eigenpairs of A x = lambda B x, B symmetric positive definite, descending."""
    try:
        low = linalg.cholesky(b, lower=True)
    except linalg.LinAlgError:
        raise CholeskyFailure("pencil matrix is not positive definite; check the prior's rank tolerance") from None
    c = linalg.solve_triangular(low, a, lower=True)
    c = linalg.solve_triangular(low, c.T, lower=True)
    evals, u = linalg.eigh(0.5 * (c + c.T))
    evals, u = evals[::-1], u[:, ::-1]
    x = linalg.solve_triangular(low.T, u, lower=False)
    evals = np.where((evals < 0) & (evals > -1e-12 * max(abs(evals[0]), 1.0)), 0.0, evals)
    return evals, x


def solve_projected(gamma_t: np.ndarray, sigma_t: np.ndarray, omega_inv_t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Subspace pencil Gamma~ a = lambda (Sigma~ + Omega~^-1) a; omega_inv_t is the diagonal."""
    return solve_pencil(gamma_t, sigma_t + np.diag(omega_inv_t))


def solve_direction_problem(gamma_hat: np.ndarray, sigma_hat: np.ndarray,
                            prior: PriorMaterialization, K: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Top-K eigenpairs of (Omega Sigma + I)^-1 Omega Gamma, computed in span(basis)."""
    evals, dirs = _solve_in_subspace(gamma_hat, sigma_hat, prior, K)
    return evals[:K], dirs[:, :K]


def _solve_in_subspace(gamma_hat, sigma_hat, prior: PriorMaterialization, K: int):
    if K < 1:
        raise InvalidConfig(f"--components must be >= 1 (got {K})")
    if K > prior.d:
        raise SubspaceTooSmall(f"{K} components requested but the prior retains only d={prior.d} directions")
    g, s, omega_inv = project_problem(prior, gamma_hat, sigma_hat)
    check_signal(g, s)
    evals, a = solve_pencil(g, s + omega_inv)
    return evals, _sign_convention(prior.basis @ a)


def check_signal(gamma: np.ndarray, sigma: np.ndarray) -> None:
    """Raise NoSignal when Gamma is negligible against Sigma on the same subspace."""
    g, s = float(np.trace(gamma)), float(np.trace(sigma))
    if g <= NO_SIGNAL_TOL * s:
        raise NoSignal(f"between-slice covariance is zero (trace {g:.3g} against {s:.3g}): "
                       "the slice means carry no signal")


def _check_covariance(sigma_hat: np.ndarray) -> None:
    evals = linalg.eigvalsh(sigma_hat)
    top = float(evals[-1])
    if top <= 0 or evals[0] <= RANK_TOL * top:
        cond = math.inf if evals[0] <= 0 else top / float(evals[0])
        raise SingularCovariance(f"predictor covariance is singular (condition number {cond:.3g})")


# ------------------------------ Objectives ------------------------------- #

def objective_g(mu, V, b, c, moments: DesignMoments) -> float:
    """Closed form of the negative log-likelihood criterion G(mu, V, b, c)."""
    mu, b, c = (np.asarray(v, dtype=float) for v in (mu, b, c))
    V = np.asarray(V, dtype=float)
    if float(np.max(np.abs(V - V.T))) > 1e-10 * max(float(np.max(np.abs(V))), 1e-300):
        raise NonPositiveDefinite("V is not symmetric")
    try:
        factor = linalg.cho_factor(V, lower=True)
    except linalg.LinAlgError:
        raise NonPositiveDefinite("V is not positive definite") from None
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    trace = float(np.trace(linalg.cho_solve(factor, moments.sigma_hat)))
    vb = V @ b
    r = mu - moments.x_bar + float(moments.s_bar @ c) * vb
    quad = float(r @ linalg.cho_solve(factor, r))
    cwc = float(c @ moments.w @ c)
    return logdet + trace + quad + cwc * float(b @ vb) - 2.0 * float(c @ moments.m @ b)


def objective_g_omega(mu, V, b, c, moments: DesignMoments, prior: PriorMaterialization) -> float:
    """G plus the prior penalty (b^t Omega^-1 b)(b^t V b)(c^t W c) / (b^t Sigma b)."""
    g = objective_g(mu, V, b, c, moments)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    scale = float(b @ V @ b) * float(c @ moments.w @ c) / float(b @ moments.sigma_hat @ b)
    if scale == 0.0:
        return g
    return g + prior.inverse_quadratic(b) * scale


def snr_estimate(lambda_hat: float) -> float:
    if not (0.0 <= lambda_hat < 1.0):
        raise OutOfRange(f"eigenvalue {lambda_hat} outside [0, 1)")
    return lambda_hat / (1.0 - lambda_hat)


# -------------------------------- Fitting -------------------------------- #

def _check_components(K: int, limit: int, what: str) -> None:
    if K < 1:
        raise InvalidConfig(f"--components must be >= 1 (got {K})")
    if K > limit:
        raise SubspaceTooSmall(f"{K} components requested but at most {limit} are identifiable ({what})")


def _assemble(moments: DesignMoments, evals: np.ndarray, dirs: np.ndarray, K: int,
              prior: Optional[PriorMaterialization]) -> FitResult:
    lam = evals[:K].copy()
    if lam[0] >= 1.0 - SATURATION_TOL:
        raise SaturatedSignal(f"largest eigenvalue {lam[0]:.17g} reaches 1: the slice means "
                              "reproduce the predictor covariance")
    gap = bool(evals.size > K and abs(evals[K - 1] - evals[K]) < GAP_TOL * lam[0])
    rho = np.array([snr_estimate(l) for l in lam])
    directions = dirs[:, :K].copy()
    if K > 1:
        return FitResult(directions=directions, eigenvalues=lam, rho_hat=rho, degenerate_gap=gap)

    b = directions[:, 0]
    sigma = moments.sigma_hat
    sb = sigma @ b
    bsb = float(b @ sb)
    v_hat = sigma - (lam[0] / bsb) * np.outer(sb, sb)
    v_hat = 0.5 * (v_hat + v_hat.T)
    vb = v_hat @ b
    bvb = float(b @ vb)
    theta = bvb / bsb
    eta = 0.0 if prior is None else prior.inverse_quadratic(b) / bsb
    c_hat = moments.w_inverse @ moments.m @ b / ((1.0 + eta) * bvb)
    mu_hat = moments.x_bar - float(moments.s_bar @ c_hat) * vb
    v_evals = linalg.eigvalsh(v_hat)
    objective = math.nan  # singular Sigma_hat: log det V is -inf
    if v_evals[0] > RANK_TOL * v_evals[-1]:
        try:
            if prior is None:
                objective = objective_g(mu_hat, v_hat, b, c_hat, moments)
            else:
                objective = objective_g_omega(mu_hat, v_hat, b, c_hat, moments, prior)
        except NonPositiveDefinite:
            pass
    return FitResult(
        directions=directions, eigenvalues=lam, rho_hat=rho,
        c_hat=c_hat, mu_hat=mu_hat, v_hat=v_hat,
        theta_b=theta, eta_b=eta, objective=objective, degenerate_gap=gap,
    )


def fit_sir(moments: DesignMoments, K: int = 1) -> FitResult:
    _check_components(K, min(moments.h, moments.p), "min(h, p)")
    _check_covariance(moments.sigma_hat)
    check_signal(moments.inverse_regression_matrix, moments.sigma_hat)
    evals, x = solve_pencil(moments.inverse_regression_matrix, moments.sigma_hat)
    return _assemble(moments, evals, _sign_convention(x), K, None)


def fit_grsir(moments: DesignMoments, prior: PriorMaterialization, K: int = 1) -> FitResult:
    _check_components(K, moments.h, "h")
    evals, dirs = _solve_in_subspace(moments.inverse_regression_matrix, moments.sigma_hat, prior, K)
    return _assemble(moments, evals, dirs, K, prior)


def fit_dataset(data: Dataset, prior: Optional[PriorSpec], num_slices: int = DEFAULT_NUM_SLICES,
                K: int = 1) -> Tuple[SliceAssignment, DesignMoments, FitResult]:
    """Slice, build moments and fit; prior None means plain SIR."""
    assignment, moments = slice_design(data, num_slices)
    if prior is None:
        return assignment, moments, fit_sir(moments, K)
    return assignment, moments, fit_grsir(moments, materialize(prior, moments.sigma_hat), K)


def cos2(a: Sequence[float], b: Sequence[float]) -> float:
    """Squared cosine between two directions."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float((a @ b) ** 2 / ((a @ a) * (b @ b)))

"""
Prior covariance Omega for the regularized inverse regression.

Every built-in prior is a function phi of the spectrum of Sigma_hat:

    Omega(phi) = sum_{j<=d} phi(lambda_j) q_j q_j^t

so a prior is carried as (basis q_1..q_d, weights phi(lambda_j)) and never as a
dense p×p matrix. The solver works in span(q_1..q_d).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from errors import (
    InvalidConfig,
    NotSymmetric,
    SingularCovariance,
    SubspaceTooSmall,
)

RANK_TOL = 1e-12        # eigenvalues <= RANK_TOL * lambda_1 are treated as zero
SYMMETRY_TOL = 1e-10
OFF_SUBSPACE_TOL = 1e-10

# name -> (phi, needs a positive spectrum on the retained part, cut-off applies)
PRIORS: Dict[str, Tuple[str, bool, bool]] = {
    "sir":          ("1/(tau*lambda)", True,  False),
    "ridge":        ("1/tau",          False, False),
    "pca-sir":      ("1/(tau*lambda)", True,  True),
    "tikhonov":     ("lambda/tau",     True,  False),
    "pca-ridge":    ("1/tau",          True,  True),
    "pca-tikhonov": ("lambda/tau",     True,  True),
}
SPECTRAL = "spectral"


def default_cutoff(p: int) -> int:
    return max(1, math.ceil(p / 2))


# ----------------------------- Domain types ------------------------------ #

@dataclass(frozen=True)
class PriorSpec:
    variant: str
    tau: float = 1.0
    d: Optional[int] = None
    weights: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.variant not in PRIORS and self.variant != SPECTRAL:
            raise InvalidConfig(f"--prior: unknown prior '{self.variant}' (choose from {', '.join(PRIORS)})")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise InvalidConfig(f"--tau must be a positive finite number (got {self.tau})")
        if self.d is not None and self.d < 1:
            raise InvalidConfig(f"--cutoff-d must be >= 1 (got {self.d})")
        if self.variant == SPECTRAL:
            if not self.weights:
                raise InvalidConfig("spectral prior needs a weight table")
            if any(not (w > 0) for w in self.weights):
                raise InvalidConfig("spectral prior weights must be positive")
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
            if self.d is None:
                object.__setattr__(self, "d", len(self.weights))
            elif self.d != len(self.weights):
                raise InvalidConfig(f"spectral prior: d={self.d} but {len(self.weights)} weights given")

    @property
    def uses_cutoff(self) -> bool:
        return self.variant == SPECTRAL or PRIORS[self.variant][2]

    @property
    def label(self) -> str:
        parts = [self.variant, f"tau={self.tau:g}"]
        if self.uses_cutoff and self.d is not None:
            parts.append(f"d={self.d}")
        return " ".join(parts)

    # constructors named after the regularization they give back
    @classmethod
    def sir(cls, tau: float = 1.0) -> "PriorSpec":
        return cls("sir", tau)

    @classmethod
    def ridge(cls, tau: float) -> "PriorSpec":
        return cls("ridge", tau)

    @classmethod
    def pca_sir(cls, d: Optional[int] = None, tau: float = 1.0) -> "PriorSpec":
        return cls("pca-sir", tau, d)

    @classmethod
    def tikhonov(cls, tau: float) -> "PriorSpec":
        return cls("tikhonov", tau)

    @classmethod
    def pca_ridge(cls, d: Optional[int], tau: float) -> "PriorSpec":
        return cls("pca-ridge", tau, d)

    @classmethod
    def pca_tikhonov(cls, d: Optional[int], tau: float) -> "PriorSpec":
        return cls("pca-tikhonov", tau, d)

    @classmethod
    def spectral(cls, weights: Sequence[float]) -> "PriorSpec":
        return cls(SPECTRAL, 1.0, len(weights), tuple(weights))


@dataclass(frozen=True)
class PriorMaterialization:
    basis: np.ndarray
    weights: np.ndarray
    omega_inv_on_subspace: np.ndarray
    eigenvalues: np.ndarray
    full_rank: bool
    spec: PriorSpec = field(compare=False)

    @property
    def d(self) -> int:
        return self.basis.shape[1]

    @property
    def p(self) -> int:
        return self.basis.shape[0]

    def omega(self) -> np.ndarray:
        """Dense Omega; for checks and oracles only."""
        return (self.basis * self.weights) @ self.basis.T

    def omega_inverse(self) -> np.ndarray:
        """Dense inverse of Omega on its range (pseudo-inverse when d < p)."""
        return (self.basis * self.omega_inv_on_subspace) @ self.basis.T

    def inverse_quadratic(self, b: np.ndarray) -> float:
        """b^t Omega^-1 b; +inf when b leaves the retained subspace."""
        b = np.asarray(b, dtype=float)
        a = self.basis.T @ b
        if not self.full_rank:
            off = b - self.basis @ a
            if np.linalg.norm(off) > OFF_SUBSPACE_TOL * max(np.linalg.norm(b), 1e-300):
                return math.inf
        return float(np.sum(a * a * self.omega_inv_on_subspace))


# ------------------------------ Operations ------------------------------- #

def spectral_decompose(sigma_hat: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and orthonormal eigenvectors of a symmetric PSD matrix."""
    a = np.asarray(sigma_hat, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {a.shape}")
    scale = max(float(np.max(np.abs(a))), 1e-300)
    if float(np.max(np.abs(a - a.T))) > SYMMETRY_TOL * scale:
        raise NotSymmetric("covariance matrix is not symmetric")
    evals, evecs = linalg.eigh(0.5 * (a + a.T))
    evals, evecs = evals[::-1].copy(), evecs[:, ::-1].copy()
    clamp = 1e-12 * max(abs(float(evals[0])), 1.0)
    evals[(evals < 0) & (evals >= -clamp)] = 0.0
    return evals, evecs


def materialize(spec: PriorSpec, sigma_hat: np.ndarray) -> PriorMaterialization:
    return materialize_spectrum(spec, *spectral_decompose(sigma_hat))


def materialize_spectrum(spec: PriorSpec, evals: np.ndarray, evecs: np.ndarray) -> PriorMaterialization:
    """materialize() from an already computed (descending) eigendecomposition of Sigma_hat."""
    p = evals.size
    if spec.uses_cutoff:
        d = spec.d if spec.d is not None else default_cutoff(p)
        if d > p:
            raise SubspaceTooSmall(f"--cutoff-d={d} exceeds the dimension p={p}")
    else:
        d = p

    lam = evals[:d]
    eps_rank = RANK_TOL * max(float(evals[0]), 0.0)
    needs_positive = spec.variant == SPECTRAL or PRIORS[spec.variant][1]
    if needs_positive and (lam[-1] <= eps_rank or lam[-1] <= 0):
        k = int(np.sum(evals > eps_rank))
        if d == p:
            msg = f"prior '{spec.variant}' needs a positive definite covariance, numerical rank is {k} < p={p}"
        else:
            msg = f"prior '{spec.variant}' retains d={d} directions but the covariance has numerical rank {k}"
        raise SingularCovariance(msg)

    tau = spec.tau
    if spec.variant in ("sir", "pca-sir"):
        weights = 1.0 / (tau * lam)
    elif spec.variant in ("ridge", "pca-ridge"):
        weights = np.full(d, 1.0 / tau)
    elif spec.variant in ("tikhonov", "pca-tikhonov"):
        weights = lam / tau
    else:
        weights = np.asarray(spec.weights, dtype=float)

    return PriorMaterialization(
        basis=evecs[:, :d],
        weights=weights,
        omega_inv_on_subspace=1.0 / weights,
        eigenvalues=lam.copy(),
        full_rank=(d == p),
        spec=spec,
    )


def project_problem(mat: PriorMaterialization, gamma_hat: np.ndarray,
                    sigma_hat: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(B^t Gamma B, B^t Sigma B, diag(1/phi)) in the retained subspace."""
    b = mat.basis
    g = b.T @ gamma_hat @ b
    s = b.T @ sigma_hat @ b
    return 0.5 * (g + g.T), 0.5 * (s + s.T), np.diag(mat.omega_inv_on_subspace)


def describe_priors(p: Optional[int] = None) -> str:
    d_default = f"ceil(p/2)={default_cutoff(p)}" if p else "ceil(p/2)"
    lines = []
    for name, (phi, _, cutoff) in PRIORS.items():
        d = f"d={d_default}" if cutoff else "d=p"
        lines.append(f"  {name:<13} phi(lambda) = {phi:<15} {d:<18} tau default 1.0")
    return "\n".join(lines)

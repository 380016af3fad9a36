"""Covariance uncertainty sets, the function G and finite scenario families.

A sublinear expectation here is always the maximum over a finite list of
linear expectations, so every supremum is an exact finite maximum.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import InputError

SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CovarianceSet:
    """Finite set of covariance rates (variance per unit time).

    Parameters
    ----------
    d : int
        State dimension.
    matrices : array_like, shape (S, d, d)
        Symmetric positive semidefinite matrices. Stored read-only.
    """

    d: int
    matrices: np.ndarray

    def __post_init__(self):
        if not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise InputError(f"dimension must be a positive integer, got {self.d!r}")
        try:
            mats = np.array(self.matrices, dtype=float)
        except (TypeError, ValueError) as exc:
            raise InputError(f"matrices are not numeric: {exc}") from None
        if mats.ndim == 1 and self.d == 1:
            mats = mats.reshape(-1, 1, 1)
        if mats.ndim != 3 or mats.shape[0] == 0:
            raise InputError("matrices must be a nonempty list of d x d arrays")
        for i, m in enumerate(mats):
            if m.shape != (self.d, self.d):
                raise InputError(f"matrix {i} has shape {m.shape}, expected {(self.d, self.d)}")
            if not np.all(np.isfinite(m)):
                raise InputError(f"matrix {i} has non-finite entries")
            if np.max(np.abs(m - m.T)) > SYMMETRY_TOL:
                raise InputError(f"matrix {i} is not symmetric")
            if np.linalg.eigvalsh(m).min() < -PSD_TOL:
                raise InputError(f"matrix {i} is not positive semidefinite")
        mats.setflags(write=False)
        object.__setattr__(self, "matrices", mats)

    @classmethod
    def from_variances(cls, variances: Sequence[float]) -> "CovarianceSet":
        """One-dimensional set from scalar variance rates."""
        return cls(1, np.asarray(variances, dtype=float).reshape(-1, 1, 1))

    @classmethod
    def from_json(cls, doc: Any) -> "CovarianceSet":
        """Build from ``{"d": int, "matrices": [[[...]]]}``, a JSON string or a path.

        A bare list of numbers is accepted as shorthand for d = 1.
        """
        if isinstance(doc, Path) or (isinstance(doc, str) and not doc.lstrip().startswith(("{", "["))):
            doc = json.loads(Path(doc).read_text())
        elif isinstance(doc, str):
            doc = json.loads(doc)
        if isinstance(doc, list):
            return cls.from_variances(doc)
        if not isinstance(doc, dict) or "d" not in doc or "matrices" not in doc:
            raise InputError('covariance set must be {"d": int, "matrices": [...]}')
        return cls(int(doc["d"]), doc["matrices"])

    def to_json(self) -> dict:
        return {"d": int(self.d), "matrices": self.matrices.tolist()}

    def __len__(self):
        return self.matrices.shape[0]

    @cached_property
    def sqrt_matrices(self) -> np.ndarray:
        """Symmetric square roots, eigenvalues clipped at zero."""
        out = []
        for m in self.matrices:
            w, v = np.linalg.eigh(m)
            out.append((v * np.sqrt(np.clip(w, 0.0, None))) @ v.T)
        arr = np.array(out)
        arr.setflags(write=False)
        return arr

    @cached_property
    def max_variances(self) -> np.ndarray:
        """Largest variance rate along each coordinate axis."""
        return np.max(np.diagonal(self.matrices, axis1=1, axis2=2), axis=0)

    @property
    def sigma_max(self) -> float:
        """Upper volatility: square root of the largest axis variance."""
        return float(np.sqrt(np.max(self.max_variances)))


@dataclass(frozen=True)
class GFunction:
    """G(A) = 1/2 max over the set of tr(A gamma)."""

    source: CovarianceSet

    def _traces(self, A) -> np.ndarray:
        A = np.asarray(A, dtype=float)
        d = self.source.d
        if A.ndim == 0 and d == 1:
            A = A.reshape(1, 1)
        if A.shape != (d, d):
            raise InputError(f"matrix shape {A.shape} does not match dimension {d}")
        if np.max(np.abs(A - A.T)) > SYMMETRY_TOL:
            raise InputError("argument of G must be symmetric")
        return np.einsum("ij,sji->s", A, self.source.matrices)

    def __call__(self, A) -> float:
        return 0.5 * float(np.max(self._traces(A)))

    def argmax(self, A) -> int:
        """Index of a maximizing covariance (lowest on ties)."""
        return int(np.argmax(self._traces(A)))


def g_eval(gf: GFunction, A) -> float:
    return gf(A)


@dataclass
class AxiomReport:
    subadditivity: float
    homogeneity: float
    monotonicity: float
    zero_value: float
    n_samples: int
    tol: float = 1e-10

    @property
    def max_violation(self) -> float:
        return max(self.subadditivity, self.homogeneity, self.monotonicity, self.zero_value)

    @property
    def ok(self) -> bool:
        return self.max_violation <= self.tol

    def to_dict(self) -> dict:
        return {
            "subadditivity": self.subadditivity,
            "homogeneity": self.homogeneity,
            "monotonicity": self.monotonicity,
            "zero_value": self.zero_value,
            "n_samples": self.n_samples,
            "tol": self.tol,
            "ok": self.ok,
        }


def _psd_part(M: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (M + M.T))
    P = (v * np.clip(w, 0.0, None)) @ v.T
    return 0.5 * (P + P.T)


def g_axiom_check(gf: GFunction, samples, lambdas=(0.0, 0.5, 1.0, 2.0, 10.0)) -> AxiomReport:
    """Largest violation of sub-additivity, positive homogeneity and monotonicity.

    Monotonicity is checked on each pair directly when ``A - B`` is PSD and
    always on ``(B + (A - B)^+, B)``, which is ordered by construction.
    """
    samples = list(samples)
    if not samples:
        raise InputError("axiom check needs at least one matrix pair")
    sub = hom = mono = 0.0
    for A, B in samples:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        gA, gB = gf(A), gf(B)
        sub = max(sub, gf(A + B) - gA - gB)
        for lam in lambdas:
            hom = max(hom, abs(gf(lam * A) - lam * gA))
        D = A - B
        if np.linalg.eigvalsh(0.5 * (D + D.T)).min() >= 0.0:
            mono = max(mono, gB - gA)
        upper = B + _psd_part(D)
        mono = max(mono, gB - gf(upper))
    zero = abs(gf(np.zeros((gf.source.d, gf.source.d))))
    return AxiomReport(sub, hom, mono, zero, len(samples))


@dataclass(frozen=True)
class ScenarioFamily:
    """Finite list of scenario generators, each inducing one linear expectation."""

    generators: tuple
    label: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        gens = tuple(self.generators)
        if not gens:
            raise InputError("scenario family must be nonempty")
        object.__setattr__(self, "generators", gens)

    def __len__(self):
        return len(self.generators)

    def __iter__(self):
        return iter(self.generators)

    def __getitem__(self, i):
        return self.generators[i]


def scenario_sup(family: ScenarioFamily | None, values) -> tuple[float, int]:
    """Maximum of per-generator values and the lowest attaining index."""
    vals = np.asarray(values, dtype=float).ravel()
    if vals.size == 0:
        raise InputError("scenario_sup needs at least one value")
    if family is not None and len(family) != vals.size:
        raise InputError(f"{vals.size} values for a family of {len(family)} generators")
    if np.any(np.isnan(vals)):
        raise InputError("scenario values contain NaN")
    idx = int(np.argmax(vals))
    return float(vals[idx]), idx


def truncate(x, N):
    """Clip to [-N, N]; works elementwise on arrays."""
    if np.any(np.asarray(N) <= 0):
        raise InputError("truncation level must be positive")
    out = np.maximum(np.minimum(x, N), -N)
    return float(out) if np.ndim(out) == 0 else out

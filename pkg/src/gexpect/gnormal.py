"""G-normal layer: absolute moments, the one-step expectation operator and
the scaling identity aX + bX' = sqrt(a^2 + b^2) X."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, stats

from . import _grid
from .errors import GridTooNarrowError, InputError
from .sublinear import CovarianceSet, GFunction

LEAK_TOL = 1e-8

_ABS_MOMENT_UNIT = {
    1: math.sqrt(2.0 / math.pi),
    2: 1.0,
    3: 2.0 * math.sqrt(2.0 / math.pi),
    4: 3.0,
}


@dataclass(frozen=True)
class GNormalSpec:
    """Discretization of the G-normal law for a covariance set.

    ``substeps`` is the number of internal time steps per one-step
    expectation, ``quad_nodes`` the Gauss-Hermite order, ``points`` the grid
    size for d = 1 and ``points_2d`` the per-axis size for d = 2.  Grids
    span ``width_sigmas`` upper standard deviations on each side.

    In 1-d the first backward substep integrates the interpolated payoff
    exactly (``smoothing_step``), which removes the slow convergence of
    Gauss-Hermite random walks on kinked payoffs; later substeps use
    Gauss-Hermite stencils rescaled so that their variance is exact
    (``moment_match``).
    """

    cov: CovarianceSet
    substeps: int = 8
    quad_nodes: int = 21
    points: int = 801
    points_2d: int = 101
    width_sigmas: float = 6.0
    moment_match: bool = True
    smoothing_step: bool = True

    def __post_init__(self):
        if self.substeps < 1:
            raise InputError("substeps must be >= 1")
        if self.quad_nodes < 5 or self.quad_nodes % 2 == 0:
            raise InputError("quad_nodes must be odd and >= 5")
        for name in ("points", "points_2d"):
            n = getattr(self, name)
            if n < 3 or n % 2 == 0:
                raise InputError(f"{name} must be odd and >= 3")
        if self.width_sigmas <= 0:
            raise InputError("width_sigmas must be positive")

    @property
    def d(self) -> int:
        return self.cov.d

    @property
    def g(self) -> GFunction:
        return GFunction(self.cov)

    def with_(self, **kw) -> "GNormalSpec":
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class ValueFunction1D:
    """Samples of a function of one real variable.

    Linear interpolation inside the grid; beyond it the boundary values are
    continued as constants.  ``extrapolation_bound`` is the half-width on
    which the samples are trusted.
    """

    grid: np.ndarray
    values: np.ndarray
    extrapolation_bound: float | None = None

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape or g.size < 2:
            raise InputError("grid and values must be aligned 1-d arrays of length >= 2")
        if np.any(np.diff(g) <= 0):
            raise InputError("grid must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise InputError("values must be finite")
        bound = self.extrapolation_bound
        if bound is None:
            bound = float(min(-g[0], g[-1]))
        if bound <= 0:
            raise InputError("extrapolation_bound must be positive")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "extrapolation_bound", float(bound))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim and x.shape[-1] == 1:
            x = x[..., 0]
        return np.interp(x, self.grid, self.values)


@dataclass(frozen=True, eq=False)
class ValueGrid:
    """Tensor-grid samples for d = 2 (``axes`` per coordinate)."""

    axes: tuple
    values: np.ndarray

    def __call__(self, x):
        from scipy.interpolate import RegularGridInterpolator

        x = np.asarray(x, dtype=float)
        clipped = np.stack([np.clip(x[..., i], a[0], a[-1]) for i, a in enumerate(self.axes)], axis=-1)
        return RegularGridInterpolator(self.axes, self.values)(clipped)


@dataclass
class StepResult:
    value: float
    function: ValueFunction1D | ValueGrid | None
    error_estimate: float | None
    substeps: int
    leak: float
    std_error: float | None = None
    argmax: int | None = None
    policy: list | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "error_estimate": self.error_estimate,
            "std_error": self.std_error,
            "substeps": self.substeps,
            "leak": self.leak,
        }


# -- absolute moments ----------------------------------------------------------

def abs_moment(spec: GNormalSpec | CovarianceSet, a, p: float, method: str = "auto") -> float:
    """Upper expectation of |(a, X)|^p for G-normal X.

    Equals the centered Gaussian absolute moment with variance
    ``2 G(a a^T)``.  ``method``: ``"auto"`` (closed form for p in {1,2,3,4},
    quadrature otherwise), ``"analytic"`` or ``"quadrature"``.
    """
    cov = spec.cov if isinstance(spec, GNormalSpec) else spec
    if p < 1:
        raise InputError("absolute moments are defined here for p >= 1")
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape != (cov.d,):
        raise InputError(f"vector a must have length {cov.d}")
    var = 2.0 * GFunction(cov)(np.outer(a, a))
    if var <= 0.0:
        return 0.0
    sigma = math.sqrt(var)
    is_int = float(p).is_integer() and int(p) in _ABS_MOMENT_UNIT
    if method == "analytic" or (method == "auto" and is_int):
        if not is_int:
            raise InputError("closed form available only for p in {1, 2, 3, 4}")
        return _ABS_MOMENT_UNIT[int(p)] * sigma ** p
    if method not in ("auto", "quadrature"):
        raise InputError(f"unknown method {method!r}")
    # 2 * int_0^inf u^p phi(u) du, split at the density peak of u^p phi(u)
    peak = math.sqrt(p)
    f = lambda u: u ** p * math.exp(-0.5 * u * u)
    left, _ = integrate.quad(f, 0.0, peak, epsabs=0.0, epsrel=1e-13, limit=200)
    right, _ = integrate.quad(f, peak, np.inf, epsabs=0.0, epsrel=1e-13, limit=200)
    return 2.0 * (left + right) / math.sqrt(2.0 * math.pi) * sigma ** p


# -- one-step operator -----------------------------------------------------------

def uniform_axis(half_width: float, points: int) -> tuple[np.ndarray, float]:
    m = (points - 1) // 2
    if half_width <= 0:
        return np.zeros(1), 1.0
    h = half_width / m
    return h * np.arange(-m, m + 1), h


def leak_estimate(sigmas: Sequence[float], dt: float, bounds: Sequence[float]) -> float:
    """Gaussian mass beyond the trusted region under the upper volatility."""
    leak = 0.0
    for s, b in zip(sigmas, bounds):
        if s > 0:
            leak += 2.0 * stats.norm.sf(b / (s * math.sqrt(dt)))
    return float(leak)


def stencils_1d(cov: CovarianceSet, delta: float, h: float, spec: GNormalSpec):
    """(first-substep stencils or None, Gauss-Hermite stencils), one per covariance."""
    gh = [_grid.stencil_1d(delta * float(g[0, 0]), h, spec.quad_nodes, spec.moment_match)
          for g in cov.matrices]
    first = None
    if spec.smoothing_step:
        first = [_grid.stencil_hat(delta * float(g[0, 0]), h) for g in cov.matrices]
    return first, gh


def _as_grid_values(psi, x: np.ndarray) -> np.ndarray:
    vals = np.asarray(psi(x[:, None]), dtype=float).reshape(x.shape)
    if not np.all(np.isfinite(vals)):
        from .errors import EvaluationError

        raise EvaluationError("payoff is not finite on the value grid")
    return vals


def _one_step_1d(spec, psi, dt, half_width, points, substeps, record=False):
    x, h = uniform_axis(half_width, points)
    if isinstance(psi, ValueFunction1D):
        v0 = psi(x)
    else:
        v0 = _as_grid_values(psi, x)
    if x.size == 1:
        return x, h, v0, []
    first, st = stencils_1d(spec.cov, dt / substeps, h, spec)
    out = _grid.transform(v0, st, substeps, 1, record=record, first=first)
    if record:
        return x, h, out[0], out[1]
    return x, h, out, []


def one_step_expectation(spec: GNormalSpec, psi, dt: float, *, half_width: float | None = None,
                         points: int | None = None, error_estimate: bool = True,
                         record_policy: bool = False, n_paths: int = 100_000,
                         seed: int = 0) -> StepResult:
    """Upper expectation of psi(sqrt(dt) X) by ``spec.substeps`` maximizing substeps.

    ``psi`` is a callable on arrays of shape (..., d) (e.g. a FunctionalSpec of
    arity 1) or a ValueFunction1D.  The transformed grid function is returned
    for chaining; its value at 0 is ``result.value``.  For d > 2 the
    constant-scenario maximum is estimated by Monte Carlo instead.
    """
    if dt <= 0:
        raise InputError("dt must be positive")
    cov = spec.cov
    if cov.d > 2:
        return _one_step_mc(spec, psi, dt, n_paths, seed)
    sig = np.sqrt(cov.max_variances)
    if cov.d == 2:
        return _one_step_2d(spec, psi, dt, half_width, points)
    sbar = float(sig[0])
    if half_width is None:
        half_width = spec.width_sigmas * sbar * math.sqrt(dt)
    points = points or spec.points
    trusted = half_width
    if isinstance(psi, ValueFunction1D):
        trusted = min(trusted, psi.extrapolation_bound)
    leak = leak_estimate([sbar], dt, [trusted])
    if leak > LEAK_TOL:
        raise GridTooNarrowError(
            f"grid half-width {trusted:.4g} leaves mass {leak:.2e} > {LEAK_TOL:g} outside", leak)
    x, h, v, pol = _one_step_1d(spec, psi, dt, half_width, points, spec.substeps, record_policy)
    mid = x.size // 2
    value = float(v[mid])
    est = None
    if error_estimate and x.size > 1:
        est = 0.0
        if spec.substeps >= 2:
            _, _, v_half, _ = _one_step_1d(spec, psi, dt, half_width, points, spec.substeps // 2)
            est += abs(value - float(v_half[mid]))
        coarse_pts = (points - 1) // 2 + 1
        if coarse_pts % 2 == 0:
            coarse_pts += 1
        xc, _, v_coarse, _ = _one_step_1d(spec, psi, dt, half_width, coarse_pts, spec.substeps)
        est += abs(value - float(v_coarse[xc.size // 2]))
    fn = ValueFunction1D(x, v, half_width) if x.size > 1 else None
    argmax = None
    if pol:
        argmax = int(pol[-1][mid])
    return StepResult(value, fn, est, spec.substeps, leak, argmax=argmax,
                      policy=[(x, c) for c in pol] if record_policy else None)


def _one_step_2d(spec, psi, dt, half_width, points):
    cov = spec.cov
    sig = np.sqrt(cov.max_variances)
    points = points or spec.points_2d
    widths = [spec.width_sigmas * s * math.sqrt(dt) for s in sig] if half_width is None \
        else [half_width] * 2
    leak = leak_estimate(sig, dt, widths)
    if leak > LEAK_TOL:
        raise GridTooNarrowError(f"grid leaves mass {leak:.2e} > {LEAK_TOL:g} outside", leak)
    ax = [uniform_axis(w, points) for w in widths]
    axes = tuple(a for a, _ in ax)
    hs = [h for _, h in ax]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    if isinstance(psi, ValueGrid):
        v0 = np.asarray(psi(X), dtype=float)
    else:
        v0 = np.asarray(psi(X), dtype=float).reshape(X.shape[:-1])
    if not np.all(np.isfinite(v0)):
        from .errors import EvaluationError

        raise EvaluationError("payoff is not finite on the value grid")
    delta = dt / spec.substeps
    st = [_grid.stencil_2d(g, delta, hs, spec.quad_nodes, moment_match=spec.moment_match)
          for g in cov.matrices]
    v = _grid.transform(v0, st, spec.substeps, 2)
    c = tuple(a.size // 2 for a in axes)
    return StepResult(float(v[c]), ValueGrid(axes, v), None, spec.substeps, leak)


def _one_step_mc(spec, psi, dt, n_paths, seed):
    cov = spec.cov
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n_paths, cov.d))
    means = []
    ses = []
    for L in cov.sqrt_matrices:
        vals = np.asarray(psi(math.sqrt(dt) * Z @ L.T), dtype=float)
        means.append(float(vals.mean()))
        ses.append(float(vals.std(ddof=1) / math.sqrt(n_paths)))
    i = int(np.argmax(means))
    return StepResult(means[i], None, None, 0, 0.0, std_error=ses[i], argmax=i)


# -- scaling identity ----------------------------------------------------------

@dataclass
class ScalingReport:
    a: float
    b: float
    rows: list
    max_abs_diff: float
    ok: bool

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "rows": self.rows,
                "max_abs_diff": self.max_abs_diff, "ok": self.ok}


def _label(phi) -> str:
    return getattr(phi, "source_text", None) or getattr(phi, "__name__", repr(phi))


def scaling_identity_check(spec: GNormalSpec, a: float, b: float, phis: Sequence[Callable],
                           rel_tol: float = 5e-3) -> ScalingReport:
    """Compare E[phi(aX + bX')] (nested, X' independent copy) with E[phi(sqrt(a^2+b^2) X)].

    Both sides are computed on the same grid.  The nested side first
    transforms phi over variance horizon b^2 (the inner copy), composes
    with x -> a x and transforms again over horizon a^2.
    """
    if a < 0 or b < 0 or (a == 0 and b == 0):
        raise InputError("need a, b >= 0, not both zero")
    if spec.d != 1:
        raise InputError("scaling identity check is implemented for d = 1")
    total = a * a + b * b
    hw = spec.width_sigmas * spec.cov.sigma_max * math.sqrt(total)
    rows = []
    for phi in phis:
        rhs = one_step_expectation(spec, phi, total, half_width=hw, error_estimate=False).value
        if b == 0:
            lhs = one_step_expectation(spec, lambda x, phi=phi: phi(a * x), a * a,
                                       half_width=hw, error_estimate=False).value
        else:
            inner = one_step_expectation(spec, phi, b * b, half_width=hw, error_estimate=False)
            if a == 0:
                lhs = inner.value
            else:
                fn = inner.function
                grid_vals = fn(a * fn.grid)
                outer_psi = ValueFunction1D(fn.grid, grid_vals, hw)
                lhs = one_step_expectation(spec, outer_psi, a * a, half_width=hw,
                                           error_estimate=False).value
        diff = abs(lhs - rhs)
        tol = rel_tol * (1.0 + abs(rhs))
        rows.append({"phi": _label(phi), "lhs": lhs, "rhs": rhs, "abs_diff": diff,
                     "tol": tol, "ok": diff <= tol})
    worst = max(r["abs_diff"] for r in rows)
    return ScalingReport(a, b, rows, worst, all(r["ok"] for r in rows))

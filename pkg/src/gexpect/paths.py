"""Discrete paths, path distances and Lipschitz approximation of path functionals.

Paths live on a uniform grid of [0, T] and are continued constantly after
T.  Path functionals act on batches of paths; the inf-convolution
``inf_c X(c) + n ||omega - c||`` is taken over a finite candidate set, so
its bounds and Lipschitz property hold exactly rather than up to a
tolerance.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import BudgetExhaustedError, InputError


class ProjectionWarning(UserWarning):
    """Projection nodes are not grid points; the path was interpolated."""


@dataclass(frozen=True, eq=False)
class DiscretePath:
    """Path sampled at m+1 uniform times on [0, horizon], starting at 0."""

    horizon: float
    values: np.ndarray  # (m+1, d)

    def __post_init__(self):
        if not self.horizon > 0:
            raise InputError("horizon must be positive")
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 2:
            raise InputError("values must have shape (m+1, d) with m >= 1")
        if not np.all(np.isfinite(v)):
            raise InputError("path values must be finite")
        if np.any(v[0] != 0.0):
            raise InputError("paths must start at 0")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "horizon", float(self.horizon))

    @classmethod
    def from_function(cls, fn: Callable, horizon: float, m: int, d: int = 1) -> "DiscretePath":
        t = np.linspace(0.0, horizon, m + 1)
        v = np.asarray(fn(t), dtype=float).reshape(m + 1, d)
        return cls(horizon, v - v[0])

    @property
    def m(self) -> int:
        return self.values.shape[0] - 1

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.m + 1)

    def at(self, t) -> np.ndarray:
        """Linear interpolation, constant after the horizon."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.stack([np.interp(t, self.grid, self.values[:, j]) for j in range(self.d)], axis=-1)


def same_grid(p1: DiscretePath, p2: DiscretePath) -> bool:
    return p1.horizon == p2.horizon and p1.m == p2.m and p1.d == p2.d


@dataclass(frozen=True)
class RhoDistance:
    """Partial sum of the path metric and the bound on the omitted tail."""

    value: float
    tail_bound: float

    def __float__(self):
        return self.value


def rho_distance(p1: DiscretePath, p2: DiscretePath, i_max: int = 30) -> RhoDistance:
    """sum_{i=1}^{i_max} 2^-i min(1, max_{t <= i} |p1(t) - p2(t)|).

    The difference of two piecewise-linear paths has its largest norm on
    each segment at an endpoint, so the maxima are exact over the union of
    both grids and the integers.
    """
    if i_max < 1:
        raise InputError("i_max must be >= 1")
    if p1.d != p2.d:
        raise InputError("paths have different dimensions")
    t = np.union1d(np.union1d(p1.grid, p2.grid), np.arange(1, i_max + 1, dtype=float))
    t = t[t <= i_max]
    diff = np.linalg.norm(p1.at(t) - p2.at(t), axis=-1)
    running = np.maximum.accumulate(diff)
    ends = np.searchsorted(t, np.arange(1, i_max + 1, dtype=float), side="right") - 1
    terms = np.minimum(1.0, running[ends]) * 0.5 ** np.arange(1, i_max + 1)
    return RhoDistance(float(terms.sum()), 0.5 ** i_max)


def _until_index(grid: np.ndarray, until: float | None) -> int:
    if until is None:
        return grid.size
    return int(np.searchsorted(grid, until + 1e-12 * max(1.0, until), side="right"))


def sup_norm(p1: DiscretePath, p2: DiscretePath, until: float | None = None) -> float:
    """max over grid times t <= until of |p1(t) - p2(t)|; grids must match."""
    if not same_grid(p1, p2):
        raise InputError("sup_norm needs paths on the same grid")
    k = _until_index(p1.grid, until)
    if k == 0:
        return 0.0
    return float(np.max(np.linalg.norm(p1.values[:k] - p2.values[:k], axis=-1)))


def _projection_nodes(grid: np.ndarray, n: int, T: float):
    """Grid indices of kT/n when they are grid points, else None."""
    m = grid.size - 1
    ratio = np.arange(n + 1) * (T / grid[-1]) * m / n
    idx = np.rint(ratio).astype(np.int64)
    if np.all(np.abs(ratio - idx) <= 1e-9):
        return idx
    return None


def project_values(values: np.ndarray, grid: np.ndarray, n: int, T: float) -> np.ndarray:
    """Piecewise-linear interpolation through the nodes kT/n, original after T.

    Works on (..., m+1, d) arrays.  Node values are copied, never
    recomputed, when the nodes are grid points.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    if not 0 < T <= grid[-1] + 1e-12:
        raise InputError("projection horizon must lie in (0, horizon]")
    idx = _projection_nodes(grid, n, T)
    if idx is not None:
        nodes_t = grid[idx]
        nodes_v = values[..., idx, :]
    else:
        nodes_t = np.arange(n + 1) * (T / n)
        nodes_v = _interp_last(values, grid, nodes_t)
        cells = np.searchsorted(grid, nodes_t, side="right") - 1
        cells = np.clip(cells, 0, grid.size - 2)
        err = np.max(np.linalg.norm(values[..., cells + 1, :] - values[..., cells, :], axis=-1))
        warnings.warn(f"projection nodes are not grid points; node values interpolated "
                      f"(error up to {err:.3g})", ProjectionWarning, stacklevel=3)
    keep = grid <= nodes_t[-1] + 1e-12
    out = np.array(values, dtype=float, copy=True)
    out[..., keep, :] = _interp_last(nodes_v, nodes_t, grid[keep])
    return out


def _interp_last(values: np.ndarray, xp: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Interpolate along the time axis (-2) of (..., len(xp), d) at x."""
    j = np.clip(np.searchsorted(xp, x, side="right") - 1, 0, xp.size - 2)
    x0, x1 = xp[j], xp[j + 1]
    th = np.clip((x - x0) / (x1 - x0), 0.0, 1.0)
    a = values[..., j, :]
    b = values[..., j + 1, :]
    out = a + th[:, None] * (b - a)
    # exact node values where x hits a node
    hit = th == 0.0
    out[..., hit, :] = a[..., hit, :]
    hit = th == 1.0
    out[..., hit, :] = b[..., hit, :]
    return out


def pl_project(p: DiscretePath, n: int, T: float | None = None) -> DiscretePath:
    """Piecewise-linear interpolation of p at kT/n, k = 0..n; unchanged after T."""
    T = p.horizon if T is None else float(T)
    return DiscretePath(p.horizon, project_values(p.values, p.grid, n, T))


# -- path functionals --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PathFunctional:
    """Bounded functional of paths on [0, horizon].

    ``fn(values, grid)`` maps (B, m+1, d) arrays to (B,).  ``bound`` is the
    asserted sup |X| and is checked on every evaluation.  ``cylinder_times``
    lists the only times X reads, when X is a cylinder functional.
    """

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    bound: float
    horizon: float = 1.0
    name: str = "X"
    cylinder_times: tuple | None = None
    lipschitz: float | None = None

    def __post_init__(self):
        if not self.bound >= 0 or not math.isfinite(self.bound):
            raise InputError("bound must be a finite nonnegative number")

    def batch(self, values: np.ndarray, grid: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:
            values = values[None]
        out = np.asarray(self.fn(values, grid), dtype=float).reshape(values.shape[0])
        if not np.all(np.isfinite(out)):
            raise InputError(f"{self.name} is not finite on some path")
        if np.any(np.abs(out) > self.bound * (1 + 1e-12) + 1e-12):
            raise InputError(f"{self.name} exceeds its declared bound {self.bound}")
        return out

    def __call__(self, path: DiscretePath) -> float:
        return float(self.batch(path.values, path.grid)[0])


def _mask(grid, until):
    return grid <= (np.inf if until is None else until) + 1e-12


def sup_capped(cap: float = 1.0, until: float = 1.0) -> PathFunctional:
    """X(omega) = min(max_{t <= until} |omega_t|, cap)."""

    def fn(values, grid):
        keep = _mask(grid, until)
        return np.minimum(np.linalg.norm(values[:, keep, :], axis=-1).max(axis=1), cap)

    return PathFunctional(fn, cap, until, f"min(sup|w|,{cap:g})", lipschitz=1.0)


def sup_indicator(level: float = 1.0, until: float | None = None) -> PathFunctional:
    """X(omega) = 1{max_{t <= until} |omega_t| > level}."""

    def fn(values, grid):
        keep = _mask(grid, until)
        return (np.linalg.norm(values[:, keep, :], axis=-1).max(axis=1) > level).astype(float)

    return PathFunctional(fn, 1.0, until or 1.0, f"1{{sup|w|>{level:g}}}")


def constant(c: float, horizon: float = 1.0) -> PathFunctional:
    def fn(values, grid):
        return np.full(values.shape[0], float(c))

    return PathFunctional(fn, abs(float(c)), horizon, f"const({c:g})", cylinder_times=(),
                          lipschitz=0.0)


def cylinder(payoff: Callable, times: Sequence[float], bound: float, horizon: float | None = None
             ) -> PathFunctional:
    """X(omega) = payoff(omega(t_1), ..., omega(t_n)) read at grid times."""
    times = tuple(float(t) for t in times)

    def fn(values, grid):
        idx = np.searchsorted(grid, np.array(times) - 1e-9)
        if np.any(idx >= grid.size) or np.any(np.abs(grid[idx] - times) > 1e-9):
            raise InputError("cylinder times are not on the path grid")
        return np.asarray(payoff(values[:, idx, :].reshape(values.shape[0], -1)), dtype=float)

    return PathFunctional(fn, bound, horizon or max(times), getattr(payoff, "source_text", "phi"),
                          cylinder_times=times)


# -- Lipschitz mollification ------------------------------------------------------------

def _distances(omega: np.ndarray, cand: np.ndarray, k: int) -> np.ndarray:
    """(B, C) sup distances over the first k grid points."""
    if k == 0:
        return np.zeros((omega.shape[0], cand.shape[0]))
    o = omega[:, None, :k, :]
    c = cand[None, :, :k, :]
    if omega.shape[-1] == 1:
        return np.max(np.abs(o[..., 0] - c[..., 0]), axis=-1)
    return np.max(np.linalg.norm(o - c, axis=-1), axis=-1)


def mollify_batch(X: PathFunctional, n: float, omega: np.ndarray, grid: np.ndarray,
                  candidates: np.ndarray, x_candidates: np.ndarray | None = None,
                  chunk: int = 256) -> np.ndarray:
    """min_c X(c) + n * max_{t <= min(n, T)} |omega_t - c_t| for each row of omega.

    ``candidates`` is (C, m+1, d) shared by all rows, or (B, C, m+1, d) with
    one candidate set per row.  The path itself is always a candidate, so
    the result never exceeds X(omega).
    """
    omega = np.asarray(omega, dtype=float)
    cand = np.asarray(candidates, dtype=float)
    k = _until_index(grid, min(float(n), float(grid[-1])))
    own = X.batch(omega, grid)
    out = own.copy()
    if cand.ndim == 3:
        xc = X.batch(cand, grid) if x_candidates is None else np.asarray(x_candidates)
        for s in range(0, omega.shape[0], chunk):
            dist = _distances(omega[s:s + chunk], cand, k)
            out[s:s + chunk] = np.minimum(out[s:s + chunk], np.min(xc[None, :] + n * dist, axis=1))
        return out
    B, C = cand.shape[:2]
    xc = X.batch(cand.reshape(B * C, *cand.shape[2:]), grid).reshape(B, C) \
        if x_candidates is None else np.asarray(x_candidates)
    o = omega[:, None, :k, :]
    c = cand[:, :, :k, :]
    dist = np.max(np.abs(o[..., 0] - c[..., 0]), axis=-1) if omega.shape[-1] == 1 \
        else np.max(np.linalg.norm(o - c, axis=-1), axis=-1)
    return np.minimum(out, np.min(xc + n * dist, axis=1))


def lip_mollify(X: PathFunctional, n: float, candidates: Sequence[DiscretePath],
                omega: DiscretePath) -> float:
    """Inf-convolution of X over a finite candidate set (omega is added to it)."""
    if n <= 0:
        raise InputError("n must be positive")
    for c in candidates:
        if not same_grid(c, omega):
            raise InputError("candidates must share the grid of omega")
    cand = np.stack([c.values for c in candidates]) if candidates else \
        np.empty((0,) + omega.values.shape)
    if cand.shape[0] == 0:
        return X(omega)
    return float(mollify_batch(X, n, omega.values[None], omega.grid, cand)[0])


def perturbation_candidates(omega: DiscretePath, count: int, scale: float, seed: int = 0
                            ) -> list[DiscretePath]:
    """omega plus seeded random-walk perturbations of size about ``scale``."""
    rng = np.random.default_rng(seed)
    m, d = omega.m, omega.d
    out = []
    for _ in range(count):
        steps = rng.standard_normal((m, d)) * scale / math.sqrt(m)
        walk = np.concatenate([np.zeros((1, d)), np.cumsum(steps, axis=0)])
        out.append(DiscretePath(omega.horizon, omega.values + walk))
    return out


# -- CSV I/O --------------------------------------------------------------------

def save_path_csv(path: DiscretePath, file) -> None:
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{j + 1}" for j in range(path.d)])
        for t, row in zip(path.grid, path.values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def load_path_csv(file) -> DiscretePath:
    """Read a path written as columns t, x1, ..., xd on a uniform grid."""
    try:
        with open(file, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read path file {file}: {exc.strerror}") from None
    if len(rows) < 3:
        raise InputError("path file needs a header and at least two rows")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise InputError(f"path file has a non-numeric entry: {exc}") from None
    t = data[:, 0]
    m = t.size - 1
    if t[0] != 0.0 or not np.allclose(t, np.linspace(0.0, t[-1], m + 1), rtol=0, atol=1e-9 * max(1, t[-1])):
        raise InputError("path times must be a uniform grid starting at 0")
    return DiscretePath(float(t[-1]), data[:, 1:])


# -- approximation pipeline --------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    """Budgets for ``lip_approx_pipeline``.

    ``steps`` is the simulation grid on [0, horizon] (projections use
    n0 = 1, 2, 4, ... up to ``steps``, so a power of two is natural).
    """

    steps: int = 256
    n_paths: int = 2048
    n_validate: int = 4096
    bank_size: int = 64
    mu_schedule: tuple = (1, 2, 4, 8, 16, 32, 64)
    level: int = 1
    eta_safety: float = 0.999
    seed: int = 0
    sampler: str = "sobol"

    def __post_init__(self):
        if self.steps < 1 or self.n_paths < 2 or self.n_validate < 2 or self.bank_size < 0:
            raise InputError("pipeline budgets must be positive")
        if not self.mu_schedule or min(self.mu_schedule) <= 0:
            raise InputError("mu_schedule must hold positive scales")
        if not 0 < self.eta_safety <= 1:
            raise InputError("eta_safety must lie in (0, 1]")


@dataclass
class PipelineReport:
    eps: float
    bound: float
    horizon: float
    mu: float | None = None
    n0: int | None = None
    radius: float | None = None
    eta: float | None = None
    stage1: dict = field(default_factory=dict)
    stage2: dict = field(default_factory=dict)
    stage3: dict = field(default_factory=dict)
    final: dict = field(default_factory=dict)
    trials: list = field(default_factory=list)
    success: bool = False
    note: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _dyadic(steps: int) -> list[int]:
    out, n = [], 1
    while n < steps:
        out.append(n)
        n *= 2
    return out + [steps]


class _Mollifier:
    """X-bar at scale mu with candidates = shared bank + the path's own projections."""

    def __init__(self, X: PathFunctional, grid: np.ndarray, bank: np.ndarray, levels: list[int]):
        self.X = X
        self.grid = grid
        self.bank = bank
        self.levels = levels
        self.x_bank = X.batch(bank, grid) if bank.shape[0] else np.empty(0)
        self.T = float(grid[-1])

    def own_candidates(self, values: np.ndarray, up_to: int | None = None) -> np.ndarray:
        levels = [n for n in self.levels if up_to is None or n <= up_to]
        return np.stack([project_values(values, self.grid, n, self.T) for n in levels], axis=1)

    def __call__(self, values: np.ndarray, mu: float, up_to: int | None = None) -> np.ndarray:
        own = self.own_candidates(values, up_to)
        out = mollify_batch(self.X, mu, values, self.grid, own)
        if self.bank.shape[0]:
            out = np.minimum(out, mollify_batch(self.X, mu, values, self.grid, self.bank,
                                                self.x_bank))
        return out


def _table(values_by_scen, groups, replicates):
    from .engine import mean_and_se

    rows = [mean_and_se(v, groups[i], replicates) for i, v in enumerate(values_by_scen)]
    i = int(np.argmax([r[0] for r in rows]))
    return rows[i][0], rows[i][1], i


def lip_approx_pipeline(X: PathFunctional, eps: float, spec, config: PipelineConfig | None = None,
                        family=None):
    """Finite-dimensional Y with estimated upper expectation of |X - Y| at most eps.

    Stages: (i) mollify X at the first scale mu in the schedule whose sampled
    upper expectation of X - X-bar is below eps/3; (ii) pick a sup-norm
    radius R (bisection, half the capacity budget) and the smallest dyadic
    n0 for which K = {|omega| <= R, |omega - omega^(n0)| <= eta},
    eta = eps / (3 mu), has sampled capacity of its complement at most
    eps / (6 M); (iii) check sup over sampled K of |X-bar - Y| < eps/3 for
    Y = X-bar(omega^(n0)).  The final estimate uses fresh paths.

    Returns ``(Y, report)``; raises BudgetExhaustedError with the achieved
    bound when a stage cannot meet its share.
    """
    from .engine import induce_measure, mean_and_se, piecewise_family

    cfg = config or PipelineConfig()
    if not eps > 0:
        raise InputError("eps must be positive")
    M = float(X.bound)
    T = float(X.horizon)
    report = PipelineReport(float(eps), M, T)
    grid = np.linspace(0.0, T, cfg.steps + 1)
    levels = _dyadic(cfg.steps)

    # already finite-dimensional on the projection nodes
    if X.cylinder_times is not None or M == 0.0:
        times = X.cylinder_times or ()
        for n0 in levels:
            node = np.arange(n0 + 1) * (T / n0)
            if all(np.min(np.abs(node - t)) <= 1e-9 for t in times):
                report.n0, report.mu = n0, None
                report.final = {"estimate": 0.0, "std_error": 0.0}
                report.success = True
                report.note = "X reads only projection nodes; Y = X"
                return X, report

    if family is None:
        family = piecewise_family(spec.cov, [T], level=cfg.level, refine=cfg.steps)
    if any(np.max(np.abs(s.step_times - grid)) > 1e-12 if s.step_times.size == grid.size else True
           for s in family):
        raise InputError("family step times must be the pipeline grid")
    seeds = [int(c.generate_state(1)[0]) for c in np.random.SeedSequence(cfg.seed).spawn(3)]
    design = [induce_measure(s, spec, cfg.n_paths, seeds[0], cfg.sampler) for s in family]
    validate = [induce_measure(s, spec, cfg.n_validate, seeds[1], cfg.sampler) for s in family]
    bank = np.empty((0, grid.size, spec.d))
    if cfg.bank_size:
        per = -(-cfg.bank_size // len(family))
        pool = [induce_measure(s, spec, per, seeds[2], "pseudo").values[:per] for s in family]
        bank = np.concatenate(pool)[:cfg.bank_size]
    moll = _Mollifier(X, grid, bank, levels)
    groups = [b.groups for b in design]
    R_ = design[0].replicates
    x_design = [X.batch(b.values, grid) for b in design]

    # (i) mollification scale
    xbar = None
    for mu in cfg.mu_schedule:
        xb = [moll(b.values, mu) for b in design]
        est, se, i = _table([x - y for x, y in zip(x_design, xb)], groups, R_)
        report.trials.append({"stage": 1, "mu": mu, "estimate": est, "std_error": se})
        if est < eps / 3:
            report.mu, xbar = float(mu), xb
            report.stage1 = {"estimate": est, "std_error": se, "target": eps / 3, "argmax": i}
            break
    if xbar is None:
        best = min(t["estimate"] for t in report.trials)
        raise BudgetExhaustedError(
            f"no mollification scale in {cfg.mu_schedule} reaches eps/3 = {eps / 3:.4g} "
            f"(best {best:.4g})", achieved=best + 2 * eps / 3, report=report.to_dict())
    mu = report.mu

    # (ii) compact set: radius by bisection on half the capacity budget
    budget = eps / (6 * M)
    sup = [np.linalg.norm(b.values, axis=-1).max(axis=1) for b in design]

    def cap(masks):
        return _table([m.astype(float) for m in masks], groups, R_)

    lo, hi = 0.0, float(max(s.max() for s in sup))
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if cap([s > mid for s in sup])[0] <= budget / 2:
            hi = mid
        else:
            lo = mid
    R = hi
    eta = cfg.eta_safety * eps / (3 * mu)
    report.radius, report.eta = R, eta
    achieved = None
    for n0 in levels:
        proj = [project_values(b.values, grid, n0, T) for b in design]
        dev = [np.linalg.norm(b.values - p, axis=-1).max(axis=1) for b, p in zip(design, proj)]
        outside = [(s > R) | (v > eta) for s, v in zip(sup, dev)]
        c_est, c_se, _ = cap(outside)
        trial = {"stage": 2, "n0": n0, "capacity": c_est, "std_error": c_se, "budget": budget}
        report.trials.append(trial)
        if c_est > budget:
            continue
        y = [moll(p, mu, up_to=n0) for p in proj]
        dev3 = max(float(np.max(np.abs(a - b)[~o], initial=0.0)) for a, b, o in zip(xbar, y, outside))
        trial["stage3_sup"] = dev3
        if dev3 < eps / 3:
            report.n0 = n0
            report.stage2 = {"capacity": c_est, "std_error": c_se, "budget": budget, "radius": R}
            report.stage3 = {"sup_on_K": dev3, "lipschitz_bound": mu * eta, "target": eps / 3}
            break
        achieved = dev3
    if report.n0 is None:
        raise BudgetExhaustedError(
            f"no projection level up to {cfg.steps} meets the compact-set and projection budgets",
            achieved=achieved, report=report.to_dict())
    n0 = report.n0

    # final estimate on fresh paths
    def y_fn(values, g):
        if g.size != grid.size or np.max(np.abs(g - grid)) > 1e-12:
            raise InputError("Y is defined on the pipeline grid only")
        return moll(project_values(values, grid, n0, T), mu, up_to=n0)

    Y = PathFunctional(y_fn, M, T, f"Y[{X.name}; mu={mu:g}, n0={n0}]",
                       cylinder_times=tuple(np.arange(1, n0 + 1) * (T / n0)), lipschitz=mu)
    diffs = [np.abs(X.batch(b.values, grid) - Y.batch(b.values, grid)) for b in validate]
    est, se, i = _table(diffs, [b.groups for b in validate], validate[0].replicates)
    composite = report.stage1["estimate"] + report.stage3["sup_on_K"] + 2 * M * report.stage2["capacity"]
    report.final = {"estimate": est, "std_error": se, "argmax": family[i].label,
                    "composite_bound": composite, "n_paths": int(sum(len(b) for b in validate))}
    report.success = est <= eps
    if not report.success:
        raise BudgetExhaustedError(f"final estimate {est:.4g} exceeds eps = {eps:g}",
                                   achieved=est, report=report.to_dict())
    return Y, report

"""G-expectation of cylinder functionals and its scenario-measure representation.

``cylinder_expectation`` runs the backward recursion
E[phi(B_t1, ..., B_tn)] = E[E[phi(x_1, ..., x_{n-1}, x_{n-1} + (B_tn - B_tn-1))]_{x = B}]
on aligned grids.  The Monte Carlo side samples Gaussian paths whose
covariance rate is picked from the covariance set step by step (open loop)
or from the current state (feedback); the maximum over a finite family of
such scenarios is a lower estimate of the G-expectation.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats
from scipy.stats import qmc

from . import _grid
from .dsl import FunctionalSpec
from .errors import CapabilityError, EvaluationError, GrowthClassError, InputError
from .gnormal import GNormalSpec, _one_step_2d, leak_estimate, LEAK_TOL, stencils_1d
from .errors import GridTooNarrowError
from .sublinear import CovarianceSet, ScenarioFamily, scenario_sup

STATE_BUDGET = 20_000_000
PROPOSAL_SCALE = 1.5
IS_MAX_DIM = 8


@dataclass(frozen=True, eq=False)
class CylinderFunctional:
    """phi(B_t1, ..., B_tn) for strictly increasing positive times.

    ``payoff`` maps arrays of shape (..., n*d) to (...); a parsed
    FunctionalSpec or any vectorized callable.
    """

    times: tuple
    payoff: Callable
    d: int = 1
    label: str = ""

    def __post_init__(self):
        t = tuple(float(x) for x in np.atleast_1d(self.times))
        if not t:
            raise InputError("a cylinder functional needs at least one time")
        if t[0] <= 0 or any(b <= a for a, b in zip(t, t[1:])):
            raise InputError("times must be positive and strictly increasing")
        object.__setattr__(self, "times", t)
        if isinstance(self.payoff, FunctionalSpec):
            if self.payoff.arity != len(t) or self.payoff.d != self.d:
                raise InputError(
                    f"payoff arity/dimension ({self.payoff.arity}, {self.payoff.d}) does not match "
                    f"({len(t)} times, d = {self.d})")
        if not self.label:
            object.__setattr__(self, "label", getattr(self.payoff, "source_text", "") or "phi")

    @property
    def n(self) -> int:
        return len(self.times)

    def __call__(self, points):
        return np.asarray(self.payoff(points), dtype=float)


def _check_payoff(f: CylinderFunctional, allow_flagged: bool):
    p = f.payoff
    if isinstance(p, FunctionalSpec):
        if p.flagged and not allow_flagged:
            raise GrowthClassError(
                f"payoff {p.source_text!r} uses exp/sqrt (outside polynomial growth); "
                "pass allow_flagged=True to accept it")
        if p.declared_growth > 4:
            warnings.warn(f"declared growth degree {p.declared_growth} > 4: six-sigma grids may "
                          "not bound the truncation error", RuntimeWarning, stacklevel=3)


def _finite(vals: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(vals)):
        raise EvaluationError(f"{what} is not finite on the state grid")
    return vals


def cylinder_expectation(spec: GNormalSpec, f: CylinderFunctional, *, points: int | None = None,
                         allow_flagged: bool = False, state_budget: int = STATE_BUDGET) -> float:
    """G-expectation of a cylinder functional by backward nested recursion.

    All stages share one grid spacing h, so x_{k-1} + z lands exactly on the
    x_k grid.  The last stage evaluates the payoff directly; earlier stages
    look up the previous stage's values.  Grids hold ``width_sigmas`` upper
    standard deviations; the final grid has ``points`` nodes.
    """
    _check_payoff(f, allow_flagged)
    cov = spec.cov
    if cov.d != f.d:
        raise InputError(f"functional dimension {f.d} != covariance dimension {cov.d}")
    if cov.d > 2:
        raise CapabilityError("grid recursion supports d <= 2; use scenario_expectation "
                              "(Monte Carlo) for higher dimensions")
    if cov.d == 2:
        if f.n != 1:
            raise CapabilityError("d = 2 grid recursion supports a single observation time; "
                                  "use scenario_expectation (Monte Carlo) instead")
        return _one_step_2d(spec, lambda x: f(x), f.times[0], None, points).value
    sbar = cov.sigma_max
    if sbar == 0.0:
        return float(f(np.zeros(f.n)))
    points = points or spec.points
    times = np.array(f.times)
    steps = np.diff(np.concatenate([[0.0], times]))
    m_half = (points - 1) // 2
    h = spec.width_sigmas * sbar * math.sqrt(times[-1]) / m_half
    eps = 1e-9
    m_state = [int(math.ceil(spec.width_sigmas * sbar * math.sqrt(t) / h - eps)) for t in times]
    m_inc = [int(math.ceil(spec.width_sigmas * sbar * math.sqrt(s) / h - eps)) for s in steps]
    for k, s in enumerate(steps):
        leak = leak_estimate([sbar], s, [m_inc[k] * h])
        if leak > LEAK_TOL:
            raise GridTooNarrowError(f"increment grid {k} leaves mass {leak:.2e} outside", leak)
    sizes = [int(np.prod([2 * m_state[j] + 1 for j in range(k)])) * (2 * m_inc[k] + 1)
             for k in range(f.n)]
    if max(sizes) > state_budget:
        raise CapabilityError(
            f"grid recursion needs {max(sizes):,} states (> budget {state_budget:,}); lower "
            "`points` or use scenario_expectation (Monte Carlo)")

    def axis(m):
        return h * np.arange(-m, m + 1)

    n = f.n
    K = spec.substeps
    # last stage: frozen x_1..x_{n-1}, increment z
    z = axis(m_inc[-1])
    frozen = [axis(m_state[j]) for j in range(n - 1)]
    if n == 1:
        pts = z[:, None]
    else:
        mesh = np.meshgrid(*frozen, z, indexing="ij")
        coords = list(mesh[:-1]) + [mesh[-2] + mesh[-1]]
        pts = np.stack(coords, axis=-1)
    V = _finite(np.asarray(f(pts), dtype=float).reshape(pts.shape[:-1]), "payoff")
    V = _reduce_increment(V, spec, steps[-1] / K, h, K)
    # earlier stages: V has axes (x_1..x_k); rebuild g(x_1..x_{k-1}, z) = V(..., x_{k-1} + z)
    for k in range(n - 1, 0, -1):
        zi = np.arange(-m_inc[k - 1], m_inc[k - 1] + 1)
        if k == 1:
            idx = np.clip(zi + m_state[0], 0, 2 * m_state[0])
            g = V[idx]
        else:
            prev = np.arange(-m_state[k - 2], m_state[k - 2] + 1)
            idx = np.clip(prev[:, None] + zi[None, :] + m_state[k - 1], 0, 2 * m_state[k - 1])
            idx = np.broadcast_to(idx, V.shape[:-1] + (zi.size,))
            g = np.take_along_axis(V, idx, axis=-1)
        V = _reduce_increment(g, spec, steps[k - 1] / K, h, K)
    return float(V)


def _reduce_increment(values, spec, delta, h, K):
    """Transform along the last axis and read the value at zero increment."""
    first, st = stencils_1d(spec.cov, delta, h, spec)
    out = _grid.transform(values, st, K, 1, first=first)
    return out[..., out.shape[-1] // 2]


# -- scenarios ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VolatilityScenario:
    """Piecewise-constant choice of covariance on a time partition.

    Either ``gammas`` (one covariance index per step, open loop) or
    ``policy`` (``policy(step, state) -> index array`` reading the current
    state, feedback) must be given.
    """

    step_times: np.ndarray
    gammas: tuple | None = None
    policy: Callable | None = None
    label: str = ""

    def __post_init__(self):
        st = np.asarray(self.step_times, dtype=float)
        if st.ndim != 1 or st.size < 2 or st[0] != 0.0 or np.any(np.diff(st) <= 0):
            raise InputError("step_times must start at 0 and increase strictly")
        st.setflags(write=False)
        object.__setattr__(self, "step_times", st)
        if (self.gammas is None) == (self.policy is None):
            raise InputError("give exactly one of gammas (open loop) or policy (feedback)")
        if self.gammas is not None:
            g = tuple(int(i) for i in self.gammas)
            if len(g) != st.size - 1:
                raise InputError(f"{len(g)} covariance choices for {st.size - 1} steps")
            object.__setattr__(self, "gammas", g)
        if not self.label:
            lab = "feedback" if self.gammas is None else "[" + ",".join(map(str, _runs(self.gammas))) + "]"
            object.__setattr__(self, "label", lab)

    @property
    def steps(self) -> int:
        return self.step_times.size - 1

    def validate(self, cov: CovarianceSet):
        if self.gammas is not None and any(i < 0 or i >= len(cov) for i in self.gammas):
            raise InputError(f"scenario {self.label} uses an index outside the covariance set")

    def time_indices(self, times) -> np.ndarray:
        """Grid indices of the given times; they must be partition points."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        idx = np.searchsorted(self.step_times, times - 1e-9)
        ok = (idx < self.step_times.size) & (
            np.abs(self.step_times[np.minimum(idx, self.step_times.size - 1)] - times) <= 1e-9)
        if not np.all(ok):
            raise InputError("scenario step_times do not cover all observation times")
        return idx


def _runs(gammas):
    """Compact label: choice per run of equal indices."""
    return [g for g, _ in itertools.groupby(gammas)]


@dataclass(frozen=True, eq=False)
class GridPolicy:
    """Feedback rule from a DP grid: nearest-node choice per forward step."""

    grid: np.ndarray
    choices: tuple  # one int array per forward step, aligned with grid

    def __call__(self, step: int, state: np.ndarray) -> np.ndarray:
        x = state[:, 0]
        h = self.grid[1] - self.grid[0]
        i = np.clip(np.rint((x - self.grid[0]) / h).astype(np.int64), 0, self.grid.size - 1)
        return self.choices[step][i]


def refined_grid(times: Sequence[float], refine: int) -> np.ndarray:
    """Uniform refinement of [0, t_1, ..., t_n] by ``refine`` per interval."""
    knots = np.concatenate([[0.0], np.asarray(times, dtype=float)])
    pieces = [np.linspace(a, b, refine + 1)[:-1] for a, b in zip(knots[:-1], knots[1:])]
    return np.concatenate(pieces + [knots[-1:]])


def constant_family(cov: CovarianceSet, times: Sequence[float], refine: int = 4) -> ScenarioFamily:
    """One scenario per covariance, held for the whole horizon."""
    grid = refined_grid(times, refine)
    gens = [VolatilityScenario(grid, gammas=(g,) * (grid.size - 1), label=f"const[{g}]")
            for g in range(len(cov))]
    return ScenarioFamily(gens, label="constant", meta={"level": 0, "refine": refine})


def piecewise_family(cov: CovarianceSet, times: Sequence[float], level: int = 1, refine: int = 4,
                     budget: int = 256, seed: int = 0) -> ScenarioFamily:
    """Open-loop scenarios switching 2**level times per observation interval.

    All choice sequences are enumerated when there are at most ``budget``;
    otherwise the constant scenarios plus a seeded random subsample.  Level
    0 is the constant family.
    """
    if level < 0:
        raise InputError("level must be >= 0")
    per = 2 ** level
    r = max(refine, per)
    r = int(math.ceil(r / per) * per)
    grid = refined_grid(times, r)
    n_pieces = len(times) * per
    block = r // per
    S = len(cov)
    total = S ** n_pieces
    if total <= budget:
        combos = list(itertools.product(range(S), repeat=n_pieces))
    else:
        rng = np.random.default_rng(seed)
        seen = {(g,) * n_pieces for g in range(S)}
        combos = sorted(seen)
        while len(combos) < budget:
            c = tuple(int(i) for i in rng.integers(0, S, n_pieces))
            if c not in seen:
                seen.add(c)
                combos.append(c)
    gens = []
    for c in combos:
        gammas = tuple(c[k // block] for k in range(grid.size - 1))
        gens.append(VolatilityScenario(grid, gammas=gammas, label="pc[" + ",".join(map(str, c)) + "]"))
    return ScenarioFamily(gens, label=f"piecewise-L{level}",
                          meta={"level": level, "refine": r, "enumerated": total <= budget})


def dp_feedback_scenario(spec: GNormalSpec, f: CylinderFunctional, points: int | None = None
                         ) -> VolatilityScenario:
    """Feedback scenario read off the argmax of the grid recursion (d = 1, one time)."""
    from .gnormal import one_step_expectation

    if spec.d != 1 or f.n != 1:
        raise CapabilityError("DP feedback policies are available for d = 1 and a single time")
    res = one_step_expectation(spec, lambda x: f(x), f.times[0], points=points,
                               error_estimate=False, record_policy=True)
    K = spec.substeps
    x = res.policy[0][0]
    backward = [c for _, c in res.policy]
    forward = tuple(backward[K - 1 - k] for k in range(K))
    grid = np.linspace(0.0, f.times[0], K + 1)
    return VolatilityScenario(grid, policy=GridPolicy(x, forward), label="dp-feedback")


# -- path sampling --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PathSample:
    times: np.ndarray
    values: np.ndarray  # (m+1, d), values[0] == 0
    seed: int


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Paths sampled under one scenario; ``groups`` label independent replicates."""

    times: np.ndarray
    values: np.ndarray  # (P, m+1, d)
    seed: int
    groups: np.ndarray
    replicates: int
    label: str = ""
    weights: np.ndarray | None = None  # importance weights, None means equal

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, i) -> PathSample:
        return PathSample(self.times, self.values[i], self.seed)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def at(self, times) -> np.ndarray:
        """Values at the given partition times, shape (P, n*d)."""
        idx = np.searchsorted(self.times, np.asarray(times, dtype=float) - 1e-9)
        if np.any(idx >= self.times.size) or np.any(np.abs(self.times[idx] - times) > 1e-9):
            raise InputError("observation times are not on the path grid")
        return self.values[:, idx, :].reshape(len(self), -1)


SOBOL_MAX_DIM = 21201


def rqmc_size(n_paths: int, replicates: int = 16) -> int:
    """Path count actually drawn by the Sobol' sampler: replicates * 2**k >= n_paths."""
    per = max(1, -(-n_paths // replicates))
    return replicates * (1 << (per - 1).bit_length())


def standard_normals(n_paths: int, dim: int, seed: int, sampler: str = "sobol",
                     replicates: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Standard normal draws of shape (N, dim) and replicate labels.

    ``"sobol"`` uses independently scrambled Sobol' sequences (randomized
    quasi-Monte Carlo) mapped through the normal quantile.  Each replicate
    holds a full power-of-two block so N = ``rqmc_size(n_paths)``, which may
    exceed ``n_paths``.  ``"pseudo"`` uses a PCG64 generator and N = n_paths.
    """
    if n_paths < 1:
        raise InputError("n_paths must be >= 1")
    if sampler not in ("sobol", "pseudo"):
        raise InputError(f"unknown sampler {sampler!r}")
    if sampler == "sobol" and dim <= SOBOL_MAX_DIM:
        per = rqmc_size(n_paths, replicates) // replicates
        blocks = []
        for child in np.random.SeedSequence(seed).spawn(replicates):
            eng = qmc.Sobol(dim, scramble=True, seed=np.random.default_rng(child))
            blocks.append(eng.random_base2(per.bit_length() - 1))
        u = np.clip(np.concatenate(blocks), 1e-16, 1.0 - 1e-16)
        return stats.norm.ppf(u), np.repeat(np.arange(replicates), per)
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n_paths, dim)), np.arange(n_paths) % replicates


def induce_measure(scenario: VolatilityScenario, spec: GNormalSpec | CovarianceSet, n_paths: int,
                   seed: int, sampler: str = "sobol", replicates: int = 16) -> PathBatch:
    """Sample paths with independent Gaussian increments of covariance delta_k * gamma_k."""
    cov = spec.cov if isinstance(spec, GNormalSpec) else spec
    scenario.validate(cov)
    d = cov.d
    m = scenario.steps
    dts = np.diff(scenario.step_times)
    Z, groups = standard_normals(n_paths, m * d, seed, sampler, replicates)
    n_paths = Z.shape[0]
    Z = Z.reshape(n_paths, m, d)
    L = cov.sqrt_matrices
    if scenario.gammas is not None:
        Ls = L[np.array(scenario.gammas)] * np.sqrt(dts)[:, None, None]
        incr = np.einsum("pmj,mij->pmi", Z, Ls)
        values = np.concatenate([np.zeros((n_paths, 1, d)), np.cumsum(incr, axis=1)], axis=1)
    else:
        values = np.zeros((n_paths, m + 1, d))
        for k in range(m):
            idx = np.asarray(scenario.policy(k, values[:, k, :]), dtype=np.int64)
            if np.any(idx < 0) or np.any(idx >= len(cov)):
                raise InputError("feedback policy returned an invalid covariance index")
            values[:, k + 1, :] = values[:, k, :] + math.sqrt(dts[k]) * np.einsum(
                "pj,pij->pi", Z[:, k, :], L[idx])
    return PathBatch(scenario.step_times, values, seed, groups, replicates, scenario.label)


def observation_batch(scenario: VolatilityScenario, spec: GNormalSpec | CovarianceSet,
                      times: Sequence[float], n_paths: int, seed: int, sampler: str = "sobol",
                      replicates: int = 16, proposal_scale: float = PROPOSAL_SCALE) -> PathBatch:
    """Exact samples of (B_t1, ..., B_tn) under an open-loop scenario.

    Increments between observation times are Gaussian with the summed
    covariance, so only n*d normal coordinates are drawn.  The normals come
    from a proposal widened by ``proposal_scale`` and carry likelihood-ratio
    weights, which tames polynomial payoffs in the tails of the sample; the
    widening is skipped above IS_MAX_DIM coordinates.  Feedback scenarios
    fall back to full path simulation.
    """
    if scenario.gammas is None:
        return induce_measure(scenario, spec, n_paths, seed, sampler, replicates)
    cov = spec.cov if isinstance(spec, GNormalSpec) else spec
    scenario.validate(cov)
    idx = scenario.time_indices(times)
    knots = np.concatenate([[0], idx])
    dts = np.diff(scenario.step_times)
    g = np.array(scenario.gammas)
    d = cov.d
    dim = len(idx) * d
    Z, groups = standard_normals(n_paths, dim, seed, sampler, replicates)
    weights = None
    if proposal_scale != 1.0 and dim <= IS_MAX_DIM:
        Z = proposal_scale * Z
        logw = dim * math.log(proposal_scale) - 0.5 * (1.0 - proposal_scale ** -2) * np.sum(Z * Z, axis=1)
        weights = np.exp(logw)
    n_paths = Z.shape[0]
    Z = Z.reshape(n_paths, len(idx), d)
    values = np.zeros((n_paths, len(idx) + 1, d))
    for k, (a, b) in enumerate(zip(knots[:-1], knots[1:])):
        C = np.einsum("j,jab->ab", dts[a:b], cov.matrices[g[a:b]])
        w, v = np.linalg.eigh(0.5 * (C + C.T))
        L = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
        values[:, k + 1, :] = values[:, k, :] + Z[:, k, :] @ L.T
    obs = np.concatenate([[0.0], scenario.step_times[idx]])
    return PathBatch(obs, values, seed, groups, replicates, scenario.label, weights)


def mean_and_se(vals: np.ndarray, groups: np.ndarray, replicates: int,
                weights: np.ndarray | None = None) -> tuple[float, float]:
    """Mean with a standard error from the spread of replicate means.

    With ``weights`` each replicate mean is self-normalized, so constants
    are reproduced exactly.
    """
    vals = np.asarray(vals, dtype=float)
    n = vals.size
    if n == 1:
        return float(vals[0]), 0.0
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    sums = np.bincount(groups, weights=w * vals, minlength=replicates)
    mass = np.bincount(groups, weights=w, minlength=replicates)
    counts = np.bincount(groups, minlength=replicates)
    ok = counts > 0
    means = sums[ok] / mass[ok]
    share = counts[ok] / n
    mean = float(np.sum(share * means))
    if means.size < 2:
        return mean, float(vals.std(ddof=1) / math.sqrt(n))
    var = np.sum(share * share * (means - mean) ** 2) * means.size / (means.size - 1)
    return mean, float(math.sqrt(var))


def _payoff_values(f: CylinderFunctional, batch: PathBatch) -> np.ndarray:
    vals = f(batch.at(f.times))
    if not np.all(np.isfinite(vals)):
        raise EvaluationError("payoff is not finite on sampled paths")
    return vals


def scenario_expectation(f: CylinderFunctional, scenario: VolatilityScenario, spec: GNormalSpec,
                         n_paths: int, seed: int, sampler: str = "sobol") -> tuple[float, float]:
    """Linear expectation under one scenario measure: (estimate, standard error)."""
    batch = observation_batch(scenario, spec, f.times, n_paths, seed, sampler)
    return mean_and_se(_payoff_values(f, batch), batch.groups, batch.replicates, batch.weights)


def _family_seeds(family: ScenarioFamily, seed: int, crn: bool) -> list[int]:
    if crn:
        return [seed] * len(family)
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(len(family))]


def family_table(values_fn: Callable[[PathBatch], np.ndarray], family: ScenarioFamily,
                 spec: GNormalSpec, n_paths: int, seed: int, sampler: str = "sobol",
                 crn: bool = True, times: Sequence[float] | None = None) -> list[dict]:
    """Per-scenario Monte Carlo means of ``values_fn`` over induced paths.

    With ``crn`` every scenario reuses the same normal draws (common random
    numbers), so nested families give nested estimates.  If ``times`` is
    given, only the values at those times are sampled.
    """
    rows = []
    for i, (scen, s) in enumerate(zip(family, _family_seeds(family, seed, crn))):
        if times is None:
            batch = induce_measure(scen, spec, n_paths, s, sampler)
        else:
            batch = observation_batch(scen, spec, times, n_paths, s, sampler)
        est, se = mean_and_se(values_fn(batch), batch.groups, batch.replicates, batch.weights)
        rows.append({"scenario": i, "label": scen.label, "estimate": est, "std_error": se})
    return rows


@dataclass
class GapReport:
    dp_value: float
    mc_max: float
    mc_std_error: float
    argmax: int
    argmax_label: str
    gap: float
    lower_bound: float
    rows: list = field(repr=False)

    @property
    def lower_ok(self) -> bool:
        return self.gap >= self.lower_bound

    def to_dict(self) -> dict:
        return {"dp_value": self.dp_value, "mc_max": self.mc_max, "std_error": self.mc_std_error,
                "argmax": self.argmax, "argmax_label": self.argmax_label, "gap": self.gap,
                "lower_bound": self.lower_bound, "lower_ok": self.lower_ok, "rows": self.rows}


def representation_gap(f: CylinderFunctional, family: ScenarioFamily, spec: GNormalSpec,
                       n_paths: int, seed: int, *, sampler: str = "sobol", crn: bool = True,
                       interp_tol: float = 1e-3, dp_value: float | None = None) -> GapReport:
    """Grid G-expectation minus the best scenario Monte Carlo estimate.

    The gap must not fall below ``-3 (std_error + interp_tol)``.
    """
    if dp_value is None:
        dp_value = cylinder_expectation(spec, f)
    rows = family_table(lambda b: _payoff_values(f, b), family, spec, n_paths, seed, sampler, crn,
                        times=f.times)
    best, i = scenario_sup(family, [r["estimate"] for r in rows])
    se = rows[i]["std_error"]
    return GapReport(dp_value, best, se, i, rows[i]["label"], dp_value - best,
                     -3.0 * (se + interp_tol), rows)


@dataclass
class MomentCheck:
    s: float
    t: float
    p: float
    computed: float
    analytic: float
    rel_error: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def increment_payoff(a, p: float, two_times: bool) -> Callable:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    d = a.size

    def phi(x):
        x = np.asarray(x, dtype=float)
        inc = x[..., d:2 * d] - x[..., :d] if two_times else x[..., :d]
        return np.abs(inc @ a) ** p

    phi.__name__ = f"|(a, dB)|^{p:g}"
    return phi


def increment_moment_check(spec: GNormalSpec, s: float, t: float, a, p: float,
                           points: int | None = None) -> MomentCheck:
    """Grid value of E[|(a, B_t - B_s)|^p] against the closed-form moment."""
    from .gnormal import abs_moment

    if not 0 <= s < t:
        raise InputError("need 0 <= s < t")
    a = np.atleast_1d(np.asarray(a, dtype=float))
    two = s > 0
    times = (s, t) if two else (t,)
    f = CylinderFunctional(times, increment_payoff(a, p, two), d=spec.d)
    computed = cylinder_expectation(spec, f, points=points)
    analytic = abs_moment(spec, a, p) * (t - s) ** (p / 2.0)
    rel = abs(computed - analytic) / abs(analytic) if analytic else abs(computed)
    return MomentCheck(s, t, p, computed, analytic, rel)


# -- events, capacities, norms ----------------------------------------------------

def max_abs_exceeds(level: float, until: float | None = None) -> Callable[[PathBatch], np.ndarray]:
    """Event {max over path nodes up to ``until`` of |B_t| > level}."""

    def event(batch: PathBatch) -> np.ndarray:
        keep = batch.times <= (until if until is not None else np.inf) + 1e-12
        norms = np.linalg.norm(batch.values[:, keep, :], axis=-1)
        return norms.max(axis=1) > level

    event.__name__ = f"max|B| > {level:g}"
    return event


def always(batch: PathBatch) -> np.ndarray:
    return np.ones(len(batch), dtype=bool)


def never(batch: PathBatch) -> np.ndarray:
    return np.zeros(len(batch), dtype=bool)


def capacity_estimate(event: Callable[[PathBatch], np.ndarray], family: ScenarioFamily,
                      spec: GNormalSpec, n_paths: int, seed: int, sampler: str = "sobol",
                      crn: bool = True) -> tuple[float, list[dict]]:
    """Upper probability of a path event: (max over the family, per-scenario table)."""

    def indicator(batch):
        hit = np.asarray(event(batch))
        if hit.shape != (len(batch),):
            raise InputError("event must return one boolean per path")
        return hit.astype(float)

    rows = family_table(indicator, family, spec, n_paths, seed, sampler, crn)
    for r in rows:
        r["probability"] = r.pop("estimate")
    best, _ = scenario_sup(family, [r["probability"] for r in rows])
    return best, rows


@dataclass
class NormReport:
    p: float
    value: float
    upper_expectation: float
    std_error: float
    is_norm: bool
    rows: list = field(repr=False)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def lp_norm(f: CylinderFunctional, family: ScenarioFamily, spec: GNormalSpec, p: float,
            n_paths: int, seed: int, sampler: str = "sobol", full: bool = False):
    """(sup_P E_P |phi|^p)^(1/p) for p >= 1; for p < 1 the raw upper expectation,
    which is a distance rather than a norm."""
    if p <= 0:
        raise InputError("p must be positive")
    rows = family_table(lambda b: np.abs(_payoff_values(f, b)) ** p, family, spec, n_paths, seed,
                        sampler, times=f.times)
    best, i = scenario_sup(family, [r["estimate"] for r in rows])
    se = rows[i]["std_error"]
    if p >= 1:
        value = best ** (1.0 / p)
        se_v = se * (best ** (1.0 / p - 1.0) / p if best > 0 else 0.0)
    else:
        value, se_v = best, se
    if not full:
        return value
    return NormReport(p, value, best, se_v, p >= 1, rows)


# -- monotone convergence --------------------------------------------------------

@dataclass
class ConvergenceReport:
    values: list
    non_increasing: bool
    threshold: float | None
    below_threshold: bool | None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def default_sequence(n_terms: int = 8, cap: float | None = 1.0) -> list[Callable]:
    """phi_n(x) = min(|x|, cap) / n; ``cap=None`` gives |x| / n."""
    seq = []
    for n in range(1, n_terms + 1):
        def phi(x, n=n):
            a = np.abs(np.asarray(x)[..., 0])
            return (a if cap is None else np.minimum(a, cap)) / n
        phi.__name__ = f"|x|/{n}" if cap is None else f"min(|x|,{cap:g})/{n}"
        seq.append(phi)
    return seq


def monotone_convergence_demo(phi_seq: Sequence[Callable] | None, f_times: Sequence[float],
                              spec: GNormalSpec, threshold: float | None = None, *,
                              points: int | None = None, n_check: int = 2000, seed: int = 0,
                              tol: float = 1e-10) -> ConvergenceReport:
    """G-expectations of a pointwise non-increasing sequence of payoffs.

    The ordering phi_{n+1} <= phi_n is validated on random states before any
    expectation is computed.
    """
    if phi_seq is None:
        phi_seq = default_sequence()
    phi_seq = list(phi_seq)
    if not phi_seq:
        raise InputError("empty payoff sequence")
    times = tuple(f_times)
    d = spec.d
    rng = np.random.default_rng(seed)
    radius = spec.width_sigmas * spec.cov.sigma_max * math.sqrt(max(times))
    X = rng.uniform(-radius, radius, (n_check, len(times) * d))
    prev = np.asarray(phi_seq[0](X), dtype=float)
    for k, phi in enumerate(phi_seq[1:], start=1):
        cur = np.asarray(phi(X), dtype=float)
        if np.any(cur > prev + 1e-12):
            raise InputError(f"sequence is not non-increasing at term {k + 1}")
        prev = cur
    values = [cylinder_expectation(spec, CylinderFunctional(times, phi, d=d), points=points)
              for phi in phi_seq]
    non_inc = all(b <= a + tol for a, b in zip(values, values[1:]))
    below = None if threshold is None else values[-1] < threshold
    return ConvergenceReport(values, non_inc, threshold, below)


# -- diagnostics -----------------------------------------------------------------

@dataclass
class DPResult:
    value: float
    error_estimate: float
    points: int
    substeps: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def cylinder_expectation_report(spec: GNormalSpec, f: CylinderFunctional, *,
                                points: int | None = None, allow_flagged: bool = False) -> DPResult:
    """Grid value plus |v - v(half substeps)| + |v - v(half points)| as an error estimate."""
    points = points or (spec.points if spec.d == 1 else spec.points_2d)
    v = cylinder_expectation(spec, f, points=points, allow_flagged=allow_flagged)
    est = 0.0
    if spec.substeps >= 2:
        est += abs(v - cylinder_expectation(spec.with_(substeps=spec.substeps // 2), f,
                                            points=points, allow_flagged=allow_flagged))
    coarse = (points - 1) // 2 + 1
    coarse += 1 - coarse % 2
    est += abs(v - cylinder_expectation(spec, f, points=coarse, allow_flagged=allow_flagged))
    return DPResult(v, est, points, spec.substeps)


def random_payoff(rng: np.random.Generator, n: int, terms: int = 3) -> Callable:
    """Random convex-concave mix of hinge, absolute and quadratic terms in (x_1..x_n)."""
    A = rng.normal(size=(terms, n))
    c = rng.normal(size=terms)
    w = rng.normal(size=terms)
    q = rng.normal(size=n) * 0.3
    kind = rng.integers(0, 3, size=terms)

    def phi(x):
        x = np.asarray(x, dtype=float)
        z = x @ A.T - c
        parts = np.where(kind == 0, np.maximum(z, 0.0), np.where(kind == 1, np.abs(z), np.minimum(z, 1.0)))
        return parts @ w + (x * x) @ q

    return phi


def random_nonneg_payoff(rng: np.random.Generator, n: int) -> Callable:
    a = rng.normal(size=n)
    c = rng.normal()

    def psi(x):
        return np.abs(np.asarray(x, dtype=float) @ a - c)

    return psi


def dp_axiom_check(spec: GNormalSpec, times: Sequence[float], n_pairs: int = 50, seed: int = 0,
                   points: int | None = None, tol: float = 1e-8):
    """Axiom violations of the grid G-expectation over random payoff pairs.

    Pairs (phi, psi) share the time grid.  Monotonicity uses phi and
    phi + |linear| >= phi; constant preservation uses phi = c and the shift
    phi + c.
    """
    from .sublinear import AxiomReport

    rng = np.random.default_rng(seed)
    times = tuple(times)
    n = len(times) * spec.d
    if points is None:
        points = 201 if spec.d == 1 else spec.points_2d

    def E(fn):
        return cylinder_expectation(spec, CylinderFunctional(times, fn, d=spec.d), points=points)

    sub = hom = mono = const = 0.0
    for _ in range(n_pairs):
        phi = random_payoff(rng, n)
        psi = random_payoff(rng, n)
        nonneg = random_nonneg_payoff(rng, n)
        lam = float(rng.uniform(0.0, 5.0))
        c = float(rng.normal())
        e_phi, e_psi = E(phi), E(psi)
        sub = max(sub, E(lambda x: phi(x) + psi(x)) - e_phi - e_psi)
        hom = max(hom, abs(E(lambda x: lam * phi(x)) - lam * e_phi))
        mono = max(mono, e_phi - E(lambda x: phi(x) + nonneg(x)))
        const = max(const, abs(E(lambda x: np.full(np.shape(x)[:-1], c)) - c),
                    abs(E(lambda x: phi(x) + c) - e_phi - c))
    return AxiomReport(sub, hom, mono, const, n_pairs, tol)

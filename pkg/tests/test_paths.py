import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gexpect import (BudgetExhaustedError, CovarianceSet, GNormalSpec, InputError, PipelineConfig, parse)
from gexpect import paths as P
from gexpect.paths import DiscretePath

GRID_M = 16


def dyadic_path(rng, m=GRID_M, d=1, scale=1.0):
    # dyadic rationals keep every sum and product exact
    steps = rng.integers(-8, 9, size=(m, d)) / 8.0 * scale
    return DiscretePath(1.0, np.concatenate([np.zeros((1, d)), np.cumsum(steps, axis=0)]))


paths_st = st.integers(0, 2 ** 31 - 1).map(lambda s: dyadic_path(np.random.default_rng(s)))


# -- metric ---------------------------------------------------------------------------

def test_rho_examples():
    a = DiscretePath.from_function(lambda t: 0 * t, 1.0, 4)
    b = DiscretePath.from_function(lambda t: 0.5 * np.minimum(t, 1), 1.0, 4)
    assert float(P.rho_distance(a, a, 10)) == 0.0
    r = P.rho_distance(a, b, 3)
    assert r.value == pytest.approx(0.4375, abs=1e-15)
    assert r.tail_bound == 0.125
    far = DiscretePath(1.0, [[0.0], [5.0]])
    shifted = DiscretePath(1.0, [[0.0], [-5.0]])
    # differ by at least 1 on every [0, i] with i >= 1
    assert P.rho_distance(far, shifted, 12).value == pytest.approx(1 - 2 ** -12, abs=1e-15)


def test_rho_rejects_bad_input():
    a = DiscretePath(1.0, [[0.0], [1.0]])
    with pytest.raises(InputError):
        P.rho_distance(a, a, 0)
    with pytest.raises(InputError):
        P.rho_distance(a, DiscretePath(1.0, np.zeros((2, 2))), 3)


@given(paths_st, paths_st, paths_st)
def test_rho_metric(a, b, c):
    ab, ba = P.rho_distance(a, b, 8).value, P.rho_distance(b, a, 8).value
    assert ab == ba
    assert P.rho_distance(a, a, 8).value == 0.0
    if not np.array_equal(a.values, b.values):
        assert ab > 0
    assert ab <= P.rho_distance(a, c, 8).value + P.rho_distance(c, b, 8).value + 1e-12


def test_rho_mixed_grids():
    a = DiscretePath.from_function(lambda t: t, 2.0, 2)
    b = DiscretePath.from_function(lambda t: t, 2.0, 8)
    assert P.rho_distance(a, b, 5).value == 0.0


def test_sup_norm_cases():
    rng = np.random.default_rng(0)
    p = DiscretePath(1.0, np.concatenate([np.zeros((1, 3)), rng.standard_normal((8, 3))]))
    assert P.sup_norm(p, p) == 0.0
    v = np.array([1.0, -2.0, 2.0])
    q = DiscretePath(1.0, p.values + np.vstack([np.zeros(3), np.tile(v, (8, 1))]))
    assert P.sup_norm(p, q) == pytest.approx(3.0, rel=1e-15)
    r = DiscretePath(1.0, np.concatenate([np.zeros((1, 3)), rng.standard_normal((8, 3))]))
    brute = max(math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b))) for a, b in zip(p.values, r.values))
    assert P.sup_norm(p, r) == pytest.approx(brute, rel=1e-14)
    with pytest.raises(InputError):
        P.sup_norm(p, DiscretePath(1.0, np.zeros((5, 3))))


def test_sup_norm_until():
    a = DiscretePath(1.0, [[0.0], [1.0], [0.0], [5.0]])
    b = DiscretePath(1.0, np.zeros((4, 1)))
    assert P.sup_norm(a, b, until=2 / 3) == 1.0
    assert P.sup_norm(a, b) == 5.0


def test_path_validation():
    with pytest.raises(InputError):
        DiscretePath(1.0, [[1.0], [2.0]])
    with pytest.raises(InputError):
        DiscretePath(0.0, [[0.0], [2.0]])
    with pytest.raises(InputError):
        DiscretePath(1.0, [[0.0], [np.nan]])
    p = DiscretePath(1.0, [0.0, 1.0, 3.0])
    assert p.d == 1 and p.m == 2
    assert p.at([0.25, 0.75, 9.0])[:, 0] == pytest.approx([0.5, 2.0, 3.0])


# -- projection -------------------------------------------------------------------------

def test_projection_fixed_point():
    p = DiscretePath.from_function(lambda t: np.abs(t - 0.5), 1.0, 16)
    assert np.array_equal(P.pl_project(p, 2).values, p.values)


def test_projection_full_grid_identity():
    p = dyadic_path(np.random.default_rng(1))
    assert np.array_equal(P.pl_project(p, GRID_M).values, p.values)


def test_projection_parabola():
    p = DiscretePath.from_function(lambda t: t ** 2, 1.0, 64)
    q = P.pl_project(p, 2)
    assert q.at([0.0, 0.5, 1.0])[:, 0] == pytest.approx([0.0, 0.25, 1.0], abs=0)
    assert P.sup_norm(p, q) == pytest.approx(1 / 16, abs=1e-15)


@given(paths_st, st.sampled_from([1, 2, 4, 8, 16]))
def test_projection_idempotent(p, n):
    once = P.pl_project(p, n)
    assert np.array_equal(P.pl_project(once, n).values, once.values)


def test_projection_partial_horizon():
    p = DiscretePath.from_function(lambda t: t ** 2, 2.0, 8)
    q = P.pl_project(p, 1, T=1.0)
    assert np.array_equal(q.values[4:], p.values[4:])
    assert q.values[2, 0] == pytest.approx(0.5)


def test_projection_off_grid_warns():
    p = DiscretePath.from_function(lambda t: t ** 2, 1.0, 10)
    with pytest.warns(P.ProjectionWarning, match="interpolated"):
        q = P.pl_project(p, 3)
    assert q.values[-1, 0] == pytest.approx(1.0)
    with pytest.raises(InputError):
        P.pl_project(p, 0)


# -- mollification ---------------------------------------------------------------------

def test_mollify_constant():
    omega = dyadic_path(np.random.default_rng(2))
    cands = P.perturbation_candidates(omega, 10, 1.0, seed=0)
    assert P.lip_mollify(P.constant(2.5), 3, cands, omega) == 2.5


def test_mollify_lipschitz_self_optimal():
    rng = np.random.default_rng(3)
    X = P.sup_capped(1.0)
    for _ in range(20):
        omega = dyadic_path(rng, scale=0.25)
        cands = [dyadic_path(rng, scale=0.25) for _ in range(30)]
        assert P.lip_mollify(X, 1.0, cands, omega) == X(omega)
        assert P.lip_mollify(X, 4.0, cands, omega) == X(omega)


def test_mollify_indicator_density():
    X = P.sup_indicator(1.0)
    omega = DiscretePath.from_function(lambda t: 1.2 * t, 1.0, 16)
    rng = np.random.default_rng(5)
    pool = [DiscretePath(1.0, omega.values * s) for s in rng.uniform(0.5, 1.0, 64)]
    vals = [P.lip_mollify(X, 2.0, pool[:k], omega) for k in (1, 4, 16, 64)]
    assert all(0.0 <= v <= 1.0 for v in vals)
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1.0


def test_mollify_inputs():
    omega = dyadic_path(np.random.default_rng(6))
    with pytest.raises(InputError):
        P.lip_mollify(P.sup_capped(), 0, [omega], omega)
    with pytest.raises(InputError):
        P.lip_mollify(P.sup_capped(), 1, [DiscretePath(1.0, np.zeros((3, 1)))], omega)
    # empty candidate set: omega alone
    X = P.sup_capped()
    assert P.lip_mollify(X, 1, [], omega) == X(omega)


def random_functional(seed):
    """Bounded, generally discontinuous path functional built from dyadic pieces."""
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, GRID_M + 1, size=3)
    w = rng.integers(-4, 5, size=3) / 4.0
    level = rng.integers(0, 5) / 4.0

    def fn(values, grid):
        lin = values[..., idx, 0] @ w
        return np.clip(lin, -2.0, 2.0) + (np.abs(values[..., 0]).max(axis=1) > level)

    return P.PathFunctional(fn, 3.0, 1.0, f"rand{seed}")


@settings(max_examples=20)
@given(st.integers(0, 2 ** 31 - 1))
def test_mollify_sandwich_and_monotone(seed):
    rng = np.random.default_rng(seed)
    X = random_functional(seed)
    cands = np.stack([dyadic_path(rng).values for _ in range(12)])
    omegas = np.stack([dyadic_path(rng).values for _ in range(25)])
    grid = np.linspace(0, 1, GRID_M + 1)
    x = X.batch(omegas, grid)
    prev = np.full(25, -X.bound)
    for n in (0.25, 0.5, 1, 2, 4, 8):
        cur = P.mollify_batch(X, n, omegas, grid, cands)
        assert np.all(prev <= cur)
        assert np.all(cur <= x)
        prev = cur


@settings(max_examples=20)
@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([0.5, 1.0, 2.0, 8.0]))
def test_mollify_lipschitz(seed, n):
    rng = np.random.default_rng(seed)
    X = random_functional(seed)
    cands = np.stack([dyadic_path(rng).values for _ in range(12)])
    grid = np.linspace(0, 1, GRID_M + 1)
    a = np.stack([dyadic_path(rng).values for _ in range(25)])
    b = np.stack([dyadic_path(rng).values for _ in range(25)])
    # one candidate set per pair, holding both paths, so the set is the same for a and b
    both = np.concatenate([np.broadcast_to(cands, (25,) + cands.shape), a[:, None], b[:, None]], axis=1)
    va = P.mollify_batch(X, n, a, grid, both)
    vb = P.mollify_batch(X, n, b, grid, both)
    k = int(min(n, 1.0) * GRID_M) + 1
    dist = np.abs(a[:, :k, 0] - b[:, :k, 0]).max(axis=1)
    # dyadic data: the finite-min argument holds with no rounding slack
    assert np.all(np.abs(va - vb) <= n * dist)


def test_mollify_gap_shrinks_along_refinement():
    # continuous but not Lipschitz, so the gap stays positive for every n
    X = P.PathFunctional(lambda v, g: np.minimum(1.0, np.sqrt(np.abs(v[..., 0]).max(axis=1))), 1.0)
    grid = np.linspace(0, 1, 65)
    rng = np.random.default_rng(7)
    omegas = np.cumsum(np.vstack([np.zeros((1, 200)), rng.standard_normal((64, 200)) / 8]), axis=0).T[..., None]
    omegas = omegas * 10 ** rng.uniform(-4, 0, size=(200, 1, 1))
    x = X.batch(omegas, grid)
    gaps = []
    for n, h in [(1, 1 / 2), (2, 1 / 4), (4, 1 / 8), (8, 1 / 16)]:
        cand = np.arange(0, 1 + 1e-12, h)[None, :, None, None] * omegas[:, None]
        gaps.append(float(np.mean(x - P.mollify_batch(X, n, omegas, grid, cand))))
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] > 0


def test_functional_bound_enforced():
    X = P.PathFunctional(lambda v, g: np.full(v.shape[0], 2.0), 1.0)
    with pytest.raises(InputError, match="bound"):
        X(DiscretePath(1.0, [[0.0], [1.0]]))
    with pytest.raises(InputError):
        P.PathFunctional(lambda v, g: v, -1.0)


def test_cylinder_functional_reads_nodes():
    phi = parse("x1 - x2", 2)
    X = P.cylinder(lambda z: np.clip(phi(z), -1, 1), [0.5, 1.0], 1.0)
    p = DiscretePath(1.0, [[0.0], [0.75], [0.25]])
    assert X(p) == pytest.approx(0.5)
    with pytest.raises(InputError):
        X(DiscretePath(1.0, [[0.0], [1.0], [2.0], [3.0]]))


# -- pipeline -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def pspec():
    return GNormalSpec(CovarianceSet.from_variances([0.25, 1.0]))


def test_pipeline_constant(pspec):
    Y, rep = P.lip_approx_pipeline(P.constant(0.7), 0.01, pspec)
    assert rep.success and rep.final["estimate"] == 0.0
    assert Y(DiscretePath(1.0, [[0.0], [3.0]])) == 0.7


def test_pipeline_cylinder_on_nodes(pspec):
    X = P.cylinder(lambda z: np.minimum(np.abs(z[:, 0]), 1.0), [0.5], 1.0, horizon=1.0)
    Y, rep = P.lip_approx_pipeline(X, 1e-6, pspec)
    assert Y is X and rep.n0 == 2


@pytest.mark.slow
def test_pipeline_sup_capped(pspec):
    cfg = PipelineConfig(n_paths=1024, n_validate=2048, steps=128)
    Y, rep = P.lip_approx_pipeline(P.sup_capped(1.0), 0.1, pspec, cfg)
    assert rep.success
    assert rep.final["estimate"] <= 0.1
    assert rep.stage1["estimate"] < 0.1 / 3
    assert rep.stage2["capacity"] <= 0.1 / 6
    assert rep.stage3["sup_on_K"] < 0.1 / 3
    d = rep.to_dict()
    assert {"mu", "n0", "radius", "eta", "final", "trials"} <= set(d)


def test_pipeline_budget_exhausted(pspec):
    cfg = PipelineConfig(n_paths=256, n_validate=256, steps=32, mu_schedule=(1.0, 2.0), bank_size=8)
    with pytest.raises(BudgetExhaustedError) as exc:
        P.lip_approx_pipeline(P.sup_indicator(1.0), 1e-3, pspec, cfg)
    assert exc.value.achieved is not None and exc.value.achieved > 1e-3


def test_pipeline_rejects_bad_eps(pspec):
    with pytest.raises(InputError):
        P.lip_approx_pipeline(P.sup_capped(), 0.0, pspec)


# -- CSV --------------------------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    p = DiscretePath(2.0, np.vstack([np.zeros((1, 2)), rng.standard_normal((10, 2))]))
    f = tmp_path / "p.csv"
    P.save_path_csv(p, f)
    q = P.load_path_csv(f)
    assert q.horizon == p.horizon and np.array_equal(q.values, p.values)


def test_csv_errors(tmp_path):
    with pytest.raises(InputError):
        P.load_path_csv(tmp_path / "missing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("t,x1\n0,0\n0.5,0\n2,1\n")
    with pytest.raises(InputError, match="uniform"):
        P.load_path_csv(bad)
    bad.write_text("t,x1\n0,0\n1,abc\n")
    with pytest.raises(InputError, match="non-numeric"):
        P.load_path_csv(bad)

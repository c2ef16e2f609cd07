import os
import subprocess
import sys
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_partition, random_problem
from exel.errors import TooFewRows, TooManyGroups
from exel.graph import Partition
from exel.rng import Xoshiro256
from exel.solver import (BACKEND, NotConvergedWarning, OracleConfig, RegressionProblem,
                         SolverConfig, cross_validate, default_grid, group_prox,
                         ideal_support_oracle, kkt_residual, lambda_max, lambda_path, objective,
                         solve, spectral_norm, support_of)
from exel.solver import _backend

I2 = np.eye(2)
ONE_GROUP = Partition(groups=((0, 1),), n=2)
TWO_SINGLE = Partition(groups=((0,), (1,)), n=2)
ALGOS = ["bcd", "fista"]


def softthresh(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


# ---------------------------------------------------------------- closed forms


def test_objective_examples():
    p = RegressionProblem(I2, [3.0, 4.0], ONE_GROUP)
    assert objective(p, [0.0, 0.0], 4.0) == 25.0
    assert objective(RegressionProblem(I2, [0.0, 0.0], ONE_GROUP), [0.0, 0.0], 1.0) == 0.0
    assert objective(p, [1.8, 2.4], 4.0) == pytest.approx(16.0, abs=1e-12)


def test_lambda_max_examples():
    assert lambda_max(RegressionProblem(I2, [0.0, 0.0], ONE_GROUP)) == 0.0
    assert lambda_max(RegressionProblem(I2, [3.0, 4.0], ONE_GROUP)) == pytest.approx(10.0)
    assert lambda_max(RegressionProblem(I2, [3.0, 1.0], TWO_SINGLE)) == pytest.approx(6.0)


@pytest.mark.parametrize("algo", ALGOS)
def test_singleton_identity_design(algo):
    sol = solve(RegressionProblem(I2, [3.0, 1.0], TWO_SINGLE), SolverConfig(2.0, algo))
    # with the unhalved loss each coordinate is soft-thresholded at lam/2
    np.testing.assert_allclose(sol.alpha, softthresh(np.array([3.0, 1.0]), 1.0), atol=1e-10)
    assert sol.kkt_residual <= 1e-10


@pytest.mark.parametrize("algo", ALGOS)
def test_one_group_identity_design(algo):
    sol = solve(RegressionProblem(I2, [3.0, 4.0], ONE_GROUP), SolverConfig(4.0, algo))
    # block shrink keeps the direction and sets the norm to 5 - 4/2
    np.testing.assert_allclose(sol.alpha, [1.8, 2.4], atol=1e-10)
    assert kkt_residual(RegressionProblem(I2, [3.0, 4.0], ONE_GROUP), [1.8, 2.4], 4.0) <= 1e-10


def test_kkt_residual_at_zero():
    p = RegressionProblem(I2, [3.0, 4.0], ONE_GROUP)
    lmax = lambda_max(p)
    assert kkt_residual(p, [0.0, 0.0], lmax) == 0.0
    assert kkt_residual(p, [0.0, 0.0], 2 * lmax) == 0.0
    assert kkt_residual(p, [0.0, 0.0], lmax / 2) == pytest.approx(lmax / 2)


def test_kkt_residual_matches_loop_definition():
    p = random_problem(3)
    a = np.array([Xoshiro256(9).normal() for _ in range(p.n)])
    a[list(p.groups.groups[0])] = 0.0
    grad = 2 * p.design.T @ (p.response - p.design @ a)
    lam = 0.7
    worst = 0.0
    for g in p.groups.groups:
        g = list(g)
        na = np.linalg.norm(a[g])
        v = max(0.0, np.linalg.norm(grad[g]) - lam) if na == 0 else np.linalg.norm(grad[g] - lam * a[g] / na)
        worst = max(worst, v)
    assert kkt_residual(p, a, lam) == pytest.approx(worst, rel=1e-12)


# ---------------------------------------------------------------- zero threshold


@pytest.mark.parametrize("algo", ALGOS)
def test_lambda_at_or_above_max_gives_exact_zeros(algo):
    for seed in range(20):
        p = random_problem(seed)
        for scale in (1.0, 1.5):
            sol = solve(p, SolverConfig(scale * lambda_max(p), algo))
            assert np.all(sol.alpha == 0.0)
            assert sol.converged


def test_just_below_max_is_nonzero():
    for seed in range(20):
        p = random_problem(seed)
        sol = solve(p, SolverConfig(0.99 * lambda_max(p)))
        assert support_of(p.groups, sol.alpha)


def test_zero_column_group_stays_zero():
    phi = np.array([[1.0, 0.0, 2.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    p = RegressionProblem(phi, [1.0, 2.0, 3.0], Partition(groups=((0,), (1,), (2,)), n=3))
    sol = solve(p, SolverConfig(0.01))
    assert sol.alpha[1] == 0.0 and sol.converged


# ---------------------------------------------------------------- agreement and invariants


@pytest.mark.parametrize("seed", range(12))
def test_bcd_and_fista_agree(seed):
    p = random_problem(seed)
    lam = 0.3 * lambda_max(p)
    a = solve(p, SolverConfig(lam, "bcd"))
    b = solve(p, SolverConfig(lam, "fista"))
    assert abs(a.objective - b.objective) / max(1.0, a.objective) <= 1e-8
    assert a.kkt_residual <= 1e-6 and b.kkt_residual <= 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_objective_recomputes_from_alpha(seed):
    p = random_problem(seed)
    sol = solve(p, SolverConfig(0.2 * lambda_max(p)))
    assert sol.objective == pytest.approx(objective(p, sol.alpha, sol.lam), rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_bcd_trace_never_increases(seed):
    p = random_problem(seed)
    sol = solve(p, SolverConfig(0.05 * lambda_max(p), polish_every=0, max_sweeps=200))
    assert np.all(np.diff(sol.trace) <= 1e-10 * max(1.0, sol.trace[0]))


def test_interpolation_at_zero_penalty():
    rng = Xoshiro256(4)
    phi = np.array([[rng.normal() for _ in range(5)] for _ in range(12)])
    z = np.array([rng.normal() for _ in range(12)])
    p = RegressionProblem(phi, z, Partition(groups=((0, 1), (2,), (3, 4)), n=5))
    sol = solve(p, SolverConfig(0.0))
    assert np.max(np.abs(phi.T @ (z - phi @ sol.alpha))) <= 1e-8
    np.testing.assert_allclose(sol.alpha, np.linalg.lstsq(phi, z, rcond=None)[0], atol=1e-8)


@pytest.mark.parametrize("c", [0.5, 2.0, 10.0])
def test_positive_homogeneity(c):
    for seed in range(10):
        p = random_problem(seed)
        lam = 0.3 * lambda_max(p)
        a = solve(p, SolverConfig(lam)).alpha
        b = solve(p.scaled(c), SolverConfig(c * lam)).alpha
        np.testing.assert_allclose(b, c * a, atol=1e-8)


def test_group_permutation_equivariance():
    p = random_problem(21, n_range=(6, 10))
    rng = Xoshiro256(2)
    perm = rng.permutation(p.n)
    inv = np.argsort(perm)
    groups = tuple(tuple(int(inv[j]) for j in g) for g in p.groups.groups)
    q = RegressionProblem(p.design[:, perm], p.response, Partition(groups=groups, n=p.n))
    lam = 0.2 * lambda_max(p)
    a = solve(p, SolverConfig(lam)).alpha
    b = solve(q, SolverConfig(lam)).alpha
    np.testing.assert_allclose(b, a[perm], atol=1e-8)


@pytest.mark.parametrize("readout,weight", [("mean", None), ("sum", 1.0)])
def test_readout_feasibility_bound(readout, weight):
    rng = Xoshiro256(8)
    for _ in range(5):
        n = 3 + rng.below(8)
        H = np.array([[rng.normal() for _ in range(16)] for _ in range(n)])
        z = H.mean(axis=0) if readout == "mean" else H.sum(axis=0)
        p = RegressionProblem(H.T, z, random_partition(n, rng))
        lam = 0.1 * lambda_max(p)
        feasible = np.full(n, 1.0 / n if weight is None else weight)
        assert objective(p, feasible, 0.0) <= 1e-20 + 1e-12 * (z @ z)
        assert solve(p, SolverConfig(lam)).objective <= objective(p, feasible, lam) + 1e-12


def test_not_converged_warns_and_returns_iterate():
    p = random_problem(5)
    with pytest.warns(NotConvergedWarning):
        sol = solve(p, SolverConfig(0.01 * lambda_max(p), max_sweeps=1, polish_every=0))
    assert not sol.converged and sol.sweeps == 1
    assert sol.objective < objective(p, np.zeros(p.n), sol.lam)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(lam=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(algorithm="admm")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6), st.floats(0, 20))
def test_group_prox_matches_block_shrink(v, t):
    v = np.array(v)
    out = group_prox(v, Partition(groups=(tuple(range(len(v))),), n=len(v)), t)
    nv = np.linalg.norm(v)
    expect = np.zeros_like(v) if nv <= t else v * (1 - t / nv)
    np.testing.assert_allclose(out, expect, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.02, 0.98))
def test_solutions_satisfy_kkt(seed, frac):
    p = random_problem(seed, d_range=(4, 20), n_range=(1, 8))
    sol = solve(p, SolverConfig(frac * lambda_max(p)))
    assert sol.kkt_residual <= 1e-8


def test_spectral_norm_matches_svd():
    rng = Xoshiro256(6)
    m = np.array([[rng.normal() for _ in range(4)] for _ in range(7)])
    assert spectral_norm(m) == pytest.approx(np.linalg.svd(m, compute_uv=False)[0], rel=1e-9)
    assert spectral_norm(np.zeros((3, 2))) == 0.0


# ---------------------------------------------------------------- paths and CV


def test_path_at_lambda_max_is_zero():
    p = random_problem(1)
    sols = lambda_path(p, [lambda_max(p)])
    assert len(sols) == 1 and np.all(sols[0].alpha == 0.0)


def test_default_grid_shape():
    p = random_problem(2)
    g = default_grid(p)
    assert len(g) == 20
    assert g[0] == pytest.approx(lambda_max(p)) and g[-1] == pytest.approx(1e-3 * lambda_max(p))
    assert np.all(np.diff(g) < 0)


def test_path_rejects_ascending_grid():
    with pytest.raises(ValueError):
        lambda_path(random_problem(2), [0.1, 0.2])


def test_path_objectives_below_zero_solution():
    p = random_problem(4)
    for sol in lambda_path(p):
        assert sol.objective <= objective(p, np.zeros(p.n), sol.lam) + 1e-12


def test_support_shrinks_with_lambda_on_identity_design():
    rng = Xoshiro256(12)
    for _ in range(10):
        n = 6
        z = np.array([rng.normal() for _ in range(n)])
        p = RegressionProblem(np.eye(n), z, random_partition(n, rng))
        sizes = [len(support_of(p.groups, s.alpha)) for s in lambda_path(p)]
        assert all(a <= b for a, b in zip(sizes, sizes[1:]))


def test_cv_single_lambda_grid():
    p = random_problem(3)
    assert cross_validate(p, grid=[0.5]).best_lambda == 0.5


def test_cv_requires_enough_rows():
    p = RegressionProblem(np.ones((3, 2)), np.ones(3), TWO_SINGLE)
    with pytest.raises(TooFewRows):
        cross_validate(p, folds=4)


def test_cv_default_is_four_folds():
    res = cross_validate(random_problem(6))
    assert res.fold_errors.shape == (4, 20)


def test_cv_prefers_regularized_fit_on_noisy_planted_problem():
    rng = Xoshiro256(77)
    d, n = 40, 12
    phi = np.array([[rng.normal() for _ in range(n)] for _ in range(d)])
    truth = np.zeros(n)
    truth[:3] = [2.0, -1.5, 1.0]
    z = phi @ truth + np.array([0.5 * rng.normal() for _ in range(d)])
    p = RegressionProblem(phi, z, Partition(groups=tuple((j,) for j in range(n)), n=n))
    res = cross_validate(p)
    best = int(np.flatnonzero(res.grid == res.best_lambda)[0])
    assert res.errors[best] <= res.errors[-1]


def test_cv_ties_go_to_larger_lambda():
    # z orthogonal to every column: all fits are zero, so every lambda ties
    phi = np.zeros((8, 2))
    phi[0, 0] = phi[1, 1] = 1.0
    z = np.zeros(8)
    z[5] = 1.0
    p = RegressionProblem(phi, z, TWO_SINGLE)
    assert cross_validate(p, grid=[3.0, 2.0, 1.0]).best_lambda == 3.0


# ---------------------------------------------------------------- support oracle


def test_oracle_examples():
    p = RegressionProblem(I2, [3.0, 4.0], ONE_GROUP)
    r = ideal_support_oracle(p, OracleConfig(epsilon=6.0))
    assert r.support == () and r.zero_groups == 1
    r = ideal_support_oracle(p, OracleConfig(epsilon=0.1))
    assert r.support == (0,) and r.residual < 1e-9
    assert ideal_support_oracle(p, OracleConfig(epsilon=float("inf"))).zero_groups == 1


def test_oracle_prefers_lexicographically_smallest():
    # both columns reconstruct z on their own
    phi = np.array([[1.0, 1.0], [0.0, 0.0]])
    p = RegressionProblem(phi, [1.0, 0.0], TWO_SINGLE)
    assert ideal_support_oracle(p, OracleConfig(epsilon=1e-6)).support == (0,)


def test_oracle_infeasible_marker():
    p = RegressionProblem(np.zeros((2, 1)), [1.0, 0.0], Partition(groups=((0,),), n=1))
    r = ideal_support_oracle(p, OracleConfig(epsilon=0.5))
    assert r.zero_groups == -1 and r.residual == float("inf")


def test_oracle_group_limit():
    n = 13
    p = RegressionProblem(np.eye(n), np.ones(n), Partition(groups=tuple((j,) for j in range(n)), n=n))
    with pytest.raises(TooManyGroups):
        ideal_support_oracle(p, OracleConfig(epsilon=1.0))


# ---------------------------------------------------------------- backends


@pytest.mark.skipif(_backend.compiled_kernel is None, reason="compiled kernel not built")
@pytest.mark.parametrize("seed", range(8))
def test_compiled_and_python_kernels_agree(seed):
    p = random_problem(seed)
    cfg = SolverConfig(0.1 * lambda_max(p))
    a = solve(p, cfg, kernel=_backend.compiled_kernel)
    b = solve(p, cfg, kernel=_backend.python_kernel)
    np.testing.assert_allclose(a.alpha, b.alpha, atol=1e-10)
    assert a.sweeps == b.sweeps


def test_pure_python_switch():
    env = dict(os.environ, EXEL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import exel.solver as s; print(s.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert BACKEND in ("cython", "python")


@pytest.mark.parametrize("seed", range(10))
def test_zero_lambda_matches_projection(seed):
    p = random_problem(seed)
    sol = solve(p, SolverConfig(0.0))
    proj = p.design @ np.linalg.pinv(p.design) @ p.response
    assert np.allclose(p.design @ sol.alpha, proj, atol=1e-9)
    assert sol.kkt_residual <= 1e-8

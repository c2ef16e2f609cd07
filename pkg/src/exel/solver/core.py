"""Embedding-space Group Lasso regression.

Minimizes ``||z - Phi @ alpha||^2 + lam * sum_s ||alpha_s||`` over
``alpha``, where ``Phi`` is ``d x n`` (one column per node) and the groups
come from a node partition. The squared loss carries no 1/2 factor, so
every threshold below is stated in terms of ``lam / 2``.
"""
from __future__ import annotations

import dataclasses
import functools
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import DimensionMismatch, NotConverged, TooFewRows, TooManyGroups
from ..graph import Partition, validate_partition
from ..rng import Xoshiro256
from . import _backend


class NotConvergedWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class RegressionProblem:
    design: np.ndarray
    response: np.ndarray
    groups: Partition

    def __post_init__(self):
        phi = np.ascontiguousarray(self.design, dtype=np.float64)
        z = np.ascontiguousarray(self.response, dtype=np.float64).reshape(-1)
        if phi.ndim != 2:
            raise DimensionMismatch("design must be a matrix")
        if phi.shape[0] != z.shape[0]:
            raise DimensionMismatch(
                f"design has {phi.shape[0]} rows but response has {z.shape[0]}"
            )
        if phi.shape[0] < 1:
            raise DimensionMismatch("need at least one response row")
        validate_partition(self.groups, phi.shape[1])
        if self.groups.n != phi.shape[1]:
            raise DimensionMismatch("partition size does not match design columns")
        object.__setattr__(self, "design", phi)
        object.__setattr__(self, "response", z)

    @property
    def d(self) -> int:
        return self.design.shape[0]

    @property
    def n(self) -> int:
        return self.design.shape[1]

    def rows(self, idx) -> "RegressionProblem":
        idx = np.asarray(idx, dtype=np.int64)
        return RegressionProblem(self.design[idx], self.response[idx], self.groups)

    def scaled(self, c: float) -> "RegressionProblem":
        return RegressionProblem(self.design, c * self.response, self.groups)


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 0.0
    algorithm: str = "bcd"
    max_sweeps: int = 10000
    tol: float = 1e-8
    inner_block_iters: int = 50
    polish_every: int = 20  # BCD sweeps between active-set Newton refinements; 0 disables

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        if self.algorithm not in ("bcd", "fista"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_sweeps < 0 or self.inner_block_iters < 1 or self.polish_every < 0:
            raise ValueError("iteration limits must be positive")

    def with_lambda(self, lam: float) -> "SolverConfig":
        return dataclasses.replace(self, lam=lam)


@dataclass
class Solution:
    alpha: np.ndarray
    objective: float
    kkt_residual: float
    sweeps: int
    converged: bool
    lam: float = 0.0
    trace: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)


@dataclass(frozen=True)
class OracleConfig:
    epsilon: float
    max_groups_enumerated: int = 12

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be non-negative")


@dataclass
class OracleResult:
    support: tuple
    zero_groups: int
    alpha: np.ndarray
    residual: float


@functools.lru_cache(maxsize=256)
def _group_arrays(partition: Partition):
    gptr = np.zeros(partition.m + 1, dtype=np.intp)
    gptr[1:] = np.cumsum(partition.sizes())
    gidx = np.fromiter(
        (i for g in partition.groups for i in g), dtype=np.intp, count=partition.n
    )
    gptr.flags.writeable = False
    gidx.flags.writeable = False
    return gptr, gidx


def _group_norms(partition: Partition, v) -> np.ndarray:
    gptr, gidx = _group_arrays(partition)
    return np.sqrt(np.add.reduceat(np.asarray(v, dtype=np.float64)[gidx] ** 2, gptr[:-1]))


def group_penalty(partition: Partition, alpha) -> float:
    return float(_group_norms(partition, alpha).sum())


def objective(problem: RegressionProblem, alpha, lam: float) -> float:
    alpha = np.asarray(alpha, dtype=np.float64)
    r = problem.response - problem.design @ alpha
    return float(r @ r + lam * group_penalty(problem.groups, alpha))


def lambda_max(problem: RegressionProblem) -> float:
    """Smallest penalty for which ``alpha = 0`` is optimal."""
    corr = problem.design.T @ problem.response
    return float(2.0 * _group_norms(problem.groups, corr).max())


def kkt_residual(problem: RegressionProblem, alpha, lam: float) -> float:
    """Largest violation of the subgradient optimality conditions."""
    alpha = np.asarray(alpha, dtype=np.float64)
    grad = 2.0 * problem.design.T @ (problem.response - problem.design @ alpha)
    part = problem.groups
    gptr, gidx = _group_arrays(part)
    na = _group_norms(part, alpha)
    sizes = np.diff(gptr)
    # zero groups: excess of the gradient norm over lam
    zero_part = np.maximum(0.0, _group_norms(part, grad) - lam)
    # nonzero groups: distance of the gradient from lam * unit direction
    unit = np.zeros_like(alpha)
    scale = np.where(na > 0.0, lam / np.where(na > 0.0, na, 1.0), 0.0)
    unit[gidx] = alpha[gidx] * np.repeat(scale, sizes)
    nz_part = _group_norms(part, grad - unit)
    return float(np.max(np.where(na == 0.0, zero_part, nz_part)))


def spectral_norm(matrix, iters: int = 100, seed: int = 0) -> float:
    """Largest singular value by power iteration on ``M^T M``."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.size == 0 or not np.any(m):
        return 0.0
    rng = Xoshiro256(seed)
    v = np.array([rng.normal() for _ in range(m.shape[1])])
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = m.T @ (m @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return float(np.linalg.norm(m @ v))


def group_prox(v, partition: Partition, thresh: float) -> np.ndarray:
    """Block soft-threshold: each group scaled by ``max(0, 1 - t/||v_s||)``."""
    v = np.asarray(v, dtype=np.float64)
    gptr, gidx = _group_arrays(partition)
    nv = _group_norms(partition, v)
    shrink = np.where(nv > thresh, 1.0 - thresh / np.where(nv > 0.0, nv, 1.0), 0.0)
    out = np.zeros_like(v)
    out[gidx] = v[gidx] * np.repeat(shrink, np.diff(gptr))
    return out


def _finish(problem, alpha, lam, sweeps, trace, tol):
    kkt = kkt_residual(problem, alpha, lam)
    sol = Solution(
        alpha=alpha,
        objective=objective(problem, alpha, lam),
        kkt_residual=kkt,
        sweeps=sweeps,
        converged=kkt <= tol,
        lam=lam,
        trace=trace,
    )
    if not sol.converged:
        warnings.warn(str(NotConverged(sol)), NotConvergedWarning, stacklevel=3)
    return sol


def _newton_polish(phi, z, partition, alpha, lam, iters=30):
    """Damped Newton on the face of groups currently nonzero.

    The penalty is smooth on that face, so a few steps finish what slow
    cyclic sweeps leave on ill-conditioned designs. Steps are cut at the
    first singleton sign change; that coordinate is set to exactly zero and
    leaves the face. Returns a candidate that the caller keeps only if the
    full objective drops.
    """
    gptr, gidx = _group_arrays(partition)
    sizes = np.diff(gptr)
    owner = np.empty(partition.n, dtype=np.intp)
    owner[gidx] = np.repeat(np.arange(partition.m), sizes)
    single = sizes[owner] == 1
    blocks = [np.asarray(g, dtype=np.intp) for g in partition.groups if len(g) > 1]
    a = alpha.copy()
    gram = 2.0 * phi.T @ phi
    lin = 2.0 * phi.T @ z
    zz = float(z @ z)

    def f(v):
        return zz - lin @ v + 0.5 * (v @ gram @ v) + lam * group_penalty(partition, v)

    fa = f(a)
    for _ in range(iters):
        on = _group_norms(partition, a)[owner] > 0.0
        cols = np.flatnonzero(on)
        if cols.size == 0:
            break
        pos = np.full(partition.n, -1, dtype=np.intp)
        pos[cols] = np.arange(cols.size)
        hess = gram[np.ix_(cols, cols)]
        grad = hess @ a[cols] - lin[cols]
        sc = single[cols]
        grad[sc] += lam * np.sign(a[cols[sc]])
        for g in blocks:
            if not on[g[0]]:
                continue
            b = pos[g]
            na = np.linalg.norm(a[g])
            u = a[g] / na
            grad[b] += lam * u
            hess[np.ix_(b, b)] += lam * (np.eye(len(g)) - np.outer(u, u)) / na
        step = -np.linalg.lstsq(hess, grad, rcond=None)[0]
        slope = grad @ step
        if not slope < 0:
            break
        # longest step keeping every singleton's sign
        t_max, hit = 1.0, None
        cur = a[cols]
        flips = np.flatnonzero(sc & (cur * (cur + step) < 0))
        if flips.size:
            tk = -cur[flips] / step[flips]
            k = int(np.argmin(tk))
            if tk[k] < t_max:
                t_max, hit = float(tk[k]), int(flips[k])
        t = t_max
        for _ in range(40):
            cand = a.copy()
            cand[cols] += t * step
            if hit is not None and t == t_max:
                cand[cols[hit]] = 0.0
            fc = f(cand)
            if fc <= fa + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        done = fa - fc <= 1e-15 * max(1.0, abs(fa)) and not (hit is not None and t == t_max)
        a, fa = cand, fc
        if done:
            break
    return a


def _solve_bcd(problem, config, alpha0, kernel):
    gptr, gidx = _group_arrays(problem.groups)
    phi, z = problem.design, problem.response
    G = np.ascontiguousarray(phi.T @ phi)
    c = np.ascontiguousarray(phi.T @ z)
    zz = float(z @ z)
    lam = float(config.lam)
    lips = np.empty(problem.groups.m)
    for s, g in enumerate(problem.groups.groups):
        if len(g) == 1:
            lips[s] = 2.0 * G[g[0], g[0]]
        else:
            idx = list(g)
            lips[s] = 2.0 * float(np.linalg.eigvalsh(G[np.ix_(idx, idx)])[-1])
    alpha = np.array(alpha0, dtype=np.float64) if alpha0 is not None else np.zeros(problem.n)
    q = np.ascontiguousarray(G @ alpha)
    chunk = config.polish_every or config.max_sweeps
    traces = []
    sweeps = 0
    while True:
        budget = min(chunk, config.max_sweeps - sweeps)
        trace = np.zeros(budget + 1)
        done, kkt = kernel.bcd_run(G, c, zz, alpha, q, gptr, gidx, lips, lam, int(budget),
                                   float(config.tol), int(config.inner_block_iters), trace)
        traces.append(trace[: done + 1] if not traces else trace[1: done + 1])
        sweeps += done
        if kkt <= config.tol or sweeps >= config.max_sweeps or not config.polish_every:
            break
        cand = _newton_polish(phi, z, problem.groups, alpha, lam)
        if objective(problem, cand, lam) < objective(problem, alpha, lam):
            alpha[:] = cand
            q[:] = G @ alpha
            traces.append(np.array([kernel_objective(zz, c, alpha, q, problem.groups, lam)]))
    trace = np.concatenate(traces)
    scale = 1e-10 * max(1.0, abs(trace[0]))
    if len(trace) > 1 and np.max(np.diff(trace)) > scale:
        raise AssertionError("BCD objective increased between sweeps")
    return alpha, sweeps, trace


def kernel_objective(zz, c, alpha, q, partition, lam):
    """Objective in Gram form, matching what the kernels record."""
    return float(zz - 2.0 * c @ alpha + alpha @ q + lam * group_penalty(partition, alpha))


def _solve_fista(problem, config, alpha0):
    phi, z, lam = problem.design, problem.response, config.lam
    G = phi.T @ phi
    c = phi.T @ z
    L = 2.0 * float(np.linalg.norm(phi, 2)) ** 2
    x = np.array(alpha0, dtype=np.float64) if alpha0 is not None else np.zeros(problem.n)
    if L == 0.0:
        return np.zeros(problem.n), 0, np.zeros(1)
    part = problem.groups
    t = 1.0
    y = x.copy()
    f_prev = objective(problem, x, lam)
    hist = [f_prev]
    it = 0
    while it < config.max_sweeps:
        it += 1
        x_new = group_prox(y - (2.0 / L) * (G @ y - c), part, lam / L)
        f_new = objective(problem, x_new, lam)
        if f_new > f_prev:
            # restart momentum from the last accepted iterate
            t = 1.0
            y = x.copy()
            x_new = group_prox(y - (2.0 / L) * (G @ y - c), part, lam / L)
            f_new = objective(problem, x_new, lam)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t, f_prev = x_new, t_new, f_new
        hist.append(f_new)
        if kkt_residual(problem, x, lam) <= config.tol:
            break
    return x, it, np.asarray(hist)


def solve(problem: RegressionProblem, config: SolverConfig = SolverConfig(),
          alpha0=None, kernel=None) -> Solution:
    """Minimize the Group Lasso objective with BCD or FISTA.

    For ``lam >= lambda_max`` the exact zero vector is returned. A run that
    hits ``max_sweeps`` returns its last iterate with ``converged=False``
    and emits :class:`NotConvergedWarning`. ``lam == 0`` is plain least
    squares and is solved directly (minimum-norm solution).
    """
    lam = float(config.lam)
    if lam >= lambda_max(problem):
        zero = np.zeros(problem.n)
        return _finish(problem, zero, lam, 0, np.array([objective(problem, zero, lam)]),
                       config.tol)
    if lam == 0.0:
        alpha = np.linalg.lstsq(problem.design, problem.response, rcond=None)[0]
        return _finish(problem, alpha, lam, 0, np.array([objective(problem, alpha, lam)]),
                       config.tol)
    if config.algorithm == "bcd":
        alpha, sweeps, trace = _solve_bcd(problem, config, alpha0,
                                          kernel or _backend.kernel)
    else:
        alpha, sweeps, trace = _solve_fista(problem, config, alpha0)
    return _finish(problem, alpha, lam, sweeps, trace, config.tol)


def default_grid(problem: RegressionProblem, points: int = 20, ratio: float = 1e-3):
    lmax = lambda_max(problem)
    if lmax == 0.0:
        return np.zeros(1)
    return lmax * np.logspace(0.0, math.log10(ratio), points)


def lambda_path(problem: RegressionProblem, grid=None,
                config: SolverConfig = SolverConfig()) -> list[Solution]:
    """Solve along a descending grid, warm-starting each point."""
    grid = default_grid(problem) if grid is None else np.asarray(grid, dtype=np.float64)
    if np.any(np.diff(grid) > 0):
        raise ValueError("lambda grid must be descending")
    out = []
    alpha = None
    for lam in grid:
        sol = solve(problem, config.with_lambda(float(lam)), alpha0=alpha)
        alpha = sol.alpha
        out.append(sol)
    return out


@dataclass
class CVResult:
    best_lambda: float
    grid: np.ndarray
    errors: np.ndarray  # mean held-out squared error per grid point
    fold_errors: np.ndarray


def fold_indices(d: int, folds: int, seed: int = 0) -> list[np.ndarray]:
    order = np.asarray(Xoshiro256(seed).permutation(d), dtype=np.int64)
    return [np.sort(b) for b in np.array_split(order, folds)]


def cross_validate(problem: RegressionProblem, folds: int = 4, grid=None,
                   config: SolverConfig = SolverConfig(), seed: int = 0) -> CVResult:
    """K-fold CV over embedding dimensions; ties go to the larger lambda."""
    if problem.d < folds:
        raise TooFewRows(f"{problem.d} rows cannot be split into {folds} folds")
    grid = default_grid(problem) if grid is None else np.asarray(grid, dtype=np.float64)
    blocks = fold_indices(problem.d, folds, seed)
    errs = np.zeros((folds, len(grid)))
    for k, hold in enumerate(blocks):
        keep = np.setdiff1d(np.arange(problem.d), hold)
        path = lambda_path(problem.rows(keep), grid, config)
        for j, sol in enumerate(path):
            r = problem.response[hold] - problem.design[hold] @ sol.alpha
            errs[k, j] = r @ r
    mean = errs.mean(axis=0)
    best = int(np.argmin(mean))  # first minimum = largest lambda on a descending grid
    # resolve exact ties explicitly in favour of the larger penalty
    ties = np.flatnonzero(mean == mean[best])
    best = int(ties[np.argmax(grid[ties])])
    return CVResult(float(grid[best]), grid, mean, errs)


def ideal_support_oracle(problem: RegressionProblem, config: OracleConfig) -> OracleResult:
    """Exhaustive search for the sparsest group support reconstructing ``z``.

    A support is feasible when the least-squares fit restricted to its
    columns leaves a residual norm below ``epsilon``.
    """
    m = problem.groups.m
    if m > config.max_groups_enumerated:
        raise TooManyGroups(f"{m} groups exceeds limit {config.max_groups_enumerated}")
    phi, z = problem.design, problem.response
    # fewest groups first; combinations() yields lexicographic order
    for size in range(m + 1):
        for support in itertools.combinations(range(m), size):
            alpha = np.zeros(problem.n)
            if support:
                cols = [i for s in support for i in problem.groups.groups[s]]
                sub = phi[:, cols]
                gram = sub.T @ sub + 1e-12 * np.eye(len(cols))
                alpha[cols] = np.linalg.solve(gram, sub.T @ z)
            resid = float(np.linalg.norm(z - phi @ alpha))
            if resid < config.epsilon:
                return OracleResult(support, m - size, alpha, resid)
    return OracleResult((), -1, np.zeros(problem.n), float("inf"))


def support_of(partition: Partition, alpha) -> tuple:
    alpha = np.asarray(alpha)
    return tuple(s for s, g in enumerate(partition.groups) if np.any(alpha[list(g)] != 0))

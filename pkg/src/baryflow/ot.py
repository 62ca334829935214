"""Discrete optimal transport: ground costs, exact and entropic solvers.

Costs are squared distances (p = 2 throughout). The joint feature-label
ground metric is d(z, z')^2 = ||x - x'||^2 + beta * ||y - y'||^2.

The exact solver is an LP of network-simplex class. Uniform marginals with an
integer size ratio are reduced to a rectangular assignment problem (exact and
fast); everything else goes through the HiGHS simplex. Problems above
``EXACT_SIZE_LIMIT`` coupling entries default to the log-domain Sinkhorn
solver with eps = 0.05 * median(C).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog

from .measures import EmpiricalMeasure, LabeledEmpiricalMeasure

__all__ = [
    "CostMatrix",
    "TransportPlan",
    "ConvergenceError",
    "joint_cost",
    "squared_distances",
    "solve_exact",
    "solve_entropic",
    "solve_auto",
    "barycentric_map",
    "w2_empirical",
    "set_num_threads",
    "get_num_threads",
    "parallel_map",
]

# Above this many coupling entries, solve_auto switches to the entropic solver.
EXACT_SIZE_LIMIT = 250_000

_num_threads = max(1, int(os.environ.get("BARYFLOW_THREADS", "1") or 1))


class ConvergenceError(RuntimeError):
    """A solver failed to reach its convergence criterion."""


def set_num_threads(n: int) -> None:
    """Cap the number of threads used for independent per-measure solves."""
    global _num_threads
    _num_threads = max(1, int(n))


def get_num_threads() -> int:
    return _num_threads


def parallel_map(fn, items):
    """Map ``fn`` over ``items``, threaded when the thread cap allows it.

    Results are returned in input order, so output is deterministic.
    """
    items = list(items)
    if _num_threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(_num_threads, len(items))) as ex:
        return list(ex.map(fn, items))


@dataclass(frozen=True)
class CostMatrix:
    """Pairwise ground costs in squared-distance units (p fixed to 2)."""

    values: np.ndarray
    p: int = 2

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise ValueError("cost matrix must be 2-D")
        if not np.all(np.isfinite(vals)):
            raise ValueError("cost matrix contains non-finite entries")
        if vals.min(initial=0.0) < -1e-12:
            raise ValueError("cost matrix contains negative entries")
        vals = np.maximum(vals, 0.0)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        if self.p != 2:
            raise ValueError("only p = 2 is supported")

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class TransportPlan:
    """Nonnegative coupling with prescribed marginals.

    ``marginal_tol`` loosens the feasibility check for entropic plans that
    stopped at max_iter; exact plans use the default 1e-8.
    """

    coupling: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    marginal_tol: float = 1e-8

    def __post_init__(self):
        g = np.asarray(self.coupling, dtype=float)
        a = np.asarray(self.row_marginal, dtype=float)
        b = np.asarray(self.col_marginal, dtype=float)
        if g.shape != (a.shape[0], b.shape[0]):
            raise ValueError("coupling shape does not match the marginals")
        if g.min(initial=0.0) < -1e-12:
            raise ValueError("coupling has negative entries")
        tol = self.marginal_tol
        if np.max(np.abs(g.sum(axis=1) - a)) > tol:
            raise ValueError("row sums do not match the row marginal")
        if np.max(np.abs(g.sum(axis=0) - b)) > tol:
            raise ValueError("column sums do not match the column marginal")
        for name, arr in (("coupling", g), ("row_marginal", a), ("col_marginal", b)):
            arr = np.array(arr, copy=True)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def shape(self):
        return self.coupling.shape


def squared_distances(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances between rows of x and y."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    sq = (
        (x * x).sum(axis=1)[:, None]
        + (y * y).sum(axis=1)[None, :]
        - 2.0 * (x @ y.T)
    )
    return np.maximum(sq, 0.0)


def joint_cost(x, y, labels_x=None, labels_y=None, beta: float = 0.0) -> CostMatrix:
    """Squared joint feature-label cost between two point sets.

    values[i, j] = ||x_i - y_j||^2 + beta * ||labels_x_i - labels_y_j||^2.
    Labels must be present on both sides or on neither; with no labels (or
    beta = 0 and labels dropped) this is the squared Euclidean cost.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[1] != y.shape[1]:
        raise ValueError(
            f"feature dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    if (labels_x is None) != (labels_y is None):
        raise ValueError("labels must be given for both sides or neither")
    vals = squared_distances(x, y)
    if labels_x is not None and beta > 0:
        lx = np.atleast_2d(np.asarray(labels_x, dtype=float))
        ly = np.atleast_2d(np.asarray(labels_y, dtype=float))
        if lx.shape[1] != ly.shape[1]:
            raise ValueError("label dimensions differ between the two sides")
        if lx.shape[0] != x.shape[0] or ly.shape[0] != y.shape[0]:
            raise ValueError("labels must have one row per point")
        vals = vals + beta * squared_distances(lx, ly)
    return CostMatrix(vals)


def _check_marginals(a: np.ndarray, b: np.ndarray, n: int, m: int) -> None:
    if a.shape != (n,) or b.shape != (m,):
        raise ValueError("marginal sizes do not match the cost matrix")
    if np.any(a < -1e-12) or np.any(b < -1e-12):
        raise ValueError("marginals must be nonnegative")
    if abs(a.sum() - b.sum()) > 1e-8:
        raise ValueError(
            f"infeasible marginals: masses {a.sum():.12g} vs {b.sum():.12g}")


def _is_uniform(w: np.ndarray) -> bool:
    return bool(np.all(np.abs(w - 1.0 / w.shape[0]) <= 1e-12))


def _assignment_plan(C: np.ndarray, a, b) -> np.ndarray:
    """Exact plan for uniform marginals with an integer size ratio.

    The smaller side is expanded by repetition into a square assignment
    problem; Birkhoff's theorem makes the contracted solution optimal for the
    original LP.
    """
    n, m = C.shape
    plan = np.zeros((n, m))
    if n == m:
        ri, ci = linear_sum_assignment(C)
        plan[ri, ci] = 1.0 / n
        return plan
    if n < m:
        q = m // n
        idx = np.repeat(np.arange(n), q)
        ri, ci = linear_sum_assignment(C[idx, :])
        np.add.at(plan, (idx[ri], ci), 1.0 / m)
    else:
        q = n // m
        idx = np.repeat(np.arange(m), q)
        ri, ci = linear_sum_assignment(C[:, idx])
        np.add.at(plan, (ri, idx[ci]), 1.0 / n)
    return plan


def _linprog_plan(C: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, m = C.shape
    cols = np.arange(n * m)
    ones = np.ones(n * m)
    A_eq = sparse.vstack([
        sparse.coo_matrix((ones, (np.repeat(np.arange(n), m), cols)),
                          shape=(n, n * m)),
        sparse.coo_matrix((ones, (np.tile(np.arange(m), n), cols)),
                          shape=(m, n * m)),
    ]).tocsc()
    b_eq = np.concatenate([a, b])
    # drop one redundant constraint so the system has full row rank
    res = linprog(C.ravel(), A_eq=A_eq[:-1], b_eq=b_eq[:-1],
                  bounds=(0, None), method="highs")
    if res.status != 0:
        raise ConvergenceError(f"exact OT LP failed: {res.message}")
    plan = res.x.reshape(n, m)
    # clean tiny solver noise so the plan passes feasibility validation
    plan = np.maximum(plan, 0.0)
    plan *= a.sum() / plan.sum()
    return plan


def solve_exact(a, b, C: CostMatrix | np.ndarray) -> tuple[TransportPlan, float]:
    """Solve the discrete OT problem exactly.

    Returns the optimal coupling and its cost <plan, C>.
    """
    Cv = C.values if isinstance(C, CostMatrix) else np.asarray(C, dtype=float)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    n, m = Cv.shape
    _check_marginals(a, b, n, m)
    uniform = _is_uniform(a) and _is_uniform(b)
    divisible = max(n, m) % min(n, m) == 0
    if uniform and divisible:
        plan = _assignment_plan(Cv, a, b)
    else:
        plan = _linprog_plan(Cv, a, b)
    cost = float((plan * Cv).sum())
    return TransportPlan(plan, a, b), cost


def solve_entropic(a, b, C: CostMatrix | np.ndarray, epsilon: float,
                   max_iter: int = 10_000, tol: float = 1e-9,
                   ) -> tuple[TransportPlan, float]:
    """Entropy-regularized OT via log-domain Sinkhorn iterations.

    The returned cost is <plan, C> without the entropy term. If the marginal
    violation is still above ``tol`` at ``max_iter``, the plan is returned
    with its feasibility tolerance widened to the observed violation.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    Cv = C.values if isinstance(C, CostMatrix) else np.asarray(C, dtype=float)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    n, m = Cv.shape
    _check_marginals(a, b, n, m)

    loga = np.log(np.maximum(a, 1e-300))
    logb = np.log(np.maximum(b, 1e-300))
    f = np.zeros(n)
    g = np.zeros(m)

    # epsilon scaling: anneal from median(C) down to the target, warm-starting
    # the potentials at each level
    levels = []
    e = float(np.median(Cv)) if Cv.size else epsilon
    while e > 2.0 * epsilon:
        levels.append(e)
        e /= 2.0
    for eps in levels:
        f, g, _ = _sinkhorn_potentials(Cv, loga, logb, f, g, eps,
                                       max_iter=30, a=a, b=b, tol=0.0)
    f, g, violation = _sinkhorn_potentials(Cv, loga, logb, f, g, epsilon,
                                           max_iter=max_iter, a=a, b=b, tol=tol)

    plan = np.exp((-Cv + f[:, None] + g[None, :]) / epsilon)
    if not np.all(np.isfinite(plan)):
        raise ConvergenceError("entropic solver produced non-finite plan")
    violation = max(
        float(np.max(np.abs(plan.sum(axis=1) - a))),
        float(np.max(np.abs(plan.sum(axis=0) - b))),
    )
    cost = float((plan * Cv).sum())
    return TransportPlan(plan, a, b, marginal_tol=max(1e-8, violation)), cost


def _sinkhorn_potentials(Cv, loga, logb, f, g, eps, max_iter, a, b, tol):
    """Run log-domain Sinkhorn updates at one epsilon level.

    The f-update runs last, so row marginals are satisfied exactly and the
    violation is measured on the columns.
    """
    keps = -Cv / eps
    violation = np.inf
    for it in range(max_iter):
        g = eps * (logb - _logsumexp_cols(keps + f[:, None] / eps))
        f = eps * (loga - _logsumexp_rows(keps + g[None, :] / eps))
        if tol > 0 and (it % 5 == 4 or it == max_iter - 1):
            plan = np.exp(keps + (f[:, None] + g[None, :]) / eps)
            violation = float(np.max(np.abs(plan.sum(axis=0) - b)))
            if violation <= tol:
                break
    return f, g, violation


def _logsumexp_rows(mat: np.ndarray) -> np.ndarray:
    mx = mat.max(axis=1)
    return mx + np.log(np.exp(mat - mx[:, None]).sum(axis=1))


def _logsumexp_cols(mat: np.ndarray) -> np.ndarray:
    mx = mat.max(axis=0)
    return mx + np.log(np.exp(mat - mx[None, :]).sum(axis=0))


def solve_auto(a, b, C: CostMatrix | np.ndarray) -> tuple[TransportPlan, float]:
    """Exact plan up to EXACT_SIZE_LIMIT coupling entries, entropic above.

    The entropic epsilon is 0.05 * median(C), which keeps the regularization
    scale-invariant.
    """
    Cv = C.values if isinstance(C, CostMatrix) else np.asarray(C, dtype=float)
    if Cv.size <= EXACT_SIZE_LIMIT:
        return solve_exact(a, b, Cv)
    eps = 0.05 * float(np.median(Cv))
    if eps <= 0:
        eps = 1e-6
    return solve_entropic(a, b, Cv, epsilon=eps, max_iter=2000, tol=1e-7)


def barycentric_map(plan: TransportPlan, y: np.ndarray) -> np.ndarray:
    """Conditional mean of ``y`` under the plan: row i of the output is
    sum_j plan_ij y_j / sum_j plan_ij."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    g = plan.coupling
    if g.shape[1] != y.shape[0]:
        raise ValueError("plan columns do not match the target points")
    row_mass = g.sum(axis=1)
    if np.any(row_mass <= 0):
        raise ValueError("plan has a zero row marginal; map is undefined")
    return (g @ y) / row_mass[:, None]


def _points_and_labels(measure):
    if isinstance(measure, LabeledEmpiricalMeasure):
        return measure.points, measure.weights, measure.soft_labels()
    if isinstance(measure, EmpiricalMeasure):
        return measure.points, measure.weights, None
    raise TypeError(f"unsupported measure type: {type(measure).__name__}")


def w2_empirical(p, q, beta: float = 0.0) -> float:
    """2-Wasserstein distance between two (optionally labeled) measures.

    Uses the joint feature-label cost when both measures carry labels and
    beta > 0. Exact plans below EXACT_SIZE_LIMIT entries, entropic above.
    """
    xp, wp, lp = _points_and_labels(p)
    xq, wq, lq = _points_and_labels(q)
    if lp is None or lq is None or beta == 0.0:
        C = joint_cost(xp, xq, beta=0.0)
    else:
        C = joint_cost(xp, xq, lp, lq, beta=beta)
    _, cost = solve_auto(wp, wq, C)
    return float(np.sqrt(max(cost, 0.0)))

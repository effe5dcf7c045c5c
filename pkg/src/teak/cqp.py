"""Constrained least squares behind transient calibration.

Solves::

    min_b ||y - X b||^2
    s.t.  b >= 0
          y_i - X_i b >= 0      for every supported sample i   (pointwise)
          w.y >= w.(X b)                                       (moment)

where ``w`` are trapezoid quadrature weights.  ``p`` (columns of ``X``) is
tiny while ``N`` can be large, so a primal active-set method runs on a
pruned pool of pointwise rows and rows are added back while any is
violated.  A pointwise row takes part only if some column of ``X`` is
above ``pos_tol`` times that column's maximum there; near-zero regressor
values carry no information about ``b`` and only add noise-driven bounds.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import DomainError, InfeasibleError, NumericalError

POS_TOL = 1e-6
FEAS_TOL_REL = 1e-9
PRUNE_ROWS = 1000


@dataclass(frozen=True, eq=False)
class TccoProblem:
    y: np.ndarray
    X: np.ndarray
    quad_weights: np.ndarray
    enforce_pointwise: bool = True
    enforce_moment: bool = True
    feas_tol: float | None = None
    pos_tol: float = POS_TOL
    max_iter: int | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        w = np.asarray(self.quad_weights, dtype=float)
        if y.ndim != 1 or X.ndim != 2 or X.shape[0] != y.size or w.shape != y.shape:
            raise DomainError(f"shape mismatch: y {y.shape}, X {X.shape}, weights {w.shape}")
        n, p = X.shape
        if p < 1 or n < p or n < 8:
            raise DomainError(f"need N >= p >= 1 and N >= 8, got N={n}, p={p}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X)) and np.all(np.isfinite(w))):
            raise DomainError("problem data must be finite")
        if np.any(w <= 0):
            raise DomainError("quadrature weights must be positive")
        if not self.pos_tol >= 0:
            raise DomainError("pos_tol must be nonnegative")
        feas = self.feas_tol
        if feas is None:
            feas = FEAS_TOL_REL * float(np.max(np.abs(y)))
        if feas < 0:
            raise DomainError("feas_tol must be nonnegative")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "quad_weights", w)
        object.__setattr__(self, "feas_tol", float(feas))
        object.__setattr__(self, "max_iter", int(self.max_iter or 10 * p * n))

    @property
    def n_params(self) -> int:
        return self.X.shape[1]

    def support_rows(self) -> np.ndarray:
        """Rows whose pointwise constraint is enforced."""
        if not self.enforce_pointwise:
            return np.zeros(0, dtype=int)
        colmax = self.X.max(axis=0)
        thr = np.where(colmax > 0, self.pos_tol * colmax, np.inf)
        return np.flatnonzero(np.any(self.X > thr, axis=1))

    def objective(self, b) -> float:
        r = self.y - self.X @ np.asarray(b, dtype=float)
        return float(r @ r)


@dataclass(frozen=True, eq=False)
class TccoSolution:
    b: np.ndarray
    residuals: np.ndarray
    objective: float
    active_set: tuple = ()
    kkt_residual: float = float("nan")
    iterations: int = 0
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class _Constraints:
    """Rows ``G b <= h`` with labels ``(kind, index)``."""

    G: np.ndarray
    h: np.ndarray
    labels: list


def _constraint_rows(problem: TccoProblem, rows: np.ndarray) -> _Constraints:
    X, y, w = problem.X, problem.y, problem.quad_weights
    p = problem.n_params
    G = [-np.eye(p)]
    h = [np.zeros(p)]
    labels = [("nonneg", j) for j in range(p)]
    if rows.size:
        G.append(X[rows])
        h.append(y[rows])
        labels += [("pointwise", int(i)) for i in rows]
    if problem.enforce_moment:
        # Scaled by 1/sum(w) so the row is in flux units like the others.
        wsum = w.sum()
        G.append((w @ X)[None, :] / wsum)
        h.append(np.array([w @ y / wsum]))
        labels.append(("moment", 0))
    return _Constraints(np.vstack(G), np.concatenate(h), labels)


def _initial_pool(problem: TccoProblem, support: np.ndarray) -> np.ndarray:
    if support.size <= PRUNE_ROWS:
        return support
    X, y = problem.X[support], problem.y[support]
    keep = set()
    colmax = X.max(axis=0)
    for j in range(problem.n_params):
        if colmax[j] <= 0:
            continue
        ok = np.flatnonzero(X[:, j] > problem.pos_tol * colmax[j])
        ratio = y[ok] / X[ok, j]
        keep.update(ok[np.argsort(ratio, kind="stable")[:PRUNE_ROWS]].tolist())
    keep.update(np.flatnonzero(y < 0)[:PRUNE_ROWS].tolist())
    return support[np.array(sorted(keep), dtype=int)]


def _null_space(A: np.ndarray, p: int) -> np.ndarray:
    if A.shape[0] == 0:
        return np.eye(p)
    _, s, vt = np.linalg.svd(A)
    rank = int(np.sum(s > 1e-12 * s[0]))
    return vt[rank:].T


def _feasible_start(problem: TccoProblem, cons: _Constraints) -> tuple[np.ndarray, np.ndarray]:
    """A point satisfying ``G b <= h + s`` with minimal uniform slack ``s``."""
    p = problem.n_params
    if np.min(cons.h) >= 0:
        return np.zeros(p), cons.h
    # Variables (b, s): minimise s subject to G b - s <= h, s >= 0.
    n_c = cons.G.shape[0]
    A = np.hstack([cons.G, -np.ones((n_c, 1))])
    c = np.zeros(p + 1)
    c[-1] = 1.0
    res = optimize.linprog(c, A_ub=A, b_ub=cons.h, bounds=[(None, None)] * p + [(0, None)],
                           method="highs")
    if res.status != 0:
        raise NumericalError(f"feasibility phase failed: {res.message}")
    slack = float(res.x[-1])
    if slack > problem.feas_tol:
        raise InfeasibleError(
            f"no calibration coefficient satisfies the constraints: smallest uniform "
            f"violation {slack:.3e} exceeds feas_tol {problem.feas_tol:.3e}"
        )
    b = np.maximum(res.x[:p], 0.0)
    return b, cons.h + slack + np.maximum(cons.G @ b - cons.h - slack, 0.0)


def _active_set_qp(problem: TccoProblem, cons: _Constraints, budget: int):
    """Primal active-set method on the rows in ``cons``; returns (b, W, lam, its)."""
    X, y = problem.X, problem.y
    p = problem.n_params
    b, h = _feasible_start(problem, cons)
    G = cons.G
    row_norm = np.linalg.norm(G, axis=1)
    row_norm[row_norm == 0] = 1.0
    scale = max(1.0, float(np.linalg.norm(X.T @ y)))
    mult_tol = 1e-12 * scale

    # Start from a linearly independent subset of the constraints active at b.
    slack = h - G @ b
    W: list[int] = []
    for i in np.flatnonzero(slack <= 1e-14 * (np.abs(h) + row_norm * np.abs(b).sum() + 1e-300)):
        trial = W + [int(i)]
        if np.linalg.matrix_rank(G[trial]) == len(trial):
            W = trial
        if len(W) == p:
            break

    its = 0
    while True:
        its += 1
        if its > budget:
            raise NumericalError(f"active-set method did not converge in {budget} iterations")
        r = y - X @ b
        Z = _null_space(G[W], p)
        if Z.shape[1]:
            u, *_ = np.linalg.lstsq(X @ Z, r, rcond=None)
            d = Z @ u
        else:
            d = np.zeros(p)
        if np.linalg.norm(X @ d) <= 1e-13 * max(1.0, float(np.linalg.norm(y))):
            if not W:
                return b, W, np.zeros(0), its
            lam, *_ = np.linalg.lstsq(G[W].T, X.T @ r, rcond=None)
            lam_scaled = lam * row_norm[W]
            j = int(np.argmin(lam_scaled))
            if lam_scaled[j] >= -mult_tol:
                return b, W, lam, its
            # Ties resolve to the smallest constraint index.
            worst = min(
                (k for k, v in enumerate(lam_scaled) if v <= lam_scaled[j] + 1e-3 * mult_tol),
                key=lambda k: W[k],
            )
            W.pop(worst)
            continue
        gd = G @ d
        alpha, block = 1.0, None
        in_w = np.zeros(G.shape[0], dtype=bool)
        in_w[W] = True
        cand = np.flatnonzero((gd > 1e-15 * row_norm * np.linalg.norm(d)) & ~in_w)
        if cand.size:
            steps = np.maximum(h[cand] - G[cand] @ b, 0.0) / gd[cand]
            k = int(np.argmin(steps))
            if steps[k] < alpha:
                alpha, block = float(steps[k]), int(cand[k])
        b = b + alpha * d
        if block is not None:
            W.append(block)


def solve(problem: TccoProblem) -> TccoSolution:
    """Global minimiser of the calibration least-squares problem.

    Raises
    ------
    InfeasibleError
        No ``b`` satisfies the constraints within ``problem.feas_tol``.
    NumericalError
        The iteration budget ``problem.max_iter`` was exhausted.
    """
    support = problem.support_rows()
    pool = _initial_pool(problem, support)
    total_its = 0
    while True:
        cons = _constraint_rows(problem, pool)
        b, W, lam, its = _active_set_qp(problem, cons, problem.max_iter - total_its)
        total_its += its
        if support.size == pool.size:
            break
        viol = problem.X[support] @ b - problem.y[support]
        tol = problem.feas_tol
        bad = support[viol > tol]
        bad = np.setdiff1d(bad, pool)
        if bad.size == 0:
            break
        order = np.argsort(-(problem.X[bad] @ b - problem.y[bad]), kind="stable")
        pool = np.union1d(pool, bad[order[:PRUNE_ROWS]])
    residuals = problem.y - problem.X @ b
    sol = TccoSolution(
        b=b,
        residuals=residuals,
        objective=float(residuals @ residuals),
        active_set=tuple(cons.labels[i] for i in W),
        iterations=total_its,
        multipliers=np.asarray(lam, dtype=float),
    )
    return _with_kkt(problem, sol)


def _with_kkt(problem, sol):
    return dataclasses.replace(sol, kkt_residual=check_kkt(problem, sol))


def check_kkt(problem: TccoProblem, solution: TccoSolution) -> float:
    """Largest violation of the KKT conditions at ``solution.b``.

    Works in column-normalised coordinates so every term is in the units of
    ``y``: stationarity with nonnegative multipliers fitted on the active
    constraints, complementary slackness and primal infeasibility over all
    constraints.  The active set is the solver's working set when the
    solution carries one; otherwise constraints with slack below
    ``1e-8 * (1 + max|y|)`` count as active.  (On dense grids neighbouring
    pointwise rows are nearly parallel and sit within that slack of each
    other, so tolerance detection there can load huge multipliers onto
    rows that are not binding.)
    """
    X, y = problem.X, problem.y
    b = np.asarray(solution.b, dtype=float)
    colnorm = np.linalg.norm(X, axis=0)
    colnorm[colnorm == 0] = 1.0
    Xs = X / colnorm
    bs = b * colnorm
    cons = _constraint_rows(problem, problem.support_rows())
    # Constraint rows in the scaled coordinates (the nonneg rows only change length).
    Gs = cons.G / colnorm
    Gs[: problem.n_params] = -np.eye(problem.n_params)
    slack = cons.h - Gs @ bs
    primal = float(np.max(np.maximum(-slack, 0.0), initial=0.0))

    r = y - Xs @ bs
    grad = Xs.T @ r  # minus half the objective gradient
    if solution.active_set:
        index = {label: i for i, label in enumerate(cons.labels)}
        active = np.array(sorted(index[label] for label in solution.active_set if label in index), dtype=int)
    else:
        act_tol = 1e-8 * (1.0 + float(np.max(np.abs(y))))
        active = np.flatnonzero(slack <= act_tol)
    if active.size:
        lam, _ = optimize.nnls(Gs[active].T, grad)
        stat = float(np.linalg.norm(grad - Gs[active].T @ lam))
        comp = float(np.max(np.abs(lam * slack[active]), initial=0.0))
    else:
        stat = float(np.linalg.norm(grad))
        comp = 0.0
    return max(stat, comp, primal)


def oracle_1d(
    y,
    x,
    quad_weights,
    pos_tol: float = POS_TOL,
    enforce_pointwise: bool = True,
    enforce_moment: bool = True,
) -> float:
    """Closed-form minimiser of the single-regressor problem.

    The feasible set is an interval ``[0, b_max]`` and the objective a 1-D
    convex quadratic, so the answer is the clamped least-squares slope.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    w = np.asarray(quad_weights, dtype=float)
    xx = float(x @ x)
    if xx == 0:
        raise DomainError("regressor is identically zero")
    b_ols = float(x @ y) / xx
    b_max = np.inf
    if enforce_pointwise and x.max() > 0:
        pos = x > pos_tol * x.max()
        if np.any(pos):
            b_max = min(b_max, float(np.min(y[pos] / x[pos])))
    if enforce_moment and w @ x > 0:
        b_max = min(b_max, float(w @ y) / float(w @ x))
    return float(min(max(b_ols, 0.0), b_max))

"""Independent reference computations used by the tests."""
import numpy as np


def lattice_minimum_2d(y, X, w, enforce_pointwise=True, enforce_moment=True,
                       pos_tol=1e-6, step=1e-3, upper=3.0):
    """Exhaustive search over the lattice ``{0, step, ..., upper}**2``.

    Feasibility of every lattice point is decided exactly: for each value of
    ``b1`` the linear constraints cut the ``b2`` axis to an interval.
    Returns the feasible lattice point with the smallest objective, or
    ``None`` if there is none.
    """
    grid = np.arange(0.0, upper + 0.5 * step, step)
    rows = np.zeros(len(y), dtype=bool)
    if enforce_pointwise:
        colmax = X.max(axis=0)
        thr = np.where(colmax > 0, pos_tol * colmax, np.inf)
        rows = np.any(X > thr, axis=1)
    A = list(X[rows])
    c = list(y[rows])
    if enforce_moment:
        A.append(w @ X)
        c.append(w @ y)
    lo = np.zeros(grid.size)
    hi = np.full(grid.size, upper)
    ok = np.ones(grid.size, dtype=bool)
    for (a1, a2), ci in zip(A, c):
        rest = ci - a1 * grid  # need a2 * b2 <= rest
        if a2 > 0:
            hi = np.minimum(hi, rest / a2)
        elif a2 < 0:
            lo = np.maximum(lo, rest / a2)
        else:
            ok &= rest >= 0
    with np.errstate(invalid="ignore"):
        k_lo = np.ceil(lo / step - 1e-9)
        k_hi = np.floor(hi / step + 1e-9)
    ok &= k_lo <= k_hi
    big = grid.size + 1
    k_lo = np.clip(np.nan_to_num(k_lo, nan=0, posinf=big, neginf=0), -1, big).astype(int)
    k_hi = np.clip(np.nan_to_num(k_hi, nan=-1, posinf=big, neginf=-1), -1, big).astype(int)
    if not ok.any():
        return None
    H = X.T @ X
    g = X.T @ y
    k_lo = np.clip(k_lo, 0, grid.size - 1)
    k_hi = np.clip(k_hi, 0, grid.size - 1)
    # For fixed b1 the objective is convex in b2, so the best lattice b2 in
    # [k_lo, k_hi] is the floor or ceiling of the unconstrained minimiser.
    if H[1, 1] > 0:
        star = (g[1] - H[0, 1] * grid) / H[1, 1] / step
    else:
        star = np.where(g[1] - H[0, 1] * grid > 0, k_hi, k_lo).astype(float)
    best_val = np.full(grid.size, np.inf)
    best_k = np.zeros(grid.size, dtype=int)
    for cand in (np.floor(star), np.ceil(star)):
        kc = np.clip(cand.astype(int), k_lo, k_hi)
        b2 = kc * step
        val = (H[0, 0] * grid**2 + 2 * H[0, 1] * grid * b2 + H[1, 1] * b2**2
               - 2 * (g[0] * grid + g[1] * b2))
        val = np.where(ok, val, np.inf)
        better = val < best_val
        best_val[better] = val[better]
        best_k[better] = kc[better]
    i = int(np.argmin(best_val))
    return np.array([grid[i], best_k[i] * step])


def random_feasible_instance(rng, n=40, p=2, enforce_pointwise=True):
    """Separated-peak regressors and a DV built from a positive combination.

    With the pointwise constraint the DV is inflated sample by sample so
    ``b_true`` stays feasible; otherwise Gaussian noise is added.
    """
    t = np.linspace(0.0, 3.0, n)
    X = np.empty((n, p))
    centers = np.linspace(0.5, 2.5, p) + rng.uniform(-0.1, 0.1, p)
    for j in range(p):
        X[:, j] = np.exp(-0.5 * ((t - centers[j]) / rng.uniform(0.25, 0.45)) ** 2)
    X *= rng.uniform(0.5, 2.0, p)
    b_true = rng.uniform(0.2, 1.5, p)
    y = X @ b_true
    if enforce_pointwise:
        y = y * rng.uniform(1.0, 1.3, n)
    else:
        y = y + rng.normal(0, 0.05, n)
    w = np.full(n, t[1] - t[0])
    w[[0, -1]] *= 0.5
    return y, X, w


def random_1d(rng):
    """Mixed single-regressor instances: interior, pointwise-bound, moment-bound and b = 0 cases."""
    n = int(rng.integers(8, 80))
    kind = rng.integers(0, 4)
    y, X, w = random_feasible_instance(rng, n=n, p=1, enforce_pointwise=kind != 1)
    if kind == 2:
        y = y + rng.normal(0, 0.02, n) * (X[:, 0] > 1e-3)
        y = np.maximum(y, 0)
    elif kind == 3:
        y = y[::-1].copy()
    flags = dict(enforce_pointwise=bool(rng.integers(0, 2)), enforce_moment=bool(rng.integers(0, 2)))
    # Negative DV samples make the pointwise constraint infeasible.
    flags["enforce_pointwise"] = flags["enforce_pointwise"] and bool(np.all(y >= 0))
    flags["enforce_moment"] = flags["enforce_moment"] and bool(w @ y >= 0)
    return y, X, w, flags

"""Minimax (Chebyshev) affine fitting via linear programming.

The central problem: given sample rows x and targets y, minimize the margin
lam subject to |c . x - y| <= lam for every sample, with box bounds on the
free coefficients and any subset of coefficients held fixed. The margin of
the returned fit is always recomputed from the final coefficients, so the
reported (coefficients, margin) pair satisfies every sample constraint
exactly, not just up to solver tolerance.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import lstsq
from scipy.optimize import linprog

from . import runtime

__all__ = [
    "ChebyshevFitProblem",
    "FitResult",
    "solve_chebyshev_lp",
    "least_squares_fit",
    "residual_margin",
    "vertex_enumeration_optimum",
]

# HiGHS defaults (1e-7) are too loose for the 1e-7 cross-checks downstream.
_LP_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


@dataclass
class ChebyshevFitProblem:
    """One minimax fit instance.

    design       full K x (d+1) template matrix, rows (1, x_1, ..., x_d)
    targets      length-K vector of observed values
    free_idx     column indices (over 0..d) whose coefficients are decision
                 variables; the rest are pinned to ``fixed_coeffs``
    fixed_coeffs full-length coefficient vector supplying pinned values
                 (entries at free indices are ignored); defaults to zeros
    bounds       (L, U) box applied to every free coefficient
    """

    design: np.ndarray
    targets: np.ndarray
    free_idx: np.ndarray | None = None
    fixed_coeffs: np.ndarray | None = None
    bounds: tuple[float, float] = (-100.0, 100.0)

    def __post_init__(self):
        self.design = np.asarray(self.design, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.design.ndim != 2 or self.design.shape[0] < 1:
            raise ValueError("design must be a K x (d+1) matrix with K >= 1")
        if self.targets.shape != (self.design.shape[0],):
            raise ValueError("targets length must match the number of design rows")
        if not (np.all(np.isfinite(self.design)) and np.all(np.isfinite(self.targets))):
            raise ValueError("design and targets must be finite")
        width = self.design.shape[1]
        if self.free_idx is None:
            self.free_idx = np.arange(width)
        else:
            self.free_idx = np.unique(np.asarray(self.free_idx, dtype=np.int64))
            if self.free_idx.size == 0:
                raise ValueError("free_idx must be nonempty")
            if self.free_idx[0] < 0 or self.free_idx[-1] >= width:
                raise ValueError(f"free_idx out of range for {width} columns")
        if self.fixed_coeffs is None:
            self.fixed_coeffs = np.zeros(width)
        else:
            self.fixed_coeffs = np.asarray(self.fixed_coeffs, dtype=np.float64)
            if self.fixed_coeffs.shape != (width,):
                raise ValueError("fixed_coeffs must be a full-length coefficient vector")
        lo, hi = float(self.bounds[0]), float(self.bounds[1])
        if not lo <= hi:
            raise ValueError(f"coefficient bounds are empty: [{lo}, {hi}]")
        self.bounds = (lo, hi)

    @property
    def n_free(self) -> int:
        return self.free_idx.size

    def split(self):
        """Free design block, fixed contribution, and adjusted targets."""
        width = self.design.shape[1]
        fixed_mask = np.ones(width, dtype=bool)
        fixed_mask[self.free_idx] = False
        x_free = self.design[:, self.free_idx]
        fixed_part = self.design[:, fixed_mask] @ self.fixed_coeffs[fixed_mask]
        return x_free, fixed_part, self.targets - fixed_part

    def merge(self, free_values: np.ndarray) -> np.ndarray:
        coeffs = self.fixed_coeffs.copy()
        coeffs[self.free_idx] = free_values
        return coeffs

    def residuals(self, coefficients: np.ndarray) -> np.ndarray:
        return self.design @ coefficients - self.targets


@dataclass
class FitResult:
    coefficients: np.ndarray
    margin: float
    status: str  # "optimal" | "infeasible" | "numeric_failure"
    detail: str = field(default="", repr=False)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _tie_break_l2(x_free, adj_targets, lam, lo, hi, start):
    """Among coefficient vectors feasible at margin ``lam``, pick the one with
    the smallest L2 norm (the problem is strictly convex, so it is unique).

    The QP is solved with a small feasibility cushion for the interior-point
    solver's sake, then the answer is pulled back along the segment toward
    the exactly-feasible LP vertex ``start`` until it re-enters the true
    tube, so tie-breaking never inflates the reported margin. Falls back to
    ``start`` if the QP does not converge.
    """
    import clarabel

    k, d = x_free.shape
    cushion = 1e-9 * max(1.0, abs(lam))
    p_mat = sparse.identity(d, format="csc") * 2.0
    x_sp = sparse.csc_matrix(x_free)
    eye = sparse.identity(d, format="csc")
    a_mat = sparse.vstack([x_sp, -x_sp, eye, -eye], format="csc")
    b_vec = np.concatenate(
        [
            adj_targets + lam + cushion,
            -(adj_targets - lam - cushion),
            np.full(d, hi),
            np.full(d, -lo),
        ]
    )
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    solver = clarabel.DefaultSolver(
        p_mat, np.zeros(d), a_mat, b_vec, [clarabel.NonnegativeConeT(a_mat.shape[0])], settings
    )
    solution = solver.solve()
    if str(solution.status) not in ("Solved", "AlmostSolved"):
        return start
    candidate = np.asarray(solution.x, dtype=np.float64)

    def worst(coeffs):
        return np.abs(x_free @ coeffs - adj_targets).max()

    # The LP vertex is exactly feasible at its own margin; allow the QP
    # answer only interior-point-sized slack beyond that before pulling it
    # back, so the recomputed margin stays at the LP optimum to ~1e-9.
    target = worst(start)
    slack = 1e-9 * max(1.0, target) + 1e-9
    if worst(candidate) <= target + slack:
        return candidate
    lo_s, hi_s = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo_s + hi_s)
        if worst(candidate + mid * (start - candidate)) <= target + slack:
            hi_s = mid
        else:
            lo_s = mid
    return candidate + hi_s * (start - candidate)


def solve_chebyshev_lp(problem: ChebyshevFitProblem, tie_break: bool = True) -> FitResult:
    """Solve the minimax fit exactly with a dense LP (HiGHS).

    Among optimal coefficient vectors the L2-smallest one is selected,
    which makes the result deterministic and unique. The returned margin
    is the exact maximum absolute residual of the returned coefficients.
    """
    x_free, _, adj = problem.split()
    k, d = x_free.shape
    lo, hi = problem.bounds
    a_ub = np.block([[x_free, -np.ones((k, 1))], [-x_free, -np.ones((k, 1))]])
    b_ub = np.concatenate([adj, -adj])
    cost = np.zeros(d + 1)
    cost[-1] = 1.0
    var_bounds = [(lo, hi)] * d + [(0.0, None)]
    result = linprog(
        cost, A_ub=a_ub, b_ub=b_ub, bounds=var_bounds, method="highs", options=_LP_OPTIONS
    )
    if result.status == 2:
        return FitResult(
            coefficients=problem.fixed_coeffs.copy(),
            margin=math.inf,
            status="infeasible",
            detail=result.message,
        )
    if result.status != 0:
        return FitResult(
            coefficients=problem.fixed_coeffs.copy(),
            margin=math.inf,
            status="numeric_failure",
            detail=result.message,
        )
    lam = float(result.fun)
    free_values = np.asarray(result.x[:d], dtype=np.float64)
    if tie_break:
        free_values = _tie_break_l2(x_free, adj, lam, lo, hi, free_values)
    np.clip(free_values, lo, hi, out=free_values)
    coefficients = problem.merge(free_values)
    margin = float(np.abs(problem.residuals(coefficients)).max())
    return FitResult(coefficients=coefficients, margin=margin, status="optimal")


def least_squares_fit(design: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Ordinary least squares; rank-deficient systems get the minimum-norm
    solution (complete orthogonal factorization)."""
    design = np.asarray(design, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if not (np.all(np.isfinite(design)) and np.all(np.isfinite(targets))):
        raise ValueError("least squares inputs must be finite")
    solution, _, _, _ = lstsq(design, targets, lapack_driver="gelsy")
    return solution


def residual_margin(components, points: np.ndarray, oracle, label: int, untargeted: bool = False) -> float:
    """Worst absolute error of per-component affine models over fresh points.

    ``components`` is an iterable of full coefficient vectors (1, x_1..x_m
    template), one per rival label in ascending order, or a single vector
    in untargeted mode.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise ValueError("residual_margin needs a nonempty batch of points")
    coeff = np.atleast_2d(np.asarray(list(components), dtype=np.float64))
    if untargeted:
        truth = runtime.untargeted_score_difference_batch(oracle, points, label)[:, None]
    else:
        truth = runtime.score_difference_batch(oracle, points, label)
    if truth.shape[1] != coeff.shape[0]:
        raise ValueError(
            f"{coeff.shape[0]} component models but {truth.shape[1]} score-difference components"
        )
    design = np.column_stack([np.ones(points.shape[0]), points])
    predictions = design @ coeff.T
    return float(np.abs(predictions - truth).max())


def vertex_enumeration_optimum(problem: ChebyshevFitProblem, max_systems: int = 2_000_000) -> FitResult:
    """Independent exact solver: enumerate basic feasible points of the LP.

    Exponential in the instance size and intended only as a test oracle for
    small problems; errors out rather than attempt anything large.
    """
    x_free, _, adj = problem.split()
    k, d = x_free.shape
    n_vars = d + 1
    systems = math.comb(2 * k + 2 * d + 1, n_vars)
    if systems > max_systems:
        raise ValueError(
            f"instance needs {systems} candidate bases, above the guard of {max_systems}"
        )
    lo, hi = problem.bounds
    # Constraint rows a . (c, lam) <= b.
    rows = np.vstack(
        [
            np.column_stack([x_free, -np.ones(k)]),
            np.column_stack([-x_free, -np.ones(k)]),
            np.column_stack([np.eye(d), np.zeros(d)]),
            np.column_stack([-np.eye(d), np.zeros(d)]),
            np.concatenate([np.zeros(d), [-1.0]])[None, :],
        ]
    )
    rhs = np.concatenate([adj, -adj, np.full(d, hi), np.full(d, -lo), [0.0]])
    combos = np.array(list(itertools.combinations(range(rows.shape[0]), n_vars)))
    mats = rows[combos]
    vecs = rhs[combos]
    invertible = np.abs(np.linalg.det(mats)) > 1e-12
    if not invertible.any():
        return FitResult(
            coefficients=problem.fixed_coeffs.copy(),
            margin=math.inf,
            status="numeric_failure",
            detail="no invertible basis",
        )
    candidates = np.linalg.solve(mats[invertible], vecs[invertible][..., None])[..., 0]
    slack = rhs[None, :] - candidates @ rows.T
    feasible = (slack >= -1e-9).all(axis=1)
    if not feasible.any():
        return FitResult(
            coefficients=problem.fixed_coeffs.copy(),
            margin=math.inf,
            status="infeasible",
            detail="no feasible vertex",
        )
    vertices = candidates[feasible]
    best = vertices[np.argmin(vertices[:, -1])]
    coefficients = problem.merge(best[:d])
    return FitResult(coefficients=coefficients, margin=float(best[-1]), status="optimal")

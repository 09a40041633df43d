"""Dirichlet problems for nearest-neighbour walks on conductance networks.

A walk with per-site weights w moves from x to a neighbour y with probability
w(y) / sum_z w(z). Its conductances w(x) w(y) make the Dirichlet problem
symmetric positive definite once the fixed sites are eliminated, so small
systems are factorised directly and large ones use conjugate gradients with an
algebraic multigrid preconditioner.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

DIRECT_SOLVE_LIMIT = 12_000
CG_RTOL = 1e-13


class SolverError(RuntimeError):
    pass


def conductance_matrix(neighbors: np.ndarray, weights: np.ndarray) -> sp.csr_matrix:
    """Sparse matrix of conductances w(x) w(y) between in-region neighbours."""
    n = len(weights)
    rows, slots = np.nonzero(neighbors >= 0)
    cols = neighbors[rows, slots]
    vals = weights[rows] * weights[cols]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def solve_spd(A: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    """Solve A X = rhs for a symmetric positive definite sparse A (rhs may be 2-d)."""
    rhs = np.asarray(rhs, dtype=float)
    squeeze = rhs.ndim == 1
    B = rhs.reshape(len(rhs), -1)
    n = A.shape[0]
    if n == 0:
        return rhs.copy()
    if n <= DIRECT_SOLVE_LIMIT:
        X = sla.splu(sp.csc_matrix(A)).solve(B)
    else:
        import pyamg

        A = sp.csr_matrix(A)
        # Gershgorin ("local") smoother weighting: the default spectral-radius
        # estimate starts from a random vector and breaks bitwise replay.
        smooth = ("jacobi", {"weighting": "local"})
        M = pyamg.smoothed_aggregation_solver(A, smooth=smooth).aspreconditioner()
        X = np.empty_like(B)
        for k in range(B.shape[1]):
            if not np.any(B[:, k]):
                X[:, k] = 0.0
                continue
            x, info = sla.cg(A, B[:, k], M=M, rtol=CG_RTOL, maxiter=2000)
            if info != 0:
                raise SolverError(f"conjugate gradient did not converge (info={info})")
            X[:, k] = x
    return X[:, 0] if squeeze else X


def dirichlet_solve(neighbors: np.ndarray, weights: np.ndarray, outside_weight: float,
                    fixed_mask: np.ndarray, fixed_values: np.ndarray,
                    escape_values: np.ndarray | float = 0.0,
                    slot_values: np.ndarray | None = None) -> np.ndarray:
    """Harmonic extension for the walk with weights `weights`.

    Solves h(x) = sum_y p(x, y) h(y) at free sites, with h prescribed on
    `fixed_mask` and equal to `escape_values` on every step leaving the region.
    `slot_values` of shape (n, 2d, k) instead gives the value of each leaving
    step separately. `fixed_values` has shape (n_fixed,) or (n_fixed, k); the
    result has shape (n,) or (n, k) over the whole region.
    """
    weights = np.asarray(weights, dtype=float)
    fixed_mask = np.asarray(fixed_mask, dtype=bool)
    n = len(weights)
    fixed_values = np.asarray(fixed_values, dtype=float)
    squeeze = fixed_values.ndim == 1
    F = fixed_values if fixed_values.ndim == 2 else fixed_values.reshape(int(fixed_mask.sum()), 1)
    k = F.shape[1]
    esc = np.broadcast_to(np.asarray(escape_values, dtype=float), (k,))

    C = conductance_matrix(neighbors, weights)
    n_out = (neighbors < 0).sum(axis=1)
    total = C.sum(axis=1).A1 + weights * outside_weight * n_out
    free = ~fixed_mask
    if np.any(total[free] <= 0):
        raise SolverError("a free site has no outgoing conductance")

    H = np.zeros((n, k))
    H[fixed_mask] = F
    A = sp.diags(total[free]) - C[free][:, free]
    rhs = C[free][:, fixed_mask] @ F
    if slot_values is None:
        rhs += np.outer(weights[free] * outside_weight * n_out[free], esc)
    else:
        leaving = (neighbors < 0)[..., None] * np.asarray(slot_values).reshape(n, neighbors.shape[1], k)
        rhs += (weights[free] * outside_weight)[:, None] * leaving[free].sum(axis=1)
    H[free] = solve_spd(A, rhs).reshape(-1, k)
    return H[:, 0] if squeeze else H


def one_step_average(neighbors: np.ndarray, prob: np.ndarray, values: np.ndarray,
                     sites: np.ndarray, outside_value: float = 0.0) -> np.ndarray:
    """E[h(X_1)] from each of `sites`, with h = outside_value off the region."""
    nb = neighbors[sites]
    inside = nb >= 0
    vals = values[np.where(inside, nb, 0)]
    if values.ndim == 1:
        vals = np.where(inside, vals, outside_value)
        return (prob[sites] * vals).sum(axis=1)
    vals = np.where(inside[..., None], vals, outside_value)
    return np.einsum("sk,skj->sj", prob[sites], vals)

"""Re-expressing differently shuffled, numerically close vectors in one frame.

Two revealed vectors ``x_a' = x_a P_a`` and ``x_b' = x_b P_b`` are matched by
the permutation ``M`` minimising ``||x_a' - x_b' M||``.  That is a linear
assignment problem on the squared-difference cost matrix; it is solved
either by the Hungarian method or, because the cost is a 1-D squared
distance, by matching sort ranks.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .permutation import Permutation

SOLVERS = ("sorted", "hungarian", "both")


class AlignmentError(RuntimeError):
    pass


def cost_matrix(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """``D[i, j] = (xa[i] - xb[j])**2``.  2-D inputs sum the cost over rows."""
    xa, xb = np.asarray(xa, dtype=np.float64), np.asarray(xb, dtype=np.float64)
    if xa.shape != xb.shape:
        raise ValueError(f"shape mismatch {xa.shape} vs {xb.shape}")
    if xa.ndim == 1:
        return (xa[:, None] - xb[None, :]) ** 2
    return ((xa[:, :, None] - xb[:, None, :]) ** 2).sum(axis=0)


def solve_assignment(D: np.ndarray) -> tuple[Permutation, float]:
    """Minimum-cost perfect matching of rows to columns.

    Shortest augmenting paths with dual potentials (the Jonker-Volgenant
    form of the Hungarian method), O(h^3).  Returns the permutation mapping
    row ``i`` to its column ``sigma[i]`` and the total cost.
    """
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError("cost matrix must be square")
    if not np.all(np.isfinite(D)):
        raise ValueError("cost matrix has non-finite entries")
    n = D.shape[0]
    # 1-based bookkeeping; column 0 is a virtual root
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of_col = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            free = ~used
            free[0] = False
            cols = np.nonzero(free)[0]
            cur = D[i0 - 1, cols - 1] - u[i0] - v[cols]
            better = cur < minv[cols]
            minv[cols[better]] = cur[better]
            way[cols[better]] = j0
            j1 = cols[np.argmin(minv[cols])]
            delta = minv[j1]
            u[row_of_col[used]] += delta
            v[used] -= delta
            minv[cols] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    col_of_row[row_of_col[1:] - 1] = np.arange(n)
    return Permutation(col_of_row), float(D[np.arange(n), col_of_row].sum())


def brute_force_assignment(D: np.ndarray) -> tuple[Permutation, float]:
    """Exhaustive search over all h! matchings (h <= 9 or so)."""
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    rows = np.arange(n)
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(n)):
        c = D[rows, perm].sum()
        if c < best_cost:
            best, best_cost = perm, c
    return Permutation(best), float(best_cost)


def solve_assignment_1d(xa: np.ndarray, xb: np.ndarray) -> Permutation:
    """Rank matching: the k-th smallest of ``xa`` pairs with the k-th smallest
    of ``xb``.  Optimal for squared 1-D distances; ties keep stable order.

    Returned in the same row->column convention as :func:`solve_assignment`.
    """
    xa, xb = np.asarray(xa), np.asarray(xb)
    if xa.shape != xb.shape:
        raise ValueError("length mismatch")
    oa = np.argsort(xa, kind="stable")
    ob = np.argsort(xb, kind="stable")
    col_of_row = np.empty(xa.size, dtype=np.int64)
    col_of_row[oa] = ob
    return Permutation(col_of_row)


def matching_to_transform(rows_to_cols: Permutation) -> Permutation:
    """Turn a row(xa)->column(xb) matching into ``M`` with ``M.apply(xb) ~ xa``."""
    return rows_to_cols.inverse()


def alignment_objective(xa: np.ndarray, xb: np.ndarray, M: Permutation) -> float:
    """``||xa - xb M||_2``."""
    return float(np.linalg.norm(np.asarray(xa) - M.apply(np.asarray(xb))))


def assignment_cost(D: np.ndarray, M: Permutation) -> float:
    """The matching objective ``sum_ij M[i, j] D[j, i]`` for a transform ``M``.

    ``M[i, j] = 1`` pairs element ``i`` of ``xb`` with element ``j`` of
    ``xa`` while ``D`` is indexed ``[xa, xb]``, hence the transpose.
    """
    return float(np.sum(M.matrix().T * D))


def match(xa: np.ndarray, xb: np.ndarray, solver: str = "sorted") -> Permutation:
    """Transform ``M`` carrying ``xb`` into the frame of ``xa``."""
    if solver == "sorted":
        return matching_to_transform(solve_assignment_1d(xa, xb))
    if solver == "hungarian":
        return matching_to_transform(solve_assignment(cost_matrix(xa, xb))[0])
    raise ValueError(f"unknown solver {solver!r}")


@dataclass
class AlignedDataset:
    reference_index: int
    X: np.ndarray  # n x h, every row in the reference frame
    transforms: list[Permutation]
    solver: str = "sorted"
    disagreements: int = 0  # rows where the two solvers reached different costs ("both")
    meta: dict = field(default_factory=dict)


def align_dataset(vectors, k: int = 0, solver: str = "sorted") -> AlignedDataset:
    """Align every vector to vector ``k``.

    ``solver="both"`` uses the sort path for the result and runs the
    Hungarian solver on every pair as a cross-check.
    """
    V = np.asarray(vectors, dtype=np.float64)
    if V.ndim != 2 or V.shape[0] < 2:
        raise ValueError("need an n x h array with n >= 2")
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}")
    n, h = V.shape
    ref = V[k]
    transforms: list[Permutation] = []
    if solver in ("sorted", "both"):
        oa = np.argsort(ref, kind="stable")
        ob = np.argsort(V, axis=1, kind="stable")
        X = np.empty_like(V)
        X[:, oa] = np.take_along_axis(V, ob, axis=1)
        for i in range(n):
            col_of_row = np.empty(h, dtype=np.int64)
            col_of_row[oa] = ob[i]
            transforms.append(Permutation(col_of_row).inverse())
        X[k] = ref
        transforms[k] = Permutation.identity(h)
    else:
        X = np.empty_like(V)
        for i in range(n):
            M = Permutation.identity(h) if i == k else match(ref, V[i], "hungarian")
            transforms.append(M)
            X[i] = M.apply(V[i])

    disagreements = 0
    if solver == "both":
        for i in range(n):
            if i == k:
                continue
            D = cost_matrix(ref, V[i])
            _, opt = solve_assignment(D)
            got = assignment_cost(D, transforms[i])
            if not np.isclose(got, opt, rtol=1e-9, atol=1e-300):
                disagreements += 1
    return AlignedDataset(k, X, transforms, solver, disagreements)


def align_matrices(mats, k: int = 0) -> AlignedDataset:
    """Align whole matrices whose columns share one hidden permutation.

    Costs are summed over rows and solved with the Hungarian method; ``X``
    holds the aligned matrices stacked as n x rows x h.
    """
    A = np.asarray(mats, dtype=np.float64)
    ref = A[k]
    out = np.empty_like(A)
    transforms = []
    for i in range(A.shape[0]):
        if i == k:
            M = Permutation.identity(A.shape[-1])
        else:
            M = matching_to_transform(solve_assignment(cost_matrix(ref, A[i]))[0])
        transforms.append(M)
        out[i] = M.apply(A[i])
    return AlignedDataset(k, out, transforms, "hungarian")

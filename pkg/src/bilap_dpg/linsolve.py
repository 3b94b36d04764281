"""Dense and sparse symmetric positive definite linear algebra.

Dense factorizations serve the per-element Gram/Schur work; the sparse
path solves the assembled normal-equation system.  A failed Cholesky on
a Gram matrix signals a formulation bug (those matrices are SPD in
exact arithmetic), so non-SPD input raises instead of falling through.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg


class LinearSolveError(Exception):
    """Factorization or iteration failure."""


class NotPositiveDefiniteError(LinearSolveError):
    """Matrix failed a positive-definiteness test.

    `pivot` is the 0-based index of the first offending pivot when known.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


def _symmetry_defect(a):
    scale = np.abs(a).max()
    if scale == 0:
        return 0.0
    return float(np.abs(a - a.T).max() / scale)


def _find_bad_pivot(a):
    # failure path only: locate the first non-SPD leading minor
    for k in range(1, len(a) + 1):
        try:
            np.linalg.cholesky(a[:k, :k])
        except np.linalg.LinAlgError:
            return k - 1
    return None


def cholesky_spd(a, label="matrix"):
    """Lower Cholesky factor of a dense symmetric matrix.

    Raises NotPositiveDefiniteError naming the first bad pivot.
    """
    a = np.asarray(a, dtype=float)
    if _symmetry_defect(a) > 1e-13 * max(1.0, len(a)):
        raise LinearSolveError(f"{label} is not symmetric")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pivot = _find_bad_pivot(a)
        raise NotPositiveDefiniteError(
            f"{label} is not positive definite (pivot {pivot})", pivot=pivot
        ) from None


def dense_spd_solve(a, rhs):
    """Solve a dense SPD system for one or several right-hand sides."""
    a = np.asarray(a, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    chol = cholesky_spd(a)
    x = scipy.linalg.cho_solve((chol, True), rhs)
    residual = np.linalg.norm(a @ x - rhs)
    tol = 1e-11 * max(np.linalg.norm(rhs), np.abs(a).max() * np.linalg.norm(x), 1e-300)
    if residual > tol:
        raise LinearSolveError(f"dense solve residual {residual:.3e} above tolerance")
    return x


class SparseSymBuilder:
    """Triplet accumulator for a symmetric sparse matrix.

    Duplicate entries are summed on compression; insertion order does
    not affect the compressed values beyond roundoff.
    """

    def __init__(self, n):
        self.n = int(n)
        self._rows = []
        self._cols = []
        self._vals = []

    def add(self, rows, cols, vals):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=float).ravel()
        if not (len(rows) == len(cols) == len(vals)):
            raise ValueError("triplet arrays must have equal length")
        self._rows.append(rows)
        self._cols.append(cols)
        self._vals.append(vals)

    def tocsr(self):
        if self._rows:
            rows = np.concatenate(self._rows)
            cols = np.concatenate(self._cols)
            vals = np.concatenate(self._vals)
        else:
            rows = cols = np.empty(0, dtype=np.int64)
            vals = np.empty(0)
        mat = scipy.sparse.coo_matrix(
            (vals, (rows, cols)), shape=(self.n, self.n)
        ).tocsr()
        mat.sum_duplicates()
        return mat


def sparse_spd_solve(a, b, method="direct", rtol=1e-12):
    """Solve a sparse SPD system.

    Parameters
    ----------
    a : scipy.sparse matrix (symmetric positive definite)
    b : (n,) right-hand side
    method : "direct" (symmetric-mode LU, the default), "cg"
        (Jacobi-preconditioned conjugate gradients), or "auto"
        (direct with CG fallback).
    rtol : float
        CG relative-residual tolerance.

    Raises
    ------
    NotPositiveDefiniteError
        On a nonpositive pivot (direct) or a nonpositive curvature
        direction (CG).
    LinearSolveError
        On residual or iteration-count failure, reporting the count.
    """
    a = a.tocsc()
    b = np.asarray(b, dtype=float)
    defect = abs(a - a.T).max() if a.nnz else 0.0
    scale = abs(a).max() if a.nnz else 1.0
    if defect > 1e-12 * max(scale, 1e-300):
        raise LinearSolveError("matrix is not symmetric")
    if method not in ("direct", "cg", "auto"):
        raise ValueError(f"unknown method {method!r}")
    if method in ("direct", "auto"):
        try:
            return _sparse_direct(a, b)
        except LinearSolveError:
            if method == "direct":
                raise
    return _sparse_cg(a, b, rtol=rtol)


def _sparse_direct(a, b):
    # symmetric Jacobi equilibration first: column scalings of the
    # underlying least-squares problem vary over many orders of
    # magnitude on strongly graded meshes, and the scaled solve is the
    # same problem in rescaled unknowns
    diag = a.diagonal()
    bad = np.nonzero(diag <= 0)[0]
    if bad.size:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (pivot {bad[0]})", pivot=int(bad[0])
        )
    s = 1.0 / np.sqrt(diag)
    scale = scipy.sparse.diags(s)
    a_scaled = (scale @ a @ scale).tocsc()
    # diagonal pivoting in symmetric mode makes LU act as LDL^T, so the
    # U diagonal carries the inertia and certifies positive definiteness.
    # A nonpositive pivot at roundoff scale (possible when the system has
    # near-null directions, e.g. gauge remnants on strongly graded
    # meshes) is retried once with an eps-level shift of the unit-diagonal
    # scaled matrix; genuine indefiniteness survives the shift and raises.
    lu = None
    for shift in (0.0, 1e-12):
        shifted = a_scaled if shift == 0.0 else (
            a_scaled + scipy.sparse.identity(a_scaled.shape[0], format="csc") * shift
        )
        try:
            lu = scipy.sparse.linalg.splu(
                shifted, diag_pivot_thresh=0.0, options=dict(SymmetricMode=True)
            )
        except RuntimeError as exc:
            raise LinearSolveError(f"sparse factorization failed: {exc}") from None
        pivots = lu.U.diagonal()
        bad = np.nonzero(pivots <= 0)[0]
        if bad.size == 0:
            break
        lu = None
    if lu is None:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (pivot {bad[0]})", pivot=int(bad[0])
        )
    def precond(r):
        return s * lu.solve(s * r)

    # LU-preconditioned conjugate gradients: with an exact factorization
    # this converges immediately, and with the shifted factorization it
    # polishes the solution without amplifying near-null directions
    x = _pcg(a, b, precond, rtol=1e-13, maxiter=60)
    residual = np.linalg.norm(a @ x - b)
    tol = 1e-10 * max(
        np.linalg.norm(b), abs(a).max() * np.linalg.norm(x), 1e-300
    )
    if residual > tol:
        raise LinearSolveError(f"direct solve residual {residual:.3e} above tolerance")
    return x


def _pcg(a, b, precond, rtol, maxiter):
    norm_b = np.linalg.norm(b)
    x = np.zeros(len(b))
    if norm_b == 0:
        return x
    r = b.copy()
    z = precond(r)
    p = z.copy()
    rz = r @ z
    best_x, best_res = x.copy(), norm_b
    for _ in range(maxiter):
        ap = a @ p
        pap = p @ ap
        if pap <= 0:
            break
        alpha = rz / pap
        x = x + alpha * p
        r = r - alpha * ap
        res = np.linalg.norm(r)
        if res < best_res:
            best_res, best_x = res, x.copy()
        if res <= rtol * norm_b:
            return x
        z = precond(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return best_x


def _sparse_cg(a, b, rtol=1e-12):
    n = len(b)
    norm_b = np.linalg.norm(b)
    if norm_b == 0:
        return np.zeros(n)
    diag = a.diagonal().copy()
    if np.any(diag <= 0):
        raise NotPositiveDefiniteError(
            "nonpositive diagonal entry", pivot=int(np.argmin(diag))
        )
    inv_diag = 1.0 / diag
    x = np.zeros(n)
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    max_iter = 10 * n
    for it in range(1, max_iter + 1):
        ap = a @ p
        pap = p @ ap
        if pap <= 0:
            raise NotPositiveDefiniteError(
                f"CG found nonpositive curvature at iteration {it}"
            )
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        if np.linalg.norm(r) <= rtol * norm_b:
            return x
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise LinearSolveError(f"CG did not converge within {max_iter} iterations")

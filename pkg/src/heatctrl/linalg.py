"""Sparse symmetric linear algebra: SPD solves and generalized eigen-extremes.

A matrix here is any scipy sparse matrix that is symmetric; the factorization
object is immutable after construction and may be shared across time steps
(the implicit-Euler system matrix never changes within a solve).
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(RuntimeError):
    """Linear solve failed; carries the last relative residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class EigenError(RuntimeError):
    """Eigen-iteration did not converge; carries the last Rayleigh quotient."""

    def __init__(self, message, rayleigh=None, residual=None):
        super().__init__(message)
        self.rayleigh = rayleigh
        self.residual = residual


class SpdFactor:
    """Reusable solver for a sparse SPD matrix.

    method="direct" performs a sparse LU factorization once and reuses it;
    method="cg" runs Jacobi-preconditioned conjugate gradients per solve.
    Both are deterministic across runs.
    """

    def __init__(self, A, method="direct", tol=1e-12, max_iter=None):
        A = sp.csr_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.A = A
        self.n = A.shape[0]
        self.method = method
        self.tol = tol
        self.max_iter = max_iter if max_iter is not None else 20 * self.n
        if method == "direct":
            try:
                self._lu = spla.splu(sp.csc_matrix(A))
            except RuntimeError as exc:
                raise SolverError(f"factorization failed: {exc}") from exc
        elif method == "cg":
            diag = A.diagonal()
            if np.any(diag <= 0):
                raise SolverError("matrix has non-positive diagonal entries")
            self._inv_diag = 1.0 / diag
        else:
            raise ValueError(f"unknown method {method!r}")

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        rhs_norm = np.linalg.norm(rhs)
        if rhs_norm == 0.0:
            return np.zeros_like(rhs)
        if self.method == "direct":
            return self._lu.solve(rhs)
        return self._cg(rhs, rhs_norm)

    def _cg(self, rhs, rhs_norm):
        x = np.zeros_like(rhs)
        r = rhs.copy()
        z = self._inv_diag * r
        d = z.copy()
        rz = r @ z
        for _ in range(self.max_iter):
            Ad = self.A @ d
            alpha = rz / (d @ Ad)
            x += alpha * d
            r -= alpha * Ad
            if np.linalg.norm(r) <= self.tol * rhs_norm:
                return x
            z = self._inv_diag * r
            rz_new = r @ z
            d = z + (rz_new / rz) * d
            rz = rz_new
        residual = np.linalg.norm(rhs - self.A @ x) / rhs_norm
        raise SolverError(
            f"conjugate gradient stalled after {self.max_iter} iterations "
            f"(relative residual {residual:.3e})",
            residual=residual,
        )


def spd_solve(A, rhs, method="direct"):
    """Solve A x = rhs for symmetric positive definite A."""
    return SpdFactor(A, method=method).solve(rhs)


def gen_eig_extreme(A, B, which, tol=1e-10, max_iter=100_000):
    """Extreme generalized eigenvalue of A x = lambda B x.

    B must be SPD and A symmetric positive semidefinite.  "largest" runs
    power iteration on B^{-1} A; "smallest" runs inverse iteration (power
    iteration on A^{-1} B, so A must then be definite).  The start vector is
    all-ones, B-normalized, which keeps the returned constants reproducible.
    """
    if which not in ("smallest", "largest"):
        raise ValueError(f"which must be 'smallest' or 'largest', got {which!r}")
    A = sp.csr_matrix(A)
    B = sp.csr_matrix(B)
    n = A.shape[0]
    iterate = SpdFactor(B) if which == "largest" else SpdFactor(A)

    x = np.ones(n)
    x /= np.sqrt(x @ (B @ x))
    lam = (x @ (A @ x)) / (x @ (B @ x))
    settled = 0
    for _ in range(max_iter):
        y = iterate.solve(A @ x) if which == "largest" else iterate.solve(B @ x)
        nrm = np.sqrt(y @ (B @ y))
        if nrm == 0.0:
            raise EigenError("iteration collapsed to the zero vector", rayleigh=lam)
        x = y / nrm
        lam_new = x @ (A @ x)  # x is B-normalized
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            settled += 1
            if settled >= 2:
                return lam_new
        else:
            settled = 0
        lam = lam_new
    r = A @ x - lam * (B @ x)
    b_factor = iterate if which == "largest" else SpdFactor(B)
    residual = np.sqrt(r @ b_factor.solve(r))
    raise EigenError(
        f"eigen-iteration did not settle within {max_iter} iterations",
        rayleigh=lam,
        residual=residual,
    )

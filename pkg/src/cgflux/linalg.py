"""Sparse CG for the global pressure system and small singular Neumann solves.

The global systems are symmetric positive definite after Dirichlet
elimination and are solved with Jacobi-preconditioned conjugate gradients.
The elemental post-processing systems are singular with the constants in
their nullspace; they are solved through a mean-zero Lagrange-multiplier
augmentation, which fixes the gauge without affecting gradients.
"""
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import CompatibilityError, NonConvergenceError

COMPAT_TOL = 1e-11


def cg_solve(A, b, tol=1e-12, maxit=None, x0=None):
    """Jacobi-preconditioned CG.  Returns (x, iterations).

    Convergence criterion: ||b - A x|| <= tol * ||b|| (2-norm).  Raises
    NonConvergenceError carrying the final relative residual when the
    iteration budget is exhausted.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b)
    if b.dtype != A.dtype:
        b = b.astype(A.dtype)
    n = b.shape[0]
    if maxit is None:
        maxit = max(1000, min(20 * n, 100000))
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n, dtype=b.dtype), 0
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise NonConvergenceError("matrix has nonpositive diagonal; not SPD",
                                  residual=np.inf, iterations=0)
    inv_diag = 1.0 / diag

    x = (np.zeros(n, dtype=b.dtype) if x0 is None
         else np.asarray(x0).astype(b.dtype, copy=True))
    r = b - A @ x
    target = tol * bnorm
    if np.linalg.norm(r) <= target:
        return x, 0
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    best = np.linalg.norm(r)
    stall = 0
    for it in range(1, maxit + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.linalg.norm(r)
        if rnorm <= target:
            return x, it
        # CG stalls at the attainable accuracy of the working precision;
        # accept the best iterate instead of spinning until maxit.  The
        # window is generous so slowly-but-steadily converging systems are
        # not mistaken for stagnation.
        if rnorm < best * (1.0 - 1e-8):
            best = rnorm
            stall = 0
        else:
            stall += 1
            if stall >= 500:
                # recompute a true residual to rule out drift of the recursion
                true_r = b - A @ x
                if np.linalg.norm(true_r) <= target:
                    return x, it
                raise NonConvergenceError(
                    f"CG stagnated at relative residual {rnorm / bnorm:.3e} "
                    f"after {it} iterations (target {tol:.1e})",
                    residual=rnorm / bnorm, iterations=it)
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NonConvergenceError(
        f"CG did not converge in {maxit} iterations "
        f"(relative residual {np.linalg.norm(r) / bnorm:.3e})",
        residual=np.linalg.norm(r) / bnorm, iterations=maxit)


def direct_solve(A, b):
    """Sparse LU solve for SPD systems too large or ill-conditioned for CG.

    Used for heavy reference solves (fine-mesh convergence references)
    where thousands of Jacobi-CG iterations would dominate the runtime.
    """
    lu = splu(sp.csc_matrix(A.astype(np.float64)),
              permc_spec="MMD_AT_PLUS_A", options=dict(SymmetricMode=True))
    return lu.solve(np.asarray(b, dtype=np.float64))


def solve_singular_neumann(A, beta, compat_tol=COMPAT_TOL):
    """Solve the singular elemental system A @ alpha = beta with zero mean.

    Works on a single (N, N) system or a batch (m, N, N) / (m, N).  The
    constants span the nullspace of A (rows and columns sum to zero), so
    solvability requires beta to have (near-)zero sum; the defect is checked
    against `compat_tol` scaled by the data magnitude.
    """
    A = np.asarray(A)
    beta = np.asarray(beta)
    single = A.ndim == 2
    if single:
        A = A[None]
        beta = beta[None]
    m, nk = beta.shape

    scale = 1.0 + np.abs(beta).max(axis=1)
    defect = np.abs(beta.sum(axis=1))
    bad = defect > compat_tol * scale
    if np.any(bad):
        i = int(np.argmax(defect / scale))
        raise CompatibilityError(
            f"incompatible right-hand side: nullspace defect {defect[i]:.3e} "
            f"exceeds tolerance (element {i} of batch)", defect=defect[i])

    out_dtype = np.result_type(A.dtype, beta.dtype)
    # scale the mean-value constraint to the matrix magnitude so the
    # bordered system stays well conditioned for large coefficients
    scale_c = np.maximum(np.abs(A).max(axis=(1, 2)), 1.0)
    aug_w = np.zeros((m, nk + 1, nk + 1), dtype=out_dtype)
    aug_w[:, :nk, :nk] = A
    aug_w[:, nk, :nk] = scale_c[:, None]
    aug_w[:, :nk, nk] = scale_c[:, None]
    rhs = np.zeros((m, nk + 1), dtype=out_dtype)
    rhs[:, :nk] = beta
    # LAPACK only handles double; extended-precision inputs are refined
    # against residuals computed in the wider type
    aug = aug_w.astype(np.float64)
    sol = np.linalg.solve(aug, rhs.astype(np.float64)[..., None])[..., 0]
    if out_dtype != np.float64:
        sol = sol.astype(out_dtype)
        for _ in range(3):
            resid = rhs - np.einsum("mij,mj->mi", aug_w, sol)
            corr = np.linalg.solve(aug, resid.astype(np.float64)[..., None])[..., 0]
            sol = sol + corr.astype(out_dtype)
    alpha = sol[:, :nk]
    return alpha[0] if single else alpha

"""CGFEM assembly and solve for the pressure equation.

Discretizes  -div(K grad p) = q  with K = lambda(S) * kappa(x), Dirichlet
data on the left/right boundaries (imposed by symmetric elimination with a
nodal lifting) and Neumann data on top/bottom.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import quadrature
from .errors import CoefficientError, UnsupportedOrderError
from .linalg import cg_solve, direct_solve
from .mesh import BOTTOM, TOP, DIRICHLET


# ---------------------------------------------------------------------------
# reference basis functions


def shape_values(order, pts):
    """Basis values at reference points (m, 2) -> (m, Nk)."""
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0], pts[:, 1]
    l1 = 1.0 - x - y
    if order == 1:
        return np.column_stack([l1, x, y])
    if order == 2:
        return np.column_stack([
            l1 * (2 * l1 - 1), x * (2 * x - 1), y * (2 * y - 1),
            4 * l1 * x, 4 * x * y, 4 * y * l1,
        ])
    raise UnsupportedOrderError(f"order {order!r}")


def shape_gradients(order, pts):
    """Reference-coordinate gradients at points (m, 2) -> (m, Nk, 2)."""
    pts = np.atleast_2d(pts)
    m = pts.shape[0]
    x, y = pts[:, 0], pts[:, 1]
    if order == 1:
        g = np.empty((m, 3, 2))
        g[:, 0] = (-1.0, -1.0)
        g[:, 1] = (1.0, 0.0)
        g[:, 2] = (0.0, 1.0)
        return g
    if order == 2:
        l1 = 1.0 - x - y
        g = np.empty((m, 6, 2))
        g[:, 0, 0] = 1 - 4 * l1
        g[:, 0, 1] = 1 - 4 * l1
        g[:, 1, 0] = 4 * x - 1
        g[:, 1, 1] = 0.0
        g[:, 2, 0] = 0.0
        g[:, 2, 1] = 4 * y - 1
        g[:, 3, 0] = 4 * (l1 - x)
        g[:, 3, 1] = -4 * x
        g[:, 4, 0] = 4 * y
        g[:, 4, 1] = 4 * x
        g[:, 5, 0] = -4 * y
        g[:, 5, 1] = 4 * (l1 - y)
        return g
    raise UnsupportedOrderError(f"order {order!r}")


def reference_basis(order, barycentric):
    """Values and reference gradients at a barycentric point (l1, l2, l3)."""
    lam = np.asarray(barycentric, dtype=float)
    pt = np.array([[lam[1], lam[2]]])
    return shape_values(order, pt)[0], shape_gradients(order, pt)[0]


# ---------------------------------------------------------------------------
# coefficients and fields


@dataclass
class CoefficientField:
    """Evaluator of K(x) = lambda(S) * kappa(x), elementwise.

    `kappa` maps point arrays (..., 2) to positive values; `elem_scale`
    carries the per-element frozen mobility (None means single phase)."""

    kappa: Callable[[np.ndarray], np.ndarray]
    elem_scale: Optional[np.ndarray] = None

    def eval(self, elems, pts):
        """K at physical points; elems (m,), pts (m, ..., 2)."""
        vals = np.asarray(self.kappa(pts), dtype=float)
        if self.elem_scale is not None:
            scale = self.elem_scale[elems]
            vals = vals * scale.reshape(scale.shape + (1,) * (vals.ndim - 1))
        return vals


@dataclass
class PressureField:
    """Nodal CGFEM solution plus (after post-processing) the per-element
    zero-mean coefficients of the corrected pressure."""

    order: int
    coeffs: np.ndarray                       # (nd,)
    alpha: Optional[np.ndarray] = None       # (nt, Nk), filled by postprocess
    cg_iterations: int = 0

    def element_coeffs(self, dofmap):
        return self.coeffs[dofmap.elem_dofs]


@dataclass
class AssembledSystem:
    """Global system with Dirichlet lifting already applied."""

    matrix: sp.csr_matrix          # full symmetric matrix (all dofs)
    load: np.ndarray               # full load vector (q and Neumann data)
    lifting: np.ndarray            # g_D interpolant (zero off Dirichlet dofs)
    free: np.ndarray               # boolean mask of non-Dirichlet dofs
    reduced_matrix: sp.csr_matrix  # SPD block on free dofs
    reduced_rhs: np.ndarray
    order: int
    quad_degree: int


def stiffness_quad_degree(order, heterogeneous=True):
    # 2k suffices for constant K; heterogeneous coefficients get two extra
    return 2 * order + 2 if heterogeneous else 2 * order


def element_stiffness(mesh, dofmap, K, degree, dtype=np.float64):
    """Element stiffness tensors (nt, Nk, Nk) by triangle quadrature.

    Shared verbatim between global assembly and the post-processing
    right-hand side so the two stay numerically identical.  An extended
    dtype keeps the analytically-zero column sums below the conservation
    gate for large coefficients.
    """
    pts, wts = quadrature.triangle_rule(degree)
    nt = mesh.n_elem
    nk = dofmap.n_local
    elems = np.arange(nt)
    ke = np.zeros((nt, nk, nk), dtype=dtype)
    ref_grads = shape_gradients(dofmap.order, pts)      # (nq, Nk, 2)
    for q in range(len(wts)):
        phys = mesh.x0 + np.einsum("eij,j->ei", mesh.jac, pts[q])
        kval = K.eval(elems, phys)
        if np.any(kval <= 0.0):
            bad = int(np.argmin(kval))
            raise CoefficientError(
                f"nonpositive coefficient {kval[bad]:.3e} at quadrature point "
                f"{tuple(phys[bad])}", location=tuple(phys[bad]))
        grads = np.einsum("eij,kj->eki", mesh.inv_jac_t, ref_grads[q])  # (nt, Nk, 2)
        ke += (wts[q] * kval.astype(dtype) * mesh.det_jac)[:, None, None] * \
            np.einsum("eki,eli->ekl", grads, grads)
    return ke


def _boundary_neumann_load(mesh, dofmap, g_N, degree=5):
    """Load contribution -<g_N, phi> over the top/bottom boundaries."""
    load = np.zeros(dofmap.n_dofs)
    gx, gw = quadrature.segment_rule(degree)
    ref_verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    elems, edges = np.nonzero((mesh.edge_side == BOTTOM) | (mesh.edge_side == TOP))
    if len(elems) == 0:
        return load
    for l in range(3):
        sel = edges == l
        if not np.any(sel):
            continue
        e = elems[sel]
        r0, r1 = ref_verts[l], ref_verts[(l + 1) % 3]
        for t, w in zip(gx, gw):
            ref = r0 + t * (r1 - r0)
            phys = mesh.x0[e] + np.einsum("eij,j->ei", mesh.jac[e], ref)
            tang = np.einsum("eij,j->ei", mesh.jac[e], r1 - r0)
            length = np.linalg.norm(tang, axis=-1)
            vals = shape_values(dofmap.order, ref[None, :])[0]
            contrib = -w * length * np.asarray(g_N(phys), dtype=float)
            np.add.at(load, dofmap.elem_dofs[e],
                      contrib[:, None] * vals[None, :])
    return load


def assemble(mesh, dofmap, K, q=None, g_D=None, g_N=None, quad_degree=None,
             dtype=np.float64):
    """Assemble the pressure system with Dirichlet lifting.

    q, g_D, g_N are vectorized callables on point arrays (or None for zero).
    Returns an AssembledSystem; the reduced block is SPD.  An extended
    dtype makes the scatter of element contributions exact beyond double
    rounding (the element tensors themselves stay double so the
    post-processing right-hand side sees identical values).
    """
    degree = quad_degree or stiffness_quad_degree(dofmap.order)
    ke = element_stiffness(mesh, dofmap, K, degree, dtype=dtype)
    nk = dofmap.n_local
    nd = dofmap.n_dofs
    rows = np.repeat(dofmap.elem_dofs, nk, axis=1).ravel()
    cols = np.tile(dofmap.elem_dofs, (1, nk)).ravel()
    A = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(nd, nd)).tocsr()

    load = np.zeros(nd, dtype=dtype)
    if q is not None:
        pts, wts = quadrature.triangle_rule(degree)
        vals = shape_values(dofmap.order, pts)          # (nq, Nk)
        for iq in range(len(wts)):
            phys = mesh.x0 + np.einsum("eij,j->ei", mesh.jac, pts[iq])
            qv = np.asarray(q(phys), dtype=float)
            np.add.at(load, dofmap.elem_dofs,
                      (wts[iq] * qv * mesh.det_jac)[:, None] * vals[iq][None, :])
    if g_N is not None:
        load += _boundary_neumann_load(mesh, dofmap, g_N)

    lifting = np.zeros(nd, dtype=dtype)
    dmask = dofmap.kind == DIRICHLET
    if g_D is not None:
        lifting[dmask] = np.asarray(g_D(dofmap.dof_coords[dmask]), dtype=float)

    free = ~dmask
    A_ff = A[free][:, free].tocsr()
    rhs = load[free] - A[free][:, dmask] @ lifting[dmask]
    return AssembledSystem(matrix=A, load=load, lifting=lifting, free=free,
                           reduced_matrix=A_ff, reduced_rhs=rhs,
                           order=dofmap.order, quad_degree=degree)


def solve_pressure(system, tol=1e-12, maxit=None, x0=None, dtype=None,
                   method="cg"):
    """Solve the assembled system by preconditioned CG (or sparse LU).

    Passing dtype=np.longdouble runs the iteration in extended precision,
    which lowers the attainable residual floor for strongly heterogeneous
    coefficients (the local conservation errors inherit this floor).
    method='direct' switches to a sparse LU factorization, intended for
    heavy fine-mesh reference solves.
    """
    matrix, rhs = system.reduced_matrix, system.reduced_rhs
    if dtype is not None and dtype != matrix.dtype:
        matrix = matrix.astype(dtype)
        rhs = rhs.astype(dtype)
    if method == "direct":
        xf, iters = direct_solve(matrix, rhs), 0
    else:
        guess = None
        if x0 is not None:
            guess = np.asarray(x0)[system.free]
        xf, iters = cg_solve(matrix, rhs, tol=tol, maxit=maxit, x0=guess)
    coeffs = system.lifting.astype(xf.dtype, copy=True)
    coeffs[system.free] = xf
    return PressureField(order=system.order, coeffs=coeffs, cg_iterations=iters)

"""Error norms, reference comparison, and convergence-order estimation."""
import warnings
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .darcy import shape_gradients, shape_values
from .mesh import locate_points
from .postprocess import _piece_quadrature
from . import quadrature

H1_QUAD_DEGREE = 4


# ---------------------------------------------------------------------------
# control-volume point location


def cv_owner_local(order, ref):
    """Local dof whose control-volume piece contains each reference point.

    A point belongs to the piece of the dof whose (sub-)barycentric
    coordinate is largest; ties resolve to the lowest local index.
    """
    ref = np.atleast_2d(ref)
    x, y = ref[:, 0], ref[:, 1]
    lam = np.column_stack([1.0 - x - y, x, y])
    if order == 1:
        return np.argmax(lam, axis=1)
    if order != 2:
        raise ValueError(f"unsupported order {order}")
    m = len(ref)
    owner = np.empty(m, dtype=np.int64)
    corner_dofs = np.array([[0, 3, 5], [1, 4, 3], [2, 5, 4]])
    in_central = np.ones(m, dtype=bool)
    for i in range(3):
        sel = in_central & (lam[:, i] >= 0.5)
        if not np.any(sel):
            continue
        in_central[sel] = False
        mu = np.column_stack([2 * lam[sel, i] - 1.0,
                              2 * lam[sel, (i + 1) % 3],
                              2 * lam[sel, (i + 2) % 3]])
        owner[sel] = corner_dofs[i][np.argmax(mu, axis=1)]
    if np.any(in_central):
        sel = in_central
        mu = np.column_stack([1.0 - 2 * lam[sel, 2],
                              1.0 - 2 * lam[sel, 0],
                              1.0 - 2 * lam[sel, 1]])
        owner[sel] = np.array([3, 4, 5])[np.argmax(mu, axis=1)]
    return owner


def eval_saturation_at_points(sat, mesh, dofmap, points):
    """Piecewise-constant saturation values at arbitrary physical points."""
    elem, ref = locate_points(mesh, points)
    owner = cv_owner_local(dofmap.order, ref)
    return sat.values[dofmap.elem_dofs[elem, owner]]


# ---------------------------------------------------------------------------
# error norms


def l2_saturation_error(sat, reference, mesh, dofmap, dual,
                        representation="interpolant"):
    """L2 error of a CV saturation field against an analytic profile.

    `reference` is a callable on point arrays (already evaluated at the
    comparison time).  representation='interpolant' reads the CV values as
    nodal data of a degree-k finite element function (the norm in which
    the reference convergence tables are reported); 'constant' integrates
    the raw piecewise-constant field over the dual pieces.
    """
    if representation == "interpolant":
        pts, wts = quadrature.triangle_rule(H1_QUAD_DEGREE + 2)
        basis = shape_values(dofmap.order, pts)             # (np, Nk)
        approx = np.einsum("ek,pk->ep", sat.values[dofmap.elem_dofs], basis)
    elif representation == "constant":
        pts, wts, dofs = _piece_quadrature(dual)
        approx = sat.values[dofmap.elem_dofs][:, dofs]      # (nt, np)
    else:
        raise ValueError(f"unknown representation {representation!r}")
    phys = mesh.x0[:, None, :] + np.einsum("eij,pj->epi", mesh.jac, pts)
    exact = np.asarray(reference(phys), dtype=float)        # (nt, np)
    sq = (approx - exact) ** 2 * wts[None, :] * mesh.det_jac[:, None]
    return float(np.sqrt(sq.sum()))


def l2_saturation_error_discrete(sat, mesh, dofmap, fine_sat, fine_mesh,
                                 fine_dofmap, fine_dual):
    """L2 distance between CV fields on nested meshes.

    The coarse field is sampled at the fine dual mesh's dof coordinates and
    the difference is weighted by the fine control-volume areas.
    """
    if fine_mesh.n % mesh.n != 0:
        raise ValueError("fine mesh resolution must be a multiple of coarse")
    coarse_vals = eval_saturation_at_points(sat, mesh, dofmap,
                                            fine_dofmap.dof_coords)
    diff = coarse_vals - fine_sat.values
    return float(np.sqrt((fine_dual.cv_area * diff ** 2).sum()))


def _element_gradients(mesh, dofmap, local_coeffs, elems, ref):
    """Physical gradients of a per-element polynomial at reference points.

    local_coeffs: (nt, Nk); elems: (m,); ref: (m, 2) -> (m, 2).
    """
    g = shape_gradients(dofmap.order, ref)                  # (m, Nk, 2)
    gref = np.einsum("mk,mki->mi", local_coeffs[elems], g)
    return np.einsum("mij,mj->mi", mesh.inv_jac_t[elems], gref)


def _field_local_coeffs(dofmap, pressure):
    if pressure.alpha is not None:
        return pressure.alpha
    return pressure.coeffs[dofmap.elem_dofs]


def h1_semi_error(mesh, dofmap, pressure, reference, degree=H1_QUAD_DEGREE):
    """H1 semi-norm error of a (post-processed) pressure field.

    `reference` is either a callable returning analytic gradients (..., 2)
    or a tuple (fine_mesh, fine_dofmap, fine_pressure) whose field is
    evaluated by point location on its own mesh.
    """
    pts, wts = quadrature.triangle_rule(degree)
    local = _field_local_coeffs(dofmap, pressure)
    nt = mesh.n_elem
    elems = np.arange(nt)
    total = 0.0
    if callable(reference):
        for q in range(len(wts)):
            phys = mesh.x0 + np.einsum("eij,j->ei", mesh.jac, pts[q])
            grad = _element_gradients(mesh, dofmap, local, elems,
                                      np.broadcast_to(pts[q], (nt, 2)))
            diff = grad - np.asarray(reference(phys), dtype=float)
            total += (wts[q] * mesh.det_jac * (diff ** 2).sum(axis=1)).sum()
    else:
        fine_mesh, fine_dofmap, fine_pressure = reference
        fine_local = _field_local_coeffs(fine_dofmap, fine_pressure)
        for q in range(len(wts)):
            phys = mesh.x0 + np.einsum("eij,j->ei", mesh.jac, pts[q])
            grad = _element_gradients(mesh, dofmap, local, elems,
                                      np.broadcast_to(pts[q], (nt, 2)))
            felems, fref = locate_points(fine_mesh, phys)
            ref_grad = _element_gradients(fine_mesh, fine_dofmap, fine_local,
                                          felems, fref)
            diff = grad - ref_grad
            total += (wts[q] * mesh.det_jac * (diff ** 2).sum(axis=1)).sum()
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# convergence studies


@dataclass
class ConvergenceStudy:
    """Sequence of (h, error) pairs for one scheme/order/example label."""

    label: str = ""
    levels: List[Tuple[float, float]] = field(default_factory=list)
    monotone: bool = True

    def add(self, h, error):
        self.levels.append((float(h), float(error)))
        errs = [e for _, e in self.levels]
        self.monotone = all(a > b for a, b in zip(errs, errs[1:]))

    @property
    def hs(self):
        return np.array([h for h, _ in self.levels])

    @property
    def errors(self):
        return np.array([e for _, e in self.levels])

    @property
    def order(self):
        return convergence_order(self)


def convergence_order(study):
    """Least-squares slope of log(error) against log(h).

    Non-monotone error sequences still return a slope but emit a warning.
    """
    if len(study.levels) < 2:
        raise ValueError("need at least two levels to estimate an order")
    errs = study.errors
    if np.any(errs <= 0):
        raise ValueError("errors must be positive")
    if not study.monotone:
        warnings.warn(f"non-monotone error sequence in study {study.label!r}; "
                      "fitted order may be unreliable")
    slope = np.polyfit(np.log(study.hs), np.log(errs), 1)[0]
    return float(slope)

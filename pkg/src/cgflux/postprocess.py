"""Element-local correction of CGFEM pressure into locally conservative
control-volume fluxes.

Per element, a singular Neumann system couples the N_k local dofs: its
matrix integrates -K grad(phi) . n over the control-volume segments interior
to the element, and its right-hand side combines the element source, the
element stiffness applied to the CGFEM solution, and edge integrals of the
averaged normal flux.  The corrected gradient is unique although the local
solution is only fixed up to a constant (solved here in the zero-mean gauge).

Segment fluxes of the corrected solution then satisfy, on every interior
control volume, net outward flux = integrated source, up to solver residual.
"""
from dataclasses import dataclass

import numpy as np

from . import quadrature
from .darcy import element_stiffness, shape_gradients, shape_values, stiffness_quad_degree
from .linalg import solve_singular_neumann
from .mesh import BOTTOM, TOP

SEG_GAUSS_DEGREE = 5      # 3-point Gauss on every straight segment
PIECE_QUAD_DEGREE = 4


@dataclass
class FluxField:
    """Signed, segment-integrated normal fluxes on control-volume boundaries.

    seg_flux[s] integrates (-K grad p) . n over interior segment s, with n
    oriented from the segment's first dof towards its second (flux out of
    the first dof's control volume).  Boundary sub-segments carry both the
    recovered flux and the flux actually used downstream (physical Neumann
    data on top/bottom, recovered flux on Dirichlet sides).
    """

    seg_flux: np.ndarray
    bseg_flux: np.ndarray             # used for transport / conservation
    bseg_flux_recovered: np.ndarray
    net_flux: np.ndarray              # per dof, outward over the CV boundary


def _rot_ccw(t):
    return np.stack([-t[..., 1], t[..., 0]], axis=-1)


def elemental_matrices(mesh, dofmap, dual, K, dtype=np.float64):
    """Batched local matrices (nt, Nk, Nk); constants span the nullspace.

    An extended dtype keeps the matrix rows consistent with the segment
    flux quadrature beyond double rounding, which the absolute conservation
    gate needs for strongly heterogeneous coefficients.
    """
    nt = mesh.n_elem
    nk = dofmap.n_local
    elems = np.arange(nt)
    gx, gw = quadrature.segment_rule(SEG_GAUSS_DEGREE)
    A = np.zeros((nt, nk, nk), dtype=dtype)
    for i in range(dual.n_ref_segments):
        a, b = dual.ref_seg_a[i], dual.ref_seg_b[i]
        r0, r1 = dual.ref_seg_p0[i], dual.ref_seg_p1[i]
        tang = np.einsum("eij,j->ei", mesh.jac, r1 - r0)
        length = np.linalg.norm(tang, axis=-1)
        normal = _rot_ccw(tang) / length[:, None]
        for t, w in zip(gx, gw):
            ref = r0 + t * (r1 - r0)
            phys = mesh.x0 + np.einsum("eij,j->ei", mesh.jac, ref)
            kval = K.eval(elems, phys).astype(dtype)
            g_ref = shape_gradients(dofmap.order, ref[None, :])[0]   # (Nk, 2)
            g_phys = np.einsum("eij,kj->eki", mesh.inv_jac_t, g_ref)
            row = -(w * length * kval)[:, None] * np.einsum("eki,ei->ek", g_phys, normal)
            A[:, a, :] += row
            A[:, b, :] -= row
    return A


def _piece_quadrature(dual, degree=PIECE_QUAD_DEGREE):
    """Quadrature over the reference dual pieces: (points, weights, owner dof).

    Each piece polygon is fanned into triangles; weights sum to the piece
    areas.  Cached on the dual mesh.
    """
    cached = getattr(dual, "_piece_quad", None)
    if cached is not None:
        return cached
    qp, qw = quadrature.triangle_rule(degree)
    pts, wts, dofs = [], [], []
    for d, polys in enumerate(dual.ref_polys):
        for poly in polys:
            for i in range(1, len(poly) - 1):
                a0, a1, a2 = poly[0], poly[i], poly[i + 1]
                e1, e2 = a1 - a0, a2 - a0
                area2 = e1[0] * e2[1] - e1[1] * e2[0]   # 2 * area, > 0 for CCW
                mapped = a0 + np.outer(qp[:, 0], e1) + np.outer(qp[:, 1], e2)
                pts.append(mapped)
                # rule weights sum to 1/2; target triangle area is area2/2
                wts.append(qw * area2)
                dofs.append(np.full(len(qw), d, dtype=np.int64))
    cache = (np.vstack(pts), np.concatenate(wts), np.concatenate(dofs))
    dual._piece_quad = cache
    return cache


def cv_source(mesh, dofmap, dual, q):
    """Integrated source per control volume (zero vector when q is None)."""
    out = np.zeros(dofmap.n_dofs)
    if q is None:
        return out
    pts, wts, dofs = _piece_quadrature(dual)
    phys = mesh.x0[:, None, :] + np.einsum("eij,pj->epi", mesh.jac, pts)
    vals = np.asarray(q(phys), dtype=float) * wts[None, :] * mesh.det_jac[:, None]
    contrib = np.zeros((mesh.n_elem, dofmap.n_local))
    for d in range(dofmap.n_local):
        contrib[:, d] = vals[:, dofs == d].sum(axis=1)
    np.add.at(out, dofmap.elem_dofs, contrib)
    return out


def _edge_flux_terms(mesh, dofmap, dual, K, local_coeffs, g_N):
    """Edge contributions e_tau(p_h, I phi - phi), batched over elements.

    The edge average of K grad(p_h) degenerates to the one-sided trace on
    Dirichlet boundary edges; on Neumann edges the physical flux data g_N
    replaces the averaged normal flux so recovered boundary fluxes honor it.
    """
    nt = mesh.n_elem
    nk = dofmap.n_local
    elems = np.arange(nt)
    dtype = local_coeffs.dtype
    gx, gw = quadrature.segment_rule(SEG_GAUSS_DEGREE)
    # geometry in the working dtype: the two-sided averages must see the
    # same physical points from both elements for exact telescoping
    x0 = mesh.x0.astype(dtype)
    jac = mesh.jac.astype(dtype)
    inv_jac_t = mesh.inv_jac_t.astype(dtype)
    inv_jac = np.transpose(inv_jac_t, (0, 2, 1))
    beta = np.zeros((nt, nk), dtype=dtype)
    for l in range(3):
        nbr = mesh.neighbor[:, l]
        side = mesh.edge_side[:, l]
        interior = nbr >= 0
        neum = (side == BOTTOM) | (side == TOP)
        nbr_safe = np.where(interior, nbr, 0)
        for owner, r0, r1 in dual.ref_edge_subsegs[l]:
            r0 = r0.astype(dtype)
            r1 = r1.astype(dtype)
            tang = np.einsum("eij,j->ei", jac, r1 - r0)
            length = np.linalg.norm(tang, axis=-1)
            # edges run CCW; outward normal is the clockwise rotation
            normal = -_rot_ccw(tang) / length[:, None]
            for t, w in zip(gx, gw):
                ref = r0 + t * (r1 - r0)
                phys = x0 + np.einsum("eij,j->ei", jac, ref)
                g_ref = shape_gradients(dofmap.order, ref[None, :])[0]
                grad_own = np.einsum("eij,ej->ei", inv_jac_t,
                                     local_coeffs @ g_ref)
                k_own = K.eval(elems, phys)
                v_own = k_own[:, None] * grad_own
                # neighbor-side gradient at the same physical points
                ref_nbr = np.einsum("eij,ej->ei", inv_jac[nbr_safe],
                                    phys - x0[nbr_safe])
                g_ref_nbr = shape_gradients(dofmap.order, ref_nbr)
                grad_nbr = np.einsum("eij,ekj,ek->ei", inv_jac_t[nbr_safe],
                                     g_ref_nbr, local_coeffs[nbr_safe])
                k_nbr = K.eval(nbr_safe, phys)
                v_nbr = k_nbr[:, None] * grad_nbr
                flux = np.where(interior,
                                0.5 * np.einsum("ei,ei->e", v_own + v_nbr, normal),
                                np.einsum("ei,ei->e", v_own, normal))
                if g_N is not None:
                    flux = np.where(neum, np.asarray(g_N(phys), dtype=float), flux)
                else:
                    flux = np.where(neum, 0.0, flux)
                contrib = w * length * flux
                beta[:, owner] += contrib
                beta -= contrib[:, None] * shape_values(dofmap.order, ref[None, :])[0]
    return beta


def elemental_rhs(mesh, dofmap, dual, K, pressure, q=None, g_N=None,
                  stiffness=None, quad_degree=None):
    """Batched right-hand sides (nt, Nk) of the local Neumann systems.

    `stiffness` may pass precomputed element stiffness tensors; otherwise
    they are recomputed with the same quadrature as the global assembly so
    the conservation identity holds to solver accuracy.
    """
    degree = quad_degree or stiffness_quad_degree(dofmap.order)
    if stiffness is None:
        stiffness = element_stiffness(mesh, dofmap, K, degree,
                                      dtype=pressure.coeffs.dtype)
    local = pressure.coeffs[dofmap.elem_dofs]
    beta = np.einsum("ekl,el->ek", stiffness, local)

    if q is not None:
        # int_{t_xi} q  -  int_tau q phi_xi  (same triangle rule as assembly)
        pts, wts, dofs = _piece_quadrature(dual)
        phys = mesh.x0[:, None, :] + np.einsum("eij,pj->epi", mesh.jac, pts)
        vals = np.asarray(q(phys), dtype=float) * wts[None, :] * mesh.det_jac[:, None]
        for d in range(dofmap.n_local):
            beta[:, d] += vals[:, dofs == d].sum(axis=1)
        tp, tw = quadrature.triangle_rule(degree)
        sv = shape_values(dofmap.order, tp)
        for iq in range(len(tw)):
            physq = mesh.x0 + np.einsum("eij,j->ei", mesh.jac, tp[iq])
            qv = np.asarray(q(physq), dtype=float)
            beta -= (tw[iq] * qv * mesh.det_jac)[:, None] * sv[iq][None, :]

    beta += _edge_flux_terms(mesh, dofmap, dual, K, local, g_N)
    return beta


def postprocess_elements(mesh, dofmap, dual, K, pressure, q=None, g_N=None,
                         quad_degree=None):
    """Solve all local systems; returns zero-mean coefficients (nt, Nk)."""
    A = elemental_matrices(mesh, dofmap, dual, K, dtype=pressure.coeffs.dtype)
    beta = elemental_rhs(mesh, dofmap, dual, K, pressure, q=q, g_N=g_N,
                         quad_degree=quad_degree)
    return solve_singular_neumann(A, beta)


def segment_fluxes(mesh, dofmap, dual, K, local_coeffs):
    """Integrated (-K grad w) . n per interior segment for an elementwise
    polynomial with the given local coefficients (nt, Nk)."""
    nt = mesh.n_elem
    elems = np.arange(nt)
    gx, gw = quadrature.segment_rule(SEG_GAUSS_DEGREE)
    flux = np.zeros((nt, dual.n_ref_segments), dtype=local_coeffs.dtype)
    for i in range(dual.n_ref_segments):
        r0, r1 = dual.ref_seg_p0[i], dual.ref_seg_p1[i]
        tang = np.einsum("eij,j->ei", mesh.jac, r1 - r0)
        length = np.linalg.norm(tang, axis=-1)
        normal = _rot_ccw(tang) / length[:, None]
        for t, w in zip(gx, gw):
            ref = r0 + t * (r1 - r0)
            phys = mesh.x0 + np.einsum("eij,j->ei", mesh.jac, ref)
            kval = K.eval(elems, phys)
            g_ref = shape_gradients(dofmap.order, ref[None, :])[0]
            grad = np.einsum("eij,ej->ei", mesh.inv_jac_t, local_coeffs @ g_ref)
            flux[:, i] += -(w * length * kval) * np.einsum("ei,ei->e", grad, normal)
    return flux.ravel()


def boundary_fluxes(mesh, dofmap, dual, K, local_coeffs):
    """Integrated (-K grad w) . n_out per boundary sub-segment."""
    gx, gw = quadrature.segment_rule(SEG_GAUSS_DEGREE)
    e = dual.bseg_elem
    flux = np.zeros(len(e), dtype=local_coeffs.dtype)
    for t, w in zip(gx, gw):
        ref = dual.bseg_r0 + t * (dual.bseg_r1 - dual.bseg_r0)
        phys = mesh.x0[e] + np.einsum("eij,ej->ei", mesh.jac[e], ref)
        kval = K.eval(e, phys)
        g_ref = shape_gradients(dofmap.order, ref)
        grad = np.einsum("eij,ekj,ek->ei", mesh.inv_jac_t[e], g_ref, local_coeffs[e])
        flux += -(w * dual.bseg_len * kval) * np.einsum("ei,ei->e", grad, dual.bseg_normal)
    return flux


def _boundary_used_fluxes(mesh, dual, recovered, g_N):
    """Physical data on Neumann sides, recovered flux on Dirichlet sides."""
    used = recovered.copy()
    neum = (dual.bseg_side == BOTTOM) | (dual.bseg_side == TOP)
    if not np.any(neum):
        return used
    if g_N is None:
        used[neum] = 0.0
        return used
    gx, gw = quadrature.segment_rule(SEG_GAUSS_DEGREE)
    vals = np.zeros(neum.sum())
    e = dual.bseg_elem[neum]
    r0, r1 = dual.bseg_r0[neum], dual.bseg_r1[neum]
    for t, w in zip(gx, gw):
        ref = r0 + t * (r1 - r0)
        phys = mesh.x0[e] + np.einsum("eij,ej->ei", mesh.jac[e], ref)
        vals += w * dual.bseg_len[neum] * np.asarray(g_N(phys), dtype=float)
    used[neum] = vals
    return used


def _net_flux(dofmap, dual, seg_flux, bseg_flux):
    net = np.zeros(dofmap.n_dofs, dtype=seg_flux.dtype)
    ga = dofmap.elem_dofs[dual.seg_elem, dual.seg_a]
    gb = dofmap.elem_dofs[dual.seg_elem, dual.seg_b]
    np.add.at(net, ga, seg_flux)
    np.add.at(net, gb, -seg_flux)
    gob = dofmap.elem_dofs[dual.bseg_elem, dual.bseg_owner]
    np.add.at(net, gob, bseg_flux)
    return net


def extract_fluxes(mesh, dofmap, dual, K, alpha, g_N=None):
    """FluxField of the post-processed solution (coefficients alpha)."""
    seg = segment_fluxes(mesh, dofmap, dual, K, alpha)
    brec = boundary_fluxes(mesh, dofmap, dual, K, alpha)
    bused = _boundary_used_fluxes(mesh, dual, brec, g_N)
    return FluxField(seg_flux=seg, bseg_flux=bused, bseg_flux_recovered=brec,
                     net_flux=_net_flux(dofmap, dual, seg, bused))


def raw_fluxes(mesh, dofmap, dual, K, pressure):
    """FluxField of the uncorrected CGFEM gradients (one-sided per element)."""
    local = pressure.coeffs[dofmap.elem_dofs]
    seg = segment_fluxes(mesh, dofmap, dual, K, local)
    brec = boundary_fluxes(mesh, dofmap, dual, K, local)
    return FluxField(seg_flux=seg, bseg_flux=brec, bseg_flux_recovered=brec,
                     net_flux=_net_flux(dofmap, dual, seg, brec))


def postprocess(mesh, dofmap, dual, K, pressure, q=None, g_N=None,
                quad_degree=None):
    """Full pipeline: local solves, flux extraction; stores alpha on the
    pressure field and returns the FluxField."""
    alpha = postprocess_elements(mesh, dofmap, dual, K, pressure, q=q,
                                 g_N=g_N, quad_degree=quad_degree)
    pressure.alpha = alpha
    return extract_fluxes(mesh, dofmap, dual, K, alpha, g_N=g_N)


def cast_flux_field(dofmap, dual, flux, dtype=np.float64):
    """Round a flux field to `dtype`, re-deriving the net fluxes from the
    rounded segment values so conservation is reported for what downstream
    consumers actually see."""
    seg = flux.seg_flux.astype(dtype)
    bused = flux.bseg_flux.astype(dtype)
    return FluxField(seg_flux=seg, bseg_flux=bused,
                     bseg_flux_recovered=flux.bseg_flux_recovered.astype(dtype),
                     net_flux=_net_flux(dofmap, dual, seg, bused))


def lce(flux, q_cv):
    """Local conservation errors: net outward flux minus integrated source."""
    return flux.net_flux - q_cv


def compatibility_defects(beta):
    """Per-element nullspace defect |sum(beta)| of the local right-hand sides."""
    return np.abs(beta.sum(axis=1))

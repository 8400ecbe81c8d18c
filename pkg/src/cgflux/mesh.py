"""Structured triangular meshes, P1/P2 dof maps, and the nodal dual mesh.

The primal mesh divides the unit square into n*n cells, each split along the
bottom-left to top-right diagonal into two counter-clockwise triangles.  The
dual mesh attaches a polygonal control volume to every degree of freedom by
connecting triangle barycenters to edge midpoints (for quadratic elements the
construction is applied to the four midpoint sub-triangles and the resulting
polygons are grouped per dof).

Control-volume boundaries are stored as straight segments, each interior to
exactly one element and separating two local dofs; the unit normal of a
segment is oriented from the first dof's polygon towards the second's.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidResolutionError, UnsupportedOrderError

# boundary side codes
LEFT, RIGHT, BOTTOM, TOP = 0, 1, 2, 3
SIDE_NAMES = {LEFT: "left", RIGHT: "right", BOTTOM: "bottom", TOP: "top"}

# dof classification codes
INTERIOR, DIRICHLET, NEUMANN = 0, 1, 2

_REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass
class TriMesh:
    """Uniform triangulation of the unit square (2*n*n CCW triangles)."""

    n: int
    vertices: np.ndarray            # (nv, 2)
    triangles: np.ndarray           # (nt, 3) vertex indices, CCW
    boundary_edges: list            # (v0, v1, side_name)
    h: float
    # affine maps x = x0 + J @ xref
    x0: np.ndarray = field(repr=False, default=None)       # (nt, 2)
    jac: np.ndarray = field(repr=False, default=None)      # (nt, 2, 2)
    inv_jac_t: np.ndarray = field(repr=False, default=None)
    det_jac: np.ndarray = field(repr=False, default=None)  # (nt,)
    neighbor: np.ndarray = field(repr=False, default=None)  # (nt, 3) elem id or -1
    edge_side: np.ndarray = field(repr=False, default=None)  # (nt, 3) side code or -1

    @property
    def n_elem(self):
        return self.triangles.shape[0]

    def element_area(self):
        return 0.5 * self.det_jac

    def map_points(self, elems, ref_pts):
        """Physical coordinates of reference points in the given elements.

        elems: (m,) element ids; ref_pts: (2,) or (m, 2).
        """
        return self.x0[elems] + np.einsum("eij,...j->...i" if ref_pts.ndim > 1
                                          else "eij,j->ei", self.jac[elems], ref_pts)


def build_structured_mesh(n):
    """Uniform n x n triangulated mesh on [0,1]^2, diagonals bottom-left to
    top-right."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidResolutionError(f"mesh resolution must be a positive integer, got {n!r}")
    n = int(n)
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    i, j = i.ravel(), j.ravel()
    lower = np.column_stack([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)])
    upper = np.column_stack([vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)])
    # cell c holds elements 2c (lower) and 2c+1 (upper)
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    boundary_edges = []
    r = np.arange(n)
    for k in r:
        boundary_edges.append((vid(k, 0), vid(k + 1, 0), "bottom"))
        boundary_edges.append((vid(k, n), vid(k + 1, n), "top"))
        boundary_edges.append((vid(0, k), vid(0, k + 1), "left"))
        boundary_edges.append((vid(n, k), vid(n, k + 1), "right"))

    mesh = TriMesh(n=n, vertices=vertices, triangles=triangles,
                   boundary_edges=boundary_edges, h=np.sqrt(2.0) / n)
    _attach_maps(mesh)
    _attach_neighbors(mesh)
    return mesh


def _attach_maps(mesh):
    v = mesh.vertices[mesh.triangles]          # (nt, 3, 2)
    mesh.x0 = v[:, 0]
    jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)  # columns
    mesh.jac = jac
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    if np.any(det <= 0):
        raise InvalidResolutionError("degenerate or inverted element in mesh")
    mesh.det_jac = det
    inv = np.empty_like(jac)
    inv[:, 0, 0] = jac[:, 1, 1]
    inv[:, 0, 1] = -jac[:, 0, 1]
    inv[:, 1, 0] = -jac[:, 1, 0]
    inv[:, 1, 1] = jac[:, 0, 0]
    inv /= det[:, None, None]
    mesh.inv_jac_t = np.transpose(inv, (0, 2, 1))


def _attach_neighbors(mesh):
    nt = mesh.n_elem
    neighbor = np.full((nt, 3), -1, dtype=np.int64)
    edge_side = np.full((nt, 3), -1, dtype=np.int64)
    seen = {}
    tri = mesh.triangles
    for e in range(nt):
        for l in range(3):
            a, b = tri[e, l], tri[e, (l + 1) % 3]
            key = (min(a, b), max(a, b))
            if key in seen:
                e2, l2 = seen.pop(key)
                neighbor[e, l] = e2
                neighbor[e2, l2] = e
            else:
                seen[key] = (e, l)
    # remaining edges are boundary edges; classify by coordinates
    verts = mesh.vertices
    for (a, b), (e, l) in seen.items():
        mid = 0.5 * (verts[a] + verts[b])
        if mid[0] == 0.0:
            edge_side[e, l] = LEFT
        elif mid[0] == 1.0:
            edge_side[e, l] = RIGHT
        elif mid[1] == 0.0:
            edge_side[e, l] = BOTTOM
        elif mid[1] == 1.0:
            edge_side[e, l] = TOP
        else:  # pragma: no cover
            raise InvalidResolutionError("unpaired interior edge")
    mesh.neighbor = neighbor
    mesh.edge_side = edge_side


@dataclass
class DofMap:
    """Degrees of freedom for CGFEM of order k on a TriMesh."""

    order: int
    dof_coords: np.ndarray   # (nd, 2)
    elem_dofs: np.ndarray    # (nt, Nk) local-to-global
    kind: np.ndarray         # (nd,) INTERIOR / DIRICHLET / NEUMANN

    @property
    def n_dofs(self):
        return self.dof_coords.shape[0]

    @property
    def n_local(self):
        return (self.order + 1) * (self.order + 2) // 2

    @property
    def free(self):
        return self.kind != DIRICHLET

    @property
    def dirichlet(self):
        return self.kind == DIRICHLET

    @property
    def interior(self):
        return self.kind == INTERIOR


def build_dof_map(mesh, order):
    """P1 (vertex) or P2 (vertex + edge midpoint) dof map.

    Local ordering: three vertices, then for P2 the midpoints of edges
    (v0,v1), (v1,v2), (v2,v0).
    """
    if order not in (1, 2):
        raise UnsupportedOrderError(f"polynomial order must be 1 or 2, got {order!r}")
    n = mesh.n
    if order == 1:
        coords = mesh.vertices
        elem_dofs = mesh.triangles.copy()
    else:
        m = 2 * n + 1
        xs = np.linspace(0.0, 1.0, m)
        X, Y = np.meshgrid(xs, xs, indexing="xy")
        coords = np.column_stack([X.ravel(), Y.ravel()])
        # vertex (i, j) of the coarse grid sits at fine-grid node (2i, 2j)
        vi = mesh.triangles % (n + 1)
        vj = mesh.triangles // (n + 1)
        fi, fj = 2 * vi, 2 * vj        # (nt, 3) fine-grid integer coords
        vdof = fj * m + fi
        mi = (fi + np.roll(fi, -1, axis=1)) // 2
        mj = (fj + np.roll(fj, -1, axis=1)) // 2
        mdof = mj * m + mi
        elem_dofs = np.hstack([vdof, mdof]).astype(np.int64)
    kind = np.full(coords.shape[0], INTERIOR, dtype=np.int64)
    x, y = coords[:, 0], coords[:, 1]
    kind[(y == 0.0) | (y == 1.0)] = NEUMANN
    kind[(x == 0.0) | (x == 1.0)] = DIRICHLET
    return DofMap(order=order, dof_coords=coords, elem_dofs=elem_dofs, kind=kind)


# ---------------------------------------------------------------------------
# reference dual-mesh construction


def _polygon_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def _subtri_dual(pts, dofs):
    """Barycenter-to-midpoint split of one (sub-)triangle.

    Returns (pieces, segments): pieces as (dof, polygon), segments as
    (a, b, P0, P1) with the counter-clockwise normal of P1-P0 pointing from
    piece a into piece b.
    """
    pts = np.asarray(pts, dtype=float)
    g = pts.mean(axis=0)
    mids = [0.5 * (pts[i] + pts[(i + 1) % 3]) for i in range(3)]
    pieces = [(dofs[i], np.array([pts[i], mids[i % 3], g, mids[(i + 2) % 3]]))
              for i in range(3)]
    segments = []
    for i in range(3):
        a, b = dofs[i], dofs[(i + 1) % 3]
        p0, p1 = mids[i], g
        t = p1 - p0
        normal = np.array([-t[1], t[0]])
        ca = pieces[i][1].mean(axis=0)
        cb = pieces[(i + 1) % 3][1].mean(axis=0)
        if np.dot(normal, cb - ca) < 0:
            a, b = b, a
        segments.append((a, b, p0, p1))
    return pieces, segments


def _reference_dual(order):
    """Reference-element dual data: per-dof polygon lists, interior segments,
    and per-edge boundary sub-segments with owner dofs."""
    v = _REF_VERTS
    if order == 1:
        subtris = [(v, [0, 1, 2])]
        mid = lambda a, b: 0.5 * (a + b)
        edge_subsegs = {l: [(l, v[l], mid(v[l], v[(l + 1) % 3])),
                            ((l + 1) % 3, mid(v[l], v[(l + 1) % 3]), v[(l + 1) % 3])]
                        for l in range(3)}
    else:
        m = [0.5 * (v[l] + v[(l + 1) % 3]) for l in range(3)]  # dofs 3,4,5
        subtris = [
            (np.array([v[0], m[0], m[2]]), [0, 3, 5]),
            (np.array([v[1], m[1], m[0]]), [1, 4, 3]),
            (np.array([v[2], m[2], m[1]]), [2, 5, 4]),
            (np.array([m[0], m[1], m[2]]), [3, 4, 5]),
        ]
        edge_subsegs = {}
        for l in range(3):
            a, b, md = v[l], v[(l + 1) % 3], m[l]
            q1 = 0.5 * (a + md)
            q3 = 0.5 * (md + b)
            edge_subsegs[l] = [(l, a, q1), (3 + l, q1, md),
                               (3 + l, md, q3), ((l + 1) % 3, q3, b)]
    n_local = 3 if order == 1 else 6
    polys = [[] for _ in range(n_local)]
    segments = []
    for pts, dofs in subtris:
        pieces, segs = _subtri_dual(pts, dofs)
        for d, poly in pieces:
            polys[d].append(poly)
        segments.extend(segs)
    areas = np.array([sum(_polygon_area(p) for p in plist) for plist in polys])
    return polys, segments, edge_subsegs, areas


@dataclass
class DualMesh:
    """Nodal control volumes on top of a TriMesh/DofMap pair.

    Interior segments are stored element-major: segment s = e * n_ref + i
    lies in element e and is the i-th reference segment mapped through the
    element's affine map.
    """

    order: int
    n_ref_segments: int
    # reference pattern
    ref_polys: list                  # per local dof: list of (m, 2) polygons
    ref_seg_a: np.ndarray            # (n_ref,)
    ref_seg_b: np.ndarray
    ref_seg_p0: np.ndarray           # (n_ref, 2)
    ref_seg_p1: np.ndarray
    ref_piece_areas: np.ndarray      # (Nk,) fractions of reference area
    ref_edge_subsegs: dict           # local edge -> [(owner, r0, r1), ...]
    # physical interior segments, element-major
    seg_elem: np.ndarray             # (ns,)
    seg_a: np.ndarray                # (ns,) local dof indices
    seg_b: np.ndarray
    seg_p0: np.ndarray               # (ns, 2)
    seg_p1: np.ndarray
    seg_normal: np.ndarray           # (ns, 2) unit, oriented a -> b
    seg_len: np.ndarray
    # boundary sub-segments (on the domain boundary)
    bseg_elem: np.ndarray
    bseg_owner: np.ndarray           # local dof owning the sub-segment
    bseg_side: np.ndarray            # LEFT/RIGHT/BOTTOM/TOP
    bseg_r0: np.ndarray              # reference endpoints in owning element
    bseg_r1: np.ndarray
    bseg_p0: np.ndarray
    bseg_p1: np.ndarray
    bseg_normal: np.ndarray          # outward unit normal
    bseg_len: np.ndarray
    # areas
    piece_areas: np.ndarray          # (nt, Nk)
    cv_area: np.ndarray              # (nd,)

    def pieces(self, mesh, elem):
        """Physical polygons of the pieces of one element, per local dof."""
        out = []
        for plist in self.ref_polys:
            out.append([mesh.x0[elem] + p @ mesh.jac[elem].T for p in plist])
        return out


def build_dual_mesh(mesh, dofmap):
    """Construct the dual mesh of control volumes for the given dof map."""
    order = dofmap.order
    ref_polys, ref_segments, edge_subsegs, ref_areas = _reference_dual(order)
    n_ref = len(ref_segments)
    nt = mesh.n_elem

    ref_a = np.array([s[0] for s in ref_segments])
    ref_b = np.array([s[1] for s in ref_segments])
    ref_p0 = np.array([s[2] for s in ref_segments])
    ref_p1 = np.array([s[3] for s in ref_segments])

    # physical segments, element-major: s = e * n_ref + i
    seg_elem = np.repeat(np.arange(nt), n_ref)
    seg_a = np.tile(ref_a, nt)
    seg_b = np.tile(ref_b, nt)
    # map endpoints: (nt, n_ref, 2)
    p0 = mesh.x0[:, None, :] + np.einsum("eij,sj->esi", mesh.jac, ref_p0)
    p1 = mesh.x0[:, None, :] + np.einsum("eij,sj->esi", mesh.jac, ref_p1)
    tang = p1 - p0
    seg_len = np.linalg.norm(tang, axis=-1)
    normal = np.stack([-tang[..., 1], tang[..., 0]], axis=-1) / seg_len[..., None]

    # piece areas scale with det(J) under the affine map (det > 0 preserves
    # the reference orientation, so normals stay oriented a -> b)
    piece_areas = ref_areas[None, :] * mesh.det_jac[:, None]
    cv_area = np.zeros(dofmap.n_dofs)
    np.add.at(cv_area, dofmap.elem_dofs, piece_areas)

    # boundary sub-segments
    b_elem, b_owner, b_side, b_r0, b_r1 = [], [], [], [], []
    belems, bedges = np.nonzero(mesh.edge_side >= 0)
    for e, l in zip(belems, bedges):
        side = mesh.edge_side[e, l]
        for owner, r0, r1 in edge_subsegs[l]:
            b_elem.append(e)
            b_owner.append(owner)
            b_side.append(side)
            b_r0.append(r0)
            b_r1.append(r1)
    b_elem = np.asarray(b_elem, dtype=np.int64)
    b_owner = np.asarray(b_owner, dtype=np.int64)
    b_side = np.asarray(b_side, dtype=np.int64)
    b_r0 = np.asarray(b_r0, dtype=float).reshape(-1, 2)
    b_r1 = np.asarray(b_r1, dtype=float).reshape(-1, 2)
    bp0 = mesh.x0[b_elem] + np.einsum("eij,ej->ei", mesh.jac[b_elem], b_r0)
    bp1 = mesh.x0[b_elem] + np.einsum("eij,ej->ei", mesh.jac[b_elem], b_r1)
    btang = bp1 - bp0
    blen = np.linalg.norm(btang, axis=-1)
    # edges run counter-clockwise around the element: outward = clockwise rot
    bnormal = np.stack([btang[..., 1], -btang[..., 0]], axis=-1) / blen[..., None]

    return DualMesh(
        order=order, n_ref_segments=n_ref,
        ref_polys=ref_polys, ref_seg_a=ref_a, ref_seg_b=ref_b,
        ref_seg_p0=ref_p0, ref_seg_p1=ref_p1, ref_piece_areas=ref_areas,
        ref_edge_subsegs=edge_subsegs,
        seg_elem=seg_elem, seg_a=seg_a, seg_b=seg_b,
        seg_p0=p0.reshape(-1, 2), seg_p1=p1.reshape(-1, 2),
        seg_normal=normal.reshape(-1, 2), seg_len=seg_len.ravel(),
        bseg_elem=b_elem, bseg_owner=b_owner, bseg_side=b_side,
        bseg_r0=b_r0, bseg_r1=b_r1, bseg_p0=bp0, bseg_p1=bp1,
        bseg_normal=bnormal, bseg_len=blen,
        piece_areas=piece_areas, cv_area=cv_area,
    )


# ---------------------------------------------------------------------------
# point location on the structured mesh


def locate_points(mesh, points):
    """Element id and reference coordinates for each query point.

    Points on cell diagonals are assigned to the lower triangle.
    """
    n = mesh.n
    pts = np.atleast_2d(points)
    i = np.clip(np.floor(pts[:, 0] * n).astype(np.int64), 0, n - 1)
    j = np.clip(np.floor(pts[:, 1] * n).astype(np.int64), 0, n - 1)
    u = pts[:, 0] * n - i
    v = pts[:, 1] * n - j
    lower = v <= u
    elem = 2 * (j * n + i) + np.where(lower, 0, 1)
    # lower triangle (0,0),(1,0),(1,1): ref coords (u - v, v)
    # upper triangle (0,0),(1,1),(0,1): ref coords (u, v - u)
    ref = np.where(lower[:, None],
                   np.column_stack([u - v, v]),
                   np.column_stack([u, v - u]))
    return elem, ref


def write_vtk(path, mesh, point_data=None, cell_data=None):
    """Legacy ASCII VTK dump of the primal mesh (triangles, cell type 5)."""
    nv = mesh.vertices.shape[0]
    nt = mesh.n_elem
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\ncgflux mesh\nASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {nv} double\n")
        for x, y in mesh.vertices:
            f.write(f"{x:.17g} {y:.17g} 0\n")
        f.write(f"CELLS {nt} {4 * nt}\n")
        for t in mesh.triangles:
            f.write(f"3 {t[0]} {t[1]} {t[2]}\n")
        f.write(f"CELL_TYPES {nt}\n")
        f.write("5\n" * nt)
        if point_data:
            f.write(f"POINT_DATA {nv}\n")
            for name, arr in point_data.items():
                f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for val in np.asarray(arr)[:nv]:
                    f.write(f"{val:.17g}\n")
        if cell_data:
            f.write(f"CELL_DATA {nt}\n")
            for name, arr in cell_data.items():
                f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for val in np.asarray(arr):
                    f.write(f"{val:.17g}\n")

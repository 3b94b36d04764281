"""Triangular meshes with newest-vertex bisection and Doerfler marking.

Triangles are stored as counterclockwise vertex triples ``(a, b, c)`` whose
refinement (newest-vertex) edge is always ``(a, b)``; ``c`` is the peak.
Bisecting at the midpoint ``m`` of ``(a, b)`` produces the children
``(c, a, m)`` and ``(b, c, m)``, which keeps the convention and the
counterclockwise orientation.

Meshes are immutable: refinement returns a new :class:`Mesh`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MeshError(Exception):
    """Invalid mesh topology, geometry, or refinement request."""


def _triangle_areas(vertices, triangles):
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation of a polygonal domain.

    Parameters
    ----------
    vertices : (nv, 2) float array
        Vertex coordinates.
    triangles : (nt, 3) int array
        Vertex indices per triangle; positively oriented, refinement edge
        first (see module docstring).
    generation : (nt,) int array, optional
        Bisection generation counters (0 for an initial mesh).
    root : (nt,) int array, optional
        Index of the initial-mesh ancestor of each triangle.
    parent : (nt,) int array, optional
        Index of the parent triangle in the mesh this one was refined
        from, -1 for initial triangles.

    Derived edge topology is built on construction.  Interior edges carry
    a fixed global orientation: the unit normal points from the
    lower-index incident triangle to the higher-index one, and outward on
    boundary edges.  All invariants (positive orientation, conformity)
    are checked on construction and raise :class:`MeshError` on failure.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    generation: np.ndarray = None
    root: np.ndarray = None
    parent: np.ndarray = None

    edges: np.ndarray = field(init=False, repr=False)
    tri_edges: np.ndarray = field(init=False, repr=False)
    edge_tris: np.ndarray = field(init=False, repr=False)
    edge_length: np.ndarray = field(init=False, repr=False)
    edge_tangent: np.ndarray = field(init=False, repr=False)
    edge_normal: np.ndarray = field(init=False, repr=False)
    is_boundary_edge: np.ndarray = field(init=False, repr=False)
    is_boundary_vertex: np.ndarray = field(init=False, repr=False)
    areas: np.ndarray = field(init=False, repr=False)
    diameters: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)
        nt = len(triangles)
        for name, default in (("generation", 0), ("root", None), ("parent", -1)):
            arr = getattr(self, name)
            if arr is None:
                if default is None:
                    arr = np.arange(nt, dtype=np.int64)
                else:
                    arr = np.full(nt, default, dtype=np.int64)
            object.__setattr__(self, name, np.asarray(arr, dtype=np.int64))
        self._build_topology()
        self._validate()

    def _build_topology(self):
        t = self.triangles
        nt = len(t)
        # local edges in traversal order (a,b), (b,c), (c,a)
        halfedges = np.stack(
            [t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1
        ).reshape(-1, 2)
        sorted_he = np.sort(halfedges, axis=1)
        edges, inverse = np.unique(sorted_he, axis=0, return_inverse=True)
        tri_edges = inverse.reshape(nt, 3)

        ne = len(edges)
        edge_tris = np.full((ne, 2), -1, dtype=np.int64)
        tri_of_halfedge = np.repeat(np.arange(nt), 3)
        counts = np.zeros(ne, dtype=np.int64)
        # deterministic fill: lower triangle index ends up in column 0
        order = np.argsort(tri_of_halfedge, kind="stable")
        for he in order:
            e = inverse[he]
            if counts[e] >= 2:
                raise MeshError(f"edge {e} shared by more than two triangles")
            edge_tris[e, counts[e]] = tri_of_halfedge[he]
            counts[e] += 1

        vec = self.vertices[edges[:, 1]] - self.vertices[edges[:, 0]]
        length = np.hypot(vec[:, 0], vec[:, 1])
        if np.any(length <= 0):
            raise MeshError("degenerate (zero-length) edge")
        tangent = vec / length[:, None]

        # outward normal of the owning (lower-index) triangle: for the
        # traversal direction d of that triangle, outward = (d_y, -d_x)
        owner = edge_tris[:, 0]
        owner_tris = t[owner]
        # direction of the edge as traversed by the owner
        same = owner_tris[:, [0, 1, 2]]
        nxt = owner_tris[:, [1, 2, 0]]
        normal = np.empty_like(tangent)
        for e in range(ne):
            lo, hi = edges[e]
            for k in range(3):
                p, q = same[e, k], nxt[e, k]
                if {p, q} == {lo, hi}:
                    d = self.vertices[q] - self.vertices[p]
                    n = np.array([d[1], -d[0]]) / np.hypot(d[0], d[1])
                    normal[e] = n
                    break
            else:
                raise MeshError("edge ownership inconsistency")

        is_bedge = edge_tris[:, 1] < 0
        is_bvert = np.zeros(len(self.vertices), dtype=bool)
        is_bvert[edges[is_bedge].ravel()] = True

        areas = _triangle_areas(self.vertices, t)
        p = self.vertices[t]
        side = np.stack(
            [
                np.hypot(*(p[:, 1] - p[:, 0]).T),
                np.hypot(*(p[:, 2] - p[:, 1]).T),
                np.hypot(*(p[:, 0] - p[:, 2]).T),
            ],
            axis=1,
        )
        for name, val in (
            ("edges", edges),
            ("tri_edges", tri_edges),
            ("edge_tris", edge_tris),
            ("edge_length", length),
            ("edge_tangent", tangent),
            ("edge_normal", normal),
            ("is_boundary_edge", is_bedge),
            ("is_boundary_vertex", is_bvert),
            ("areas", areas),
            ("diameters", side.max(axis=1)),
        ):
            object.__setattr__(self, name, val)

    def _validate(self):
        if np.any(self.areas <= 0):
            bad = int(np.argmin(self.areas))
            raise MeshError(f"triangle {bad} is not positively oriented")
        if self.triangles.min(initial=0) < 0 or self.triangles.max(initial=-1) >= len(
            self.vertices
        ):
            raise MeshError("triangle refers to a nonexistent vertex")
        # Euler characteristic of a simply connected single-boundary-loop
        # triangulation; catches hanging vertices that edge counts miss.
        euler = len(self.vertices) - len(self.edges) + len(self.triangles)
        if euler != 1:
            raise MeshError(f"non-conforming mesh (Euler characteristic {euler} != 1)")

    # -- convenience ----------------------------------------------------

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def h_max(self):
        return float(self.diameters.max())

    def triangle_coords(self):
        """Vertex coordinates per triangle, shape (nt, 3, 2)."""
        return self.vertices[self.triangles]

    def edge_sign(self, tri, local_edge):
        """+1 if the global edge normal is outward for `tri`, else -1."""
        e = self.tri_edges[tri, local_edge]
        return 1.0 if self.edge_tris[e, 0] == tri else -1.0

    def edge_signs(self):
        """Orientation factors for all (triangle, local edge) pairs, (nt, 3)."""
        owner = self.edge_tris[self.tri_edges, 0]
        return np.where(owner == np.arange(self.num_triangles)[:, None], 1.0, -1.0)


def _ref_edge_first(tri, vertices):
    """Rotate a CCW triangle so its longest edge comes first.

    Ties are broken by the lowest local edge index, which makes the
    initial newest-vertex assignment deterministic.
    """
    a, b, c = tri
    pts = vertices[[a, b, c]]
    lengths = [
        np.hypot(*(pts[1] - pts[0])),
        np.hypot(*(pts[2] - pts[1])),
        np.hypot(*(pts[0] - pts[2])),
    ]
    k = int(np.argmax(lengths))
    rot = [(a, b, c), (b, c, a), (c, a, b)][k]
    return rot


def make_unit_square(n):
    """Structured triangulation of the unit square.

    An n-by-n grid of squares, each split along the (lower-left to
    upper-right) diagonal; the diagonal is the longest edge and becomes
    the refinement edge of both triangles.

    Parameters
    ----------
    n : int
        Number of squares per side, n >= 1.
    """
    if n < 1:
        raise MeshError(f"need n >= 1, got {n}")
    n = int(n)
    xs = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            ll, lr = vid(i, j), vid(i + 1, j)
            ur, ul = vid(i + 1, j + 1), vid(i, j + 1)
            # diagonal ll-ur is the refinement edge of both triangles
            tris.append((ur, ll, lr))
            tris.append((ll, ur, ul))
    return Mesh(vertices, np.array(tris, dtype=np.int64))


SECTOR_HALF_ANGLE = 5.0 * np.pi / 8.0


def make_sector_domain():
    """Polygonal sector of opening 5*pi/4, symmetric about the x-axis.

    Seven vertices: the origin plus six unit-circle points at angles
    -112.5 + 45*k degrees (k = 0..5); five fan triangles from the origin.
    The two straight edges meeting at the origin lie on the rays
    phi = +-5*pi/8, where the singular reference solution is clamped.
    """
    angles = np.deg2rad(-112.5 + 45.0 * np.arange(6))
    vertices = np.vstack([[0.0, 0.0], np.column_stack([np.cos(angles), np.sin(angles)])])
    tris = []
    for k in range(5):
        tris.append(_ref_edge_first((0, k + 1, k + 2), vertices))
    return Mesh(vertices, np.array(tris, dtype=np.int64))


def refine_nvb(mesh, marked):
    """Newest-vertex bisection of the marked triangles, with closure.

    Every marked triangle is bisected at least once; closure bisections
    keep the mesh conforming.  Returns a new mesh (the input is returned
    unchanged for an empty mark set).

    Parameters
    ----------
    mesh : Mesh
    marked : iterable of int
        Triangle indices to refine.
    """
    marked = np.unique(np.asarray(list(marked), dtype=np.int64))
    if marked.size == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.num_triangles:
        raise MeshError(f"marked triangle index out of range: {marked}")

    ref_edge = mesh.tri_edges[:, 0]
    edge_marked = np.zeros(mesh.num_edges, dtype=bool)
    edge_marked[ref_edge[marked]] = True
    # closure: a triangle with any marked edge must bisect its own
    # refinement edge as well; iterate to a fixed point
    while True:
        has_marked = edge_marked[mesh.tri_edges].any(axis=1)
        need = has_marked & ~edge_marked[ref_edge]
        if not need.any():
            break
        edge_marked[ref_edge[need]] = True

    vertices = list(map(tuple, mesh.vertices))
    midpoint = {}
    for e in np.nonzero(edge_marked)[0]:
        lo, hi = mesh.edges[e]
        midpoint[e] = len(vertices)
        vertices.append(tuple(0.5 * (mesh.vertices[lo] + mesh.vertices[hi])))

    tris, gen, root, parent = [], [], [], []

    def emit(tri, g, r, p):
        tris.append(tri)
        gen.append(g)
        root.append(r)
        parent.append(p)

    for i, (a, b, c) in enumerate(mesh.triangles):
        e0, e1, e2 = mesh.tri_edges[i]
        g, r = mesh.generation[i], mesh.root[i]
        if not edge_marked[e0]:
            emit((a, b, c), g, r, mesh.parent[i])
            continue
        m0 = midpoint[e0]
        # child (c, a, m0) owns parent edge e2 = (c, a); (b, c, m0) owns e1
        for child, e_child in (((c, a, m0), e2), ((b, c, m0), e1)):
            if edge_marked[e_child]:
                ca, cb, cc = child
                mc = midpoint[e_child]
                emit((cc, ca, mc), g + 2, r, i)
                emit((cb, cc, mc), g + 2, r, i)
            else:
                emit(child, g + 1, r, i)

    return Mesh(
        np.array(vertices, dtype=float),
        np.array(tris, dtype=np.int64),
        np.array(gen, dtype=np.int64),
        np.array(root, dtype=np.int64),
        np.array(parent, dtype=np.int64),
    )


def doerfler_mark(indicators, theta):
    """Minimal Doerfler mark set.

    Returns the smallest set M with sum_{T in M} eta(T)^2 >=
    theta * sum_T eta(T)^2, built by sorting the indicators in
    descending order (ties broken by ascending triangle index) and
    taking the shortest qualifying prefix.

    Parameters
    ----------
    indicators : array of nonnegative floats
    theta : float in (0, 1]

    Returns
    -------
    np.ndarray of int
        Marked triangle indices, ascending.
    """
    eta = np.asarray(indicators, dtype=float)
    if np.any(eta < 0):
        raise MeshError("negative error indicator")
    if not 0.0 < theta <= 1.0:
        raise MeshError(f"theta must be in (0, 1], got {theta}")
    eta2 = eta * eta
    order = np.lexsort((np.arange(len(eta)), -eta))
    csum = np.cumsum(eta2[order])
    total = csum[-1] if len(csum) else 0.0
    if total == 0.0:
        return np.empty(0, dtype=np.int64)
    k = int(np.searchsorted(csum, theta * total)) + 1
    return np.sort(order[:k])


def write_mesh(mesh, path):
    """Plain-text mesh dump: "v x y" lines, then "t i j k r" lines.

    `r` is the local index of the refinement edge (always 0 in this
    package's storage convention).  Floats carry 17 significant digits.
    """
    with open(path, "w", encoding="ascii") as fh:
        for x, y in mesh.vertices:
            fh.write(f"v {x:.17g} {y:.17g}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"t {a} {b} {c} 0\n")


def read_mesh(path):
    """Read a mesh written by :func:`write_mesh` (or compatible).

    Triangles are rotated so the designated refinement edge comes first;
    generation counters restart at zero.
    """
    verts, tris = [], []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v" and len(parts) == 3:
                verts.append((float(parts[1]), float(parts[2])))
            elif parts[0] == "t" and len(parts) == 5:
                a, b, c, r = map(int, parts[1:])
                rot = [(a, b, c), (b, c, a), (c, a, b)][r % 3]
                tris.append(rot)
            else:
                raise MeshError(f"{path}:{lineno}: unrecognized line {line!r}")
    return Mesh(np.array(verts, dtype=float), np.array(tris, dtype=np.int64))

"""Reduced Hsieh-Clough-Tocher skeleton traces and boundary conditions.

Each mesh vertex carries three degrees of freedom: a function value and
the two gradient components.  Along an edge, the trace value is the
cubic Hermite interpolant of the endpoint values and tangential
derivatives; the normal derivative is the linear interpolant of the
endpoint gradients dotted with the edge's global unit normal.  There
are no edge-interior dofs (reduced HCT), so the skeleton data is
single-valued by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from bilap_dpg.mesh import Mesh

DOFS_PER_VERTEX = 3  # value, d/dx, d/dy


@dataclass(frozen=True)
class TraceSpace:
    """Skeleton trace space with an optional boundary constraint map.

    `constrained` flags dofs fixed by boundary conditions; `values`
    holds the prescribed value for each constrained dof (zero at free
    dofs).  The `values` vector therefore doubles as the constrained
    part of a trace coefficient vector.
    """

    mesh: Mesh
    constrained: np.ndarray
    values: np.ndarray

    @property
    def ndof(self):
        return DOFS_PER_VERTEX * self.mesh.num_vertices

    @property
    def ndof_free(self):
        return int(self.ndof - self.constrained.sum())

    def vertex_dofs(self, vertex):
        base = DOFS_PER_VERTEX * int(vertex)
        return np.arange(base, base + DOFS_PER_VERTEX)


def build_trace_space(mesh):
    """Unconstrained trace space: 3 dofs per vertex, none fixed."""
    n = DOFS_PER_VERTEX * mesh.num_vertices
    return TraceSpace(mesh, np.zeros(n, dtype=bool), np.zeros(n))


def apply_clamped_bc(space):
    """Constrain all three dofs of every boundary vertex to zero.

    This forces the cubic edge trace and the linear normal derivative
    to vanish identically on boundary edges.
    """
    constrained = space.constrained.copy()
    bverts = np.nonzero(space.mesh.is_boundary_vertex)[0]
    for v in bverts:
        constrained[DOFS_PER_VERTEX * v : DOFS_PER_VERTEX * (v + 1)] = True
    values = np.where(constrained, 0.0, space.values)
    return replace(space, constrained=constrained, values=values)


def interpolate_boundary_data(space, u_exact, grad_u_exact):
    """Constrain boundary-vertex dofs to interpolated Dirichlet data.

    Parameters
    ----------
    space : TraceSpace
    u_exact : callable (x, y) -> value
    grad_u_exact : callable (x, y) -> (du/dx, du/dy)

    Returns
    -------
    TraceSpace whose `values` hold (u, du/dx, du/dy) at every boundary
    vertex; interior dofs remain unknowns.  Non-finite data raises.
    """
    constrained = space.constrained.copy()
    values = space.values.copy()
    for v in np.nonzero(space.mesh.is_boundary_vertex)[0]:
        x, y = space.mesh.vertices[v]
        val = float(u_exact(x, y))
        gx, gy = (float(g) for g in grad_u_exact(x, y))
        if not (np.isfinite(val) and np.isfinite(gx) and np.isfinite(gy)):
            raise ValueError(
                f"boundary data evaluation failed at vertex {v} ({x}, {y})"
            )
        base = DOFS_PER_VERTEX * v
        constrained[base : base + 3] = True
        values[base : base + 3] = (val, gx, gy)
    return replace(space, constrained=constrained, values=values)


def hermite_value_weights(t):
    """Cubic Hermite basis on [0, 1]: (H00, H10, H01, H11).

    `value(t) = H00 w0 + H10 L g0.tau + H01 w1 + H11 L g1.tau` where L
    is the edge length and tau the unit tangent.
    """
    t = np.asarray(t, dtype=float)
    t2, t3 = t * t, t * t * t
    return (
        1.0 - 3.0 * t2 + 2.0 * t3,
        t - 2.0 * t2 + t3,
        3.0 * t2 - 2.0 * t3,
        t3 - t2,
    )


def edge_dof_tables(mesh, edge_ids, t):
    """Edge-trace shape functions for the six endpoint dofs.

    For each edge in `edge_ids` and parameter in `t` (running from the
    lower-index to the higher-index endpoint), returns the weights that
    map the endpoint dof values
    ``(w_lo, gx_lo, gy_lo, w_hi, gx_hi, gy_hi)`` to the trace value and
    to the normal derivative with respect to the edge's global normal.

    Returns
    -------
    val : (n_edges, n_t, 6)
    nder : (n_edges, n_t, 6)
    """
    edge_ids = np.asarray(edge_ids, dtype=np.int64)
    t = np.asarray(t, dtype=float)
    h00, h10, h01, h11 = hermite_value_weights(t)
    length = mesh.edge_length[edge_ids][:, None]
    tau = mesh.edge_tangent[edge_ids]
    nrm = mesh.edge_normal[edge_ids]

    ne, nt = len(edge_ids), len(t)
    val = np.zeros((ne, nt, 6))
    val[:, :, 0] = h00
    val[:, :, 1] = h10 * length * tau[:, None, 0]
    val[:, :, 2] = h10 * length * tau[:, None, 1]
    val[:, :, 3] = h01
    val[:, :, 4] = h11 * length * tau[:, None, 0]
    val[:, :, 5] = h11 * length * tau[:, None, 1]

    nder = np.zeros((ne, nt, 6))
    nder[:, :, 1] = (1.0 - t) * nrm[:, None, 0]
    nder[:, :, 2] = (1.0 - t) * nrm[:, None, 1]
    nder[:, :, 4] = t * nrm[:, None, 0]
    nder[:, :, 5] = t * nrm[:, None, 1]
    return val, nder


def eval_edge_trace(space, coeffs, edge, t):
    """Trace value and normal derivative on one edge.

    Parameters
    ----------
    space : TraceSpace
    coeffs : (3 * nv,) dof vector
    edge : int
        Edge index into `space.mesh.edges`.
    t : float or array in [0, 1]
        Arc parameter from the lower-index to the higher-index endpoint.

    Returns
    -------
    (value, normal_derivative) with the normal derivative taken along
    the edge's global unit normal.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    lo, hi = space.mesh.edges[edge]
    dofs = np.concatenate([space.vertex_dofs(lo), space.vertex_dofs(hi)])
    val_tab, nder_tab = edge_dof_tables(space.mesh, [edge], t_arr)
    value = val_tab[0] @ coeffs[dofs]
    nder = nder_tab[0] @ coeffs[dofs]
    if np.isscalar(t) or np.asarray(t).ndim == 0:
        return float(value[0]), float(nder[0])
    return value, nder


def interpolate_function(space, u, grad_u):
    """Vertex-Hermite interpolant of a smooth function (all vertices)."""
    coeffs = np.zeros(space.ndof)
    for v in range(space.mesh.num_vertices):
        x, y = space.mesh.vertices[v]
        gx, gy = grad_u(x, y)
        coeffs[DOFS_PER_VERTEX * v : DOFS_PER_VERTEX * v + 3] = (u(x, y), gx, gy)
    return coeffs

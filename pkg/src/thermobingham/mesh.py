"""Uniform cross-grid triangulation of a rectangle.

Every quad of an ``nx x ny`` grid is split by its two diagonals into four
triangles sharing a node at the quad center.  Velocity and temperature live
on the P1 nodes (grid vertices followed by quad centers), pressure is one
constant per quad and the multiplier is one constant per triangle.
"""
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    """Cross-grid mesh of ``[0, x_extent] x [0, y_extent]``.

    Attributes
    ----------
    nodes : (n, 2) array
        Grid vertices in row-major order, then quad centers in row-major order.
    triangles : (m, 3) int array
        Counterclockwise vertex triples.  Triangle ``4*k + j`` belongs to quad
        ``k``; its third vertex is always the quad center.
    quads : (l, 5) int array
        Center node followed by the corners (SW, SE, NE, NW).
    boundary_edges_gamma : (e, 2) int array
        Node pairs of the top-edge segments (the Robin part of the boundary).
    """

    nx: int
    ny: int
    x_extent: float
    y_extent: float
    nodes: np.ndarray
    triangles: np.ndarray
    quads: np.ndarray
    tri_area: np.ndarray
    tri_quad: np.ndarray
    quad_area: np.ndarray
    boundary_nodes_gamma: np.ndarray
    boundary_nodes_gamma0: np.ndarray
    boundary_edges_gamma: np.ndarray
    boundary_edge_length: np.ndarray
    h: float
    _grad: np.ndarray = field(repr=False, compare=False)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @property
    def n_quads(self):
        return self.quads.shape[0]

    @property
    def boundary_nodes(self):
        """All nodes on the outer boundary, sorted."""
        return np.union1d(self.boundary_nodes_gamma, self.boundary_nodes_gamma0)

    @property
    def area(self):
        return self.x_extent * self.y_extent

    @property
    def checkerboard(self):
        """``(-1)**(i + j)`` for quad ``(i, j)``: the spurious pressure mode of
        the cross-grid element with no-slip walls."""
        jj, ii = np.divmod(np.arange(self.nx * self.ny), self.nx)
        return np.where((ii + jj) % 2 == 0, 1.0, -1.0)

    @property
    def centroids(self):
        return self.nodes[self.triangles].mean(axis=1)

    @property
    def grad_basis(self):
        """Constant P1 basis gradients, shape (m, 3, 2)."""
        return self._grad

    def dump(self, path):
        """Write a plain-text listing: one node or triangle per line."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# nodes {self.n_nodes}\n")
            for i, (x, y) in enumerate(self.nodes):
                fh.write(f"node {i} {x!r} {y!r}\n")
            fh.write(f"# triangles {self.n_triangles}\n")
            for t, (a, b, c) in enumerate(self.triangles):
                fh.write(f"tri {t} {a} {b} {c} quad {self.tri_quad[t]}\n")


def build_cross_grid(nx, ny, x_extent=1.0, y_extent=1.0):
    """Build the cross-grid mesh with ``nx * ny`` quads."""
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"quad counts must be positive integers, got ({nx}, {ny})")
    if not (x_extent > 0 and y_extent > 0):
        raise MeshError(f"extents must be positive, got ({x_extent}, {y_extent})")
    nx, ny = int(nx), int(ny)
    x_extent, y_extent = float(x_extent), float(y_extent)

    xs = np.linspace(0.0, x_extent, nx + 1)
    ys = np.linspace(0.0, y_extent, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    vertices = np.column_stack([gx.ravel(), gy.ravel()])
    cx, cy = np.meshgrid(0.5 * (xs[:-1] + xs[1:]), 0.5 * (ys[:-1] + ys[1:]))
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    nodes = np.vstack([vertices, centers])

    nv = (nx + 1) * (ny + 1)
    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    sw = jj * (nx + 1) + ii
    se = sw + 1
    nw = sw + nx + 1
    ne = nw + 1
    c = nv + jj * nx + ii
    quads = np.column_stack([c, sw, se, ne, nw])

    # four CCW triangles per quad: south, east, north, west
    tris = np.stack(
        [
            np.column_stack([sw, se, c]),
            np.column_stack([se, ne, c]),
            np.column_stack([ne, nw, c]),
            np.column_stack([nw, sw, c]),
        ],
        axis=1,
    ).reshape(-1, 3)
    tri_quad = np.repeat(np.arange(nx * ny), 4)

    p = nodes[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    if np.any(signed <= 0):
        raise MeshError("degenerate or clockwise triangle generated")
    tri_area = signed
    quad_area = tri_area.reshape(-1, 4).sum(axis=1)

    # grad(lambda_i) = perp(p_k - p_j) / (2|T|) for cyclic (i, j, k)
    grad = np.empty((tris.shape[0], 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        e = p[:, k] - p[:, j]
        grad[:, i, 0] = -e[:, 1] / (2.0 * tri_area)
        grad[:, i, 1] = e[:, 0] / (2.0 * tri_area)

    top = ny * (nx + 1) + np.arange(nx + 1)
    bottom = np.arange(nx + 1)
    left = np.arange(ny + 1) * (nx + 1)
    right = left + nx
    gamma0 = np.setdiff1d(np.unique(np.concatenate([bottom, left, right])), top)
    edges = np.column_stack([top[:-1], top[1:]])
    edge_len = np.linalg.norm(nodes[edges[:, 1]] - nodes[edges[:, 0]], axis=1)

    return Mesh(
        nx=nx,
        ny=ny,
        x_extent=x_extent,
        y_extent=y_extent,
        nodes=nodes,
        triangles=tris,
        quads=quads,
        tri_area=tri_area,
        tri_quad=tri_quad,
        quad_area=quad_area,
        boundary_nodes_gamma=top,
        boundary_nodes_gamma0=gamma0,
        boundary_edges_gamma=edges,
        boundary_edge_length=edge_len,
        h=_triangle_inradius(p[0]),
        _grad=grad,
    )


def _triangle_inradius(pts):
    a = np.linalg.norm(pts[1] - pts[0])
    b = np.linalg.norm(pts[2] - pts[1])
    c = np.linalg.norm(pts[0] - pts[2])
    d1, d2 = pts[1] - pts[0], pts[2] - pts[0]
    area = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
    return float(area / (0.5 * (a + b + c)))


def inradius(mesh):
    """Inscribed-circle radius of triangle 0 (all triangles are congruent
    when the quads are squares)."""
    return _triangle_inradius(mesh.nodes[mesh.triangles[0]])

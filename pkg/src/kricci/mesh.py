"""Triangulations of two-dimensional parameter domains and P1 quadrature."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay

from .errors import DisconnectedMesh

# edge-midpoint rule: exact for quadratics on triangles
TRI_BARY = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
TRI_WEIGHTS = np.full(3, 1.0 / 3.0)
# 7-point degree-5 rule, used where integrands are of higher degree (error norms)
_a1, _b1 = 0.059715871789770, 0.470142064105115
_a2, _b2 = 0.797426985353087, 0.101286507323456
TRI7_BARY = np.array([[1 / 3, 1 / 3, 1 / 3], [_a1, _b1, _b1], [_b1, _a1, _b1], [_b1, _b1, _a1],
                      [_a2, _b2, _b2], [_b2, _a2, _b2], [_b2, _b2, _a2]])
TRI7_WEIGHTS = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(3)
EDGE_PARAMS = 0.5 * (_GL_NODES + 1.0)
EDGE_WEIGHTS = 0.5 * _GL_WEIGHTS


@dataclass(frozen=True)
class ParamMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    h: float

    @property
    def n_vertices(self):
        return len(self.vertices)

    @cached_property
    def boundary_mask(self):
        mask = np.zeros(self.n_vertices, bool)
        mask[self.boundary_edges.ravel()] = True
        return mask

    @cached_property
    def param_areas(self):
        p = self.vertices[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def shape_gradients(self):
        """Parameter-space gradients of the three hat functions per triangle,
        shape ``(T, 3, 2)``."""
        p = self.vertices[self.triangles]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)     # columns
        Jinv = np.linalg.inv(J)
        ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        return ref @ Jinv

    def quadrature_points(self):
        """Parameter coordinates of the triangle quadrature points, ``(T, 3, 2)``."""
        return np.einsum("qi,tid->tqd", TRI_BARY, self.vertices[self.triangles])

    def edge_quadrature_points(self):
        """``(E, 3, 2)`` Gauss points on boundary edges and the edge tangents."""
        a = self.vertices[self.boundary_edges[:, 0]]
        b = self.vertices[self.boundary_edges[:, 1]]
        pts = a[:, None, :] + EDGE_PARAMS[None, :, None] * (b - a)[:, None, :]
        return pts, b - a

    @cached_property
    def vertex_adjacency(self):
        T = self.triangles
        rows = np.concatenate([T[:, 0], T[:, 1], T[:, 2], T[:, 1], T[:, 2], T[:, 0]])
        cols = np.concatenate([T[:, 1], T[:, 2], T[:, 0], T[:, 0], T[:, 1], T[:, 2]])
        A = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_vertices,) * 2)
        return A.tocsr()

    def rings(self, depth: int = 2):
        """For each vertex, the sorted indices of its ``depth``-ring (including itself)."""
        A = self.vertex_adjacency + sparse.identity(self.n_vertices, format="csr")
        R = A.copy()
        for _ in range(depth - 1):
            R = R @ A
        R = R.tocsr()
        return [np.sort(R.indices[R.indptr[i]:R.indptr[i + 1]]) for i in range(self.n_vertices)]

    def check(self):
        """Connectedness, orientation and closed boundary cycles."""
        ncomp, _ = connected_components(self.vertex_adjacency, directed=False)
        if ncomp != 1:
            raise DisconnectedMesh(f"mesh has {ncomp} connected components")
        if np.any(self.param_areas <= 0):
            raise ValueError("triangles are not consistently oriented")
        deg = np.bincount(self.boundary_edges.ravel(), minlength=self.n_vertices)
        if np.any(deg[self.boundary_mask] != 2):
            raise ValueError("boundary edges do not form closed cycles")
        return True


def _finish(points, tri, h, keep=None) -> ParamMesh:
    if keep is not None:
        tri = tri[keep]
    used = np.unique(tri)
    remap = -np.ones(len(points), int)
    remap[used] = np.arange(len(used))
    points, tri = points[used], remap[tri]
    p = points[tri]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    flip = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    # boundary edges: oriented edges whose reverse is absent
    e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    key = {tuple(x) for x in e.tolist()}
    bnd = np.array([x for x in e.tolist() if (x[1], x[0]) not in key], dtype=int).reshape(-1, 2)
    mesh = ParamMesh(points, tri, bnd, h)
    mesh.check()
    return mesh


def disk_mesh(refinement: int, radius: float = 1.0) -> ParamMesh:
    """Concentric-ring triangulation of the disk of given radius.

    Ring ``k`` (``k = 0..K``, ``K = 2**refinement``) carries ``6k`` points.
    """
    K = 2 ** int(refinement)
    pts = [np.zeros((1, 2))]
    for k in range(1, K + 1):
        ang = 2 * np.pi * (np.arange(6 * k) + 0.5 * (k % 2)) / (6 * k)
        pts.append(radius * k / K * np.column_stack([np.cos(ang), np.sin(ang)]))
    points = np.vstack(pts)
    tri = Delaunay(points).simplices
    return _finish(points, tri, radius / K)


def annulus_mesh(refinement: int, r_in: float = 0.5, r_out: float = 1.0) -> ParamMesh:
    """Annulus ``r_in <= |u| <= r_out`` with rings spaced about ``2**-refinement``."""
    h = 1.0 / 2 ** int(refinement)
    L = max(1, int(round((r_out - r_in) / h)))
    pts = []
    for k in range(L + 1):
        r = r_in + (r_out - r_in) * k / L
        cnt = max(6, int(round(2 * np.pi * r / h)))
        ang = 2 * np.pi * (np.arange(cnt) + 0.5 * (k % 2)) / cnt
        pts.append(r * np.column_stack([np.cos(ang), np.sin(ang)]))
    points = np.vstack(pts)
    tri = Delaunay(points).simplices
    cen = points[tri].mean(axis=1)
    # centroids of triangles inside the hole sit below the inner ring's chord radius
    chord = r_in * np.cos(np.pi / max(6, int(round(2 * np.pi * r_in / h))))
    keep = np.linalg.norm(cen, axis=1) > chord
    return _finish(points, tri, (r_out - r_in) / L, keep)


def write_off(path, vertices3, triangles) -> None:
    """Write an OFF text file (vertex count, face list)."""
    V = np.asarray(vertices3, float)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("OFF\n")
        fh.write(f"{len(V)} {len(triangles)} 0\n")
        for row in V:
            fh.write(" ".join(repr(float(c)) for c in row) + "\n")
        for t in triangles:
            fh.write("3 " + " ".join(str(int(i)) for i in t) + "\n")


def read_off(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.split() for ln in fh if ln.strip() and not ln.startswith("#")]
    if lines[0] != ["OFF"]:
        raise ValueError("not an OFF file")
    nv, nf = int(lines[1][0]), int(lines[1][1])
    V = np.array([[float(c) for c in ln] for ln in lines[2:2 + nv]])
    F = np.array([[int(c) for c in ln[1:]] for ln in lines[2 + nv:2 + nv + nf]])
    return V, F

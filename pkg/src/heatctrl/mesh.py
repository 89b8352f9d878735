"""Structured triangulations of the unit square with a two-part boundary.

The domain is always [0,1]^2, subdivided into nx-by-ny cells, each cell split
into two counterclockwise triangles along the same diagonal.  Boundary edges
are tagged either "gamma1" (the side where the temperature is pinned / the
Robin exchange acts) or "gamma2" (the side carrying the prescribed flux).
"""

from dataclasses import dataclass

import numpy as np

SIDES = ("left", "right", "bottom", "top")
GAMMA1 = "gamma1"
GAMMA2 = "gamma2"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid on [0, T] for implicit Euler stepping."""

    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"final time must be positive, got {self.T}")
        if self.n_steps < 1:
            raise ValueError(f"need at least one time step, got {self.n_steps}")

    @property
    def tau(self) -> float:
        return self.T / self.n_steps


@dataclass(frozen=True)
class Mesh:
    """P1 triangulation of the unit square.

    Attributes
    ----------
    nodes : ndarray, shape (n_nodes, 2)
        Vertex coordinates, exact multiples of 1/nx and 1/ny.
    triangles : ndarray, shape (n_triangles, 3)
        Node index triples, counterclockwise orientation.
    boundary_edges : ndarray, shape (n_edges, 2)
        Node index pairs along the boundary.
    boundary_tags : ndarray, shape (n_edges,)
        Per-edge tag, "gamma1" or "gamma2".
    nx, ny : int
        Subdivision counts per axis.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    nx: int
    ny: int

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def edges_with_tag(self, tag):
        return self.boundary_edges[self.boundary_tags == tag]

    def validate(self):
        """Check the structural invariants; raises ValueError on violation."""
        if np.any(signed_areas(self) <= 0):
            bad = int(np.argmin(signed_areas(self)))
            raise ValueError(f"triangle {bad} is not counterclockwise")
        tags = set(self.boundary_tags.tolist())
        if not tags <= {GAMMA1, GAMMA2}:
            raise ValueError(f"unknown boundary tags: {tags - {GAMMA1, GAMMA2}}")
        if len(self.edges_with_tag(GAMMA1)) == 0 or len(self.edges_with_tag(GAMMA2)) == 0:
            raise ValueError("both boundary portions must own at least one edge")


def signed_areas(mesh) -> np.ndarray:
    """Signed area of every triangle (positive for counterclockwise)."""
    p = mesh.nodes[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def edge_lengths(mesh, tag) -> np.ndarray:
    edges = mesh.edges_with_tag(tag)
    d = mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]]
    return np.hypot(d[:, 0], d[:, 1])


def _normalize_sides(gamma1_spec):
    if isinstance(gamma1_spec, str):
        sides = tuple(s.strip() for s in gamma1_spec.split(",") if s.strip())
    else:
        sides = tuple(gamma1_spec)
    for s in sides:
        if s not in SIDES:
            raise ValueError(f"unknown side {s!r}, expected one of {SIDES}")
    return tuple(dict.fromkeys(sides))  # stable dedup


def build_rect_mesh(nx: int, ny: int, gamma1_spec="left") -> Mesh:
    """Triangulate the unit square with tagged boundary sides.

    Parameters
    ----------
    nx, ny : int
        Number of cells per axis (each cell becomes two triangles).
    gamma1_spec : str or iterable of str
        Sides tagged "gamma1"; a nonempty, proper subset of
        {"left", "right", "bottom", "top"}.  Remaining sides get "gamma2".
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"subdivision counts must be >= 1, got nx={nx}, ny={ny}")
    g1_sides = _normalize_sides(gamma1_spec)
    if len(g1_sides) == 0:
        raise ValueError("gamma1 must own at least one side")
    if len(g1_sides) == len(SIDES):
        raise ValueError("gamma1 cannot cover the whole boundary (gamma2 would be empty)")

    nodes = np.empty(((nx + 1) * (ny + 1), 2))
    for j in range(ny + 1):
        for i in range(nx + 1):
            nodes[j * (nx + 1) + i] = (i / nx, j / ny)

    triangles = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b = a + 1
            c = a + nx + 2
            d = a + nx + 1
            triangles.append((a, b, c))
            triangles.append((a, c, d))
    triangles = np.asarray(triangles, dtype=np.intp)

    def side_edges(side):
        if side == "left":
            ids = [j * (nx + 1) for j in range(ny + 1)]
        elif side == "right":
            ids = [j * (nx + 1) + nx for j in range(ny + 1)]
        elif side == "bottom":
            ids = list(range(nx + 1))
        else:  # top
            ids = [ny * (nx + 1) + i for i in range(nx + 1)]
        return [(ids[k], ids[k + 1]) for k in range(len(ids) - 1)]

    edges, tags = [], []
    for side in SIDES:
        tag = GAMMA1 if side in g1_sides else GAMMA2
        for e in side_edges(side):
            edges.append(e)
            tags.append(tag)

    mesh = Mesh(
        nodes=nodes,
        triangles=triangles,
        boundary_edges=np.asarray(edges, dtype=np.intp),
        boundary_tags=np.asarray(tags),
        nx=nx,
        ny=ny,
    )
    mesh.validate()
    return mesh


def dof_partition(mesh):
    """Split node indices into (dirichlet_nodes, free_nodes).

    Dirichlet nodes are all nodes incident to a gamma1 edge; nodes shared by
    a gamma1 and a gamma2 edge count as Dirichlet.
    """
    dirichlet = np.unique(mesh.edges_with_tag(GAMMA1).ravel())
    mask = np.ones(mesh.n_nodes, dtype=bool)
    mask[dirichlet] = False
    free = np.flatnonzero(mask)
    return dirichlet, free

"""P1 finite-element matrices for the heat-control problem.

All element integrals are exact for piecewise-linear functions: constant
gradients per triangle for the stiffness form, the (area/12)[[2,1,1],...]
matrix for the domain mass, and the (len/6)[[2,1],[1,2]] matrix for boundary
edge masses.  Mass matrices are consistent (never lumped) so the discrete
adjoint identity holds to machine precision.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .linalg import gen_eig_extreme
from .mesh import GAMMA1, GAMMA2, Mesh, dof_partition, signed_areas


class AssemblyError(RuntimeError):
    pass


@dataclass(frozen=True)
class DiscreteOperators:
    """Assembled sparse operators of one mesh.

    K : stiffness (grad-grad form), positive semidefinite, zero row sums.
    M : domain mass (L2 inner product), positive definite.
    B1 : boundary mass on the gamma1 edges, positive semidefinite.
    B2 : boundary mass on the gamma2 edges, positive semidefinite.
    B2_gamma : B2 restricted to the gamma2 node set (the flux-control space).
    gamma2_nodes : sorted node indices incident to a gamma2 edge.
    dirichlet_nodes / free_nodes : the dof partition of the mesh.
    """

    K: sp.csr_matrix
    M: sp.csr_matrix
    B1: sp.csr_matrix
    B2: sp.csr_matrix
    B2_gamma: sp.csr_matrix
    gamma2_nodes: np.ndarray
    dirichlet_nodes: np.ndarray
    free_nodes: np.ndarray
    mesh: Mesh

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    def trace2(self, values):
        """Restrict nodal fields (last axis) to the gamma2 nodes."""
        return np.asarray(values)[..., self.gamma2_nodes]

    def extend_gamma2(self, q):
        """Extend gamma2-node fields (last axis) by zero to all nodes."""
        q = np.asarray(q)
        full = np.zeros(q.shape[:-1] + (self.n_nodes,))
        full[..., self.gamma2_nodes] = q
        return full


@dataclass(frozen=True)
class ConstantsReport:
    """Discrete coercivity and trace constants of one assembled mesh.

    lambda0 : coercivity of the stiffness form against the full H1 norm on
        the subspace vanishing at Dirichlet nodes.
    lambda1 : coercivity of stiffness plus gamma1 boundary mass on all nodes.
    trace_norm : operator norm of the restriction H1 -> L2(gamma2).
    """

    lambda0: float
    lambda1: float
    trace_norm: float
    mesh_descriptor: str

    def to_dict(self):
        return {
            "lambda0": self.lambda0,
            "lambda1": self.lambda1,
            "trace_norm": self.trace_norm,
            "mesh": self.mesh_descriptor,
        }


def _boundary_mass(mesh, tag, n):
    rows, cols, vals = [], [], []
    edges = mesh.edges_with_tag(tag)
    for a, b in edges:
        d = mesh.nodes[b] - mesh.nodes[a]
        length = float(np.hypot(d[0], d[1]))
        local = (length / 6.0) * np.array([[2.0, 1.0], [1.0, 2.0]])
        for i, gi in enumerate((a, b)):
            for j, gj in enumerate((a, b)):
                rows.append(gi)
                cols.append(gj)
                vals.append(local[i, j])
    return sp.csr_matrix(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)))


def assemble(mesh: Mesh) -> DiscreteOperators:
    """Assemble stiffness, mass and boundary-mass matrices for a mesh."""
    n = mesh.n_nodes
    areas = signed_areas(mesh)
    for t, area in enumerate(areas):
        if area <= 0:
            raise AssemblyError(f"triangle {t} has non-positive area {area}")

    k_rows, k_cols, k_vals = [], [], []
    m_rows, m_cols, m_vals = [], [], []
    m_local_ref = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    for t, tri in enumerate(mesh.triangles):
        x = mesh.nodes[tri, 0]
        y = mesh.nodes[tri, 1]
        area = areas[t]
        # P1 gradient coefficients: grad(phi_i) = (b_i, c_i) / (2 area)
        b = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]]) / (2.0 * area)
        c = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]]) / (2.0 * area)
        k_local = area * (np.outer(b, b) + np.outer(c, c))
        m_local = area * m_local_ref
        for i in range(3):
            for j in range(3):
                k_rows.append(tri[i])
                k_cols.append(tri[j])
                k_vals.append(k_local[i, j])
                m_rows.append(tri[i])
                m_cols.append(tri[j])
                m_vals.append(m_local[i, j])

    K = sp.csr_matrix(sp.coo_matrix((k_vals, (k_rows, k_cols)), shape=(n, n)))
    M = sp.csr_matrix(sp.coo_matrix((m_vals, (m_rows, m_cols)), shape=(n, n)))
    B1 = _boundary_mass(mesh, GAMMA1, n)
    B2 = _boundary_mass(mesh, GAMMA2, n)

    dirichlet, free = dof_partition(mesh)
    gamma2 = np.unique(mesh.edges_with_tag(GAMMA2).ravel())
    B2_gamma = sp.csr_matrix(B2[np.ix_(gamma2, gamma2)])

    return DiscreteOperators(
        K=K,
        M=M,
        B1=B1,
        B2=B2,
        B2_gamma=B2_gamma,
        gamma2_nodes=gamma2,
        dirichlet_nodes=dirichlet,
        free_nodes=free,
        mesh=mesh,
    )


def compute_constants(ops: DiscreteOperators, tol=1e-10) -> ConstantsReport:
    """Discrete coercivity/trace constants via generalized eigen-extremes.

    The discrete H1 norm is v^T (K + M) v throughout; lambda0 is computed on
    the free-node block, lambda1 and the trace norm on all nodes.
    """
    F = ops.free_nodes
    if len(F) == 0:
        raise ValueError(
            "mesh has no free nodes; the coercivity constant on the "
            "Dirichlet-constrained subspace is undefined"
        )
    KM = sp.csr_matrix(ops.K + ops.M)
    K_ff = sp.csr_matrix(ops.K[np.ix_(F, F)])
    KM_ff = sp.csr_matrix(KM[np.ix_(F, F)])
    lambda0 = gen_eig_extreme(K_ff, KM_ff, "smallest", tol=tol)
    lambda1 = gen_eig_extreme(sp.csr_matrix(ops.K + ops.B1), KM, "smallest", tol=tol)
    mu_max = gen_eig_extreme(ops.B2, KM, "largest", tol=tol)
    mesh = ops.mesh
    g1 = ",".join(sorted(set(
        _side_of_edge(mesh, e) for e in mesh.edges_with_tag(GAMMA1)
    )))
    descriptor = f"{mesh.nx}x{mesh.ny} unit square, gamma1={g1}"
    return ConstantsReport(
        lambda0=float(lambda0),
        lambda1=float(lambda1),
        trace_norm=float(np.sqrt(mu_max)),
        mesh_descriptor=descriptor,
    )


def _side_of_edge(mesh, edge):
    p = 0.5 * (mesh.nodes[edge[0]] + mesh.nodes[edge[1]])
    if p[0] == 0.0:
        return "left"
    if p[0] == 1.0:
        return "right"
    if p[1] == 0.0:
        return "bottom"
    return "top"

"""Space-time solver for the coupled adjoint system.

The optimality conditions of the assimilation problem reduce to one
fourth-order boundary value problem in space-time for the adjoint state p.
Introducing the auxiliary field q (the spatial operator applied to p)
splits it into two second-order equations that continuous piecewise-linear
elements can handle on the tensor grid.  Trial functions for q carry the
inhomogeneous lateral trace (minus the data on the spatial boundary) while
every test function is homogeneous, so trial and test spaces differ and the
assembled matrix is nonsymmetric.  Its symmetric part is positive definite
on the free unknowns, which is what makes the direct solve safe.

Block layout of the free unknowns: all free p values first, then all free q
values, each block time-major.  In tensor form the blocks are

    A_pp = Kt (x) M  +  E00 (x) (K_a + M_a0 + (1/alpha) M)
    A_pq =  Mt (x) (K_a + M_a0)
    A_qp = -Mt (x) (K_a + M_a0)   (negative transpose of A_pq)
    A_qq =  Mt (x) M

with Mt, Kt the temporal mass/stiffness on the (possibly non-uniform) time
grid, M, K_a, M_a0 the spatial matrices, and E00 picking the t=0 node.
Constrained values are eliminated; the known q boundary columns move to the
right-hand side.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem1d
from .mesh import SpaceTimeField, SpatialMesh, TimeGrid

if TYPE_CHECKING:
    from .assimilation import ProblemSpec

__all__ = [
    "DofMap",
    "AssembledSystem",
    "EllipticSolution",
    "EllipticSolverError",
    "build_dofmap",
    "assemble",
    "solve_sparse",
    "residual_check",
    "dump_system",
]


class EllipticSolverError(RuntimeError):
    """Raised when the linear solve cannot meet the residual contract."""


@dataclass(frozen=True)
class DofMap:
    """Free/fixed classification of every (field, time node, space node).

    Field p is fixed to zero on the lateral boundary and on the final time
    slice; field q is fixed to minus the data trace on the lateral boundary
    and free elsewhere.  Flat node ids are time-major, i * (d+1) + j.
    """

    tgrid: TimeGrid
    smesh: SpatialMesh
    p_free: np.ndarray
    q_free: np.ndarray
    q_fixed: np.ndarray
    q_fixed_values: np.ndarray

    @property
    def n_p(self) -> int:
        return self.p_free.size

    @property
    def n_q(self) -> int:
        return self.q_free.size

    @property
    def size(self) -> int:
        return self.n_p + self.n_q

    def scatter(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Expand a free-dof vector into full nodal (p, q) arrays."""
        if x.shape != (self.size,):
            raise ValueError(f"expected {self.size} free values, got {x.shape}")
        shape = (self.tgrid.N + 1, self.smesh.d + 1)
        p = np.zeros(shape)
        q = np.zeros(shape)
        p.ravel()[self.p_free] = x[: self.n_p]
        q.ravel()[self.q_free] = x[self.n_p :]
        q.ravel()[self.q_fixed] = self.q_fixed_values
        return p, q

    def gather(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Collect the free-dof vector back out of full nodal arrays."""
        return np.concatenate(
            [np.asarray(p).ravel()[self.p_free], np.asarray(q).ravel()[self.q_free]]
        )


@dataclass(frozen=True)
class AssembledSystem:
    """Sparse operator and load over the free dofs, plus their dof map."""

    A: sp.csr_array
    b: np.ndarray
    dofmap: DofMap


@dataclass(frozen=True)
class EllipticSolution:
    """Adjoint pair on the grids and the relative residual of the solve."""

    p: SpaceTimeField
    q: SpaceTimeField
    solver_residual: float


def build_dofmap(problem: "ProblemSpec", smesh: SpatialMesh, tgrid: TimeGrid) -> DofMap:
    """Classify dofs and tabulate the fixed boundary values of q."""
    n_x = smesh.d + 1
    inner = np.arange(1, smesh.d)
    p_rows = np.arange(tgrid.N) * n_x
    q_rows = np.arange(tgrid.N + 1) * n_x
    p_free = (p_rows[:, None] + inner[None, :]).ravel()
    q_free = (q_rows[:, None] + inner[None, :]).ravel()
    q_fixed = (q_rows[:, None] + np.array([0, smesh.d])[None, :]).ravel()
    q_fixed_values = np.array(
        [
            -float(problem.y_d(t, x))
            for t in tgrid.taus
            for x in (smesh.x_left, smesh.x_right)
        ]
    )
    return DofMap(
        tgrid=tgrid,
        smesh=smesh,
        p_free=p_free,
        q_free=q_free,
        q_fixed=q_fixed,
        q_fixed_values=q_fixed_values,
    )


def _data_load(
    problem: "ProblemSpec",
    smesh: SpatialMesh,
    tgrid: TimeGrid,
    quad_order: int,
) -> np.ndarray:
    """Load vector over all p test functions (full node set, time-major).

    Space-time term: integral of (f - dt y_d - A y_d) against each hat
    function.  Initial term: integral of (y_b - y_d(0)) against the t=0
    hats.  Tensor Gauss quadrature with quad_order points per direction.
    """
    gp, gw = fem1d.gauss_rule(quad_order)
    h = smesh.h
    n_x = smesh.d + 1
    centers = 0.5 * (smesh.nodes[:-1] + smesh.nodes[1:])
    xg = centers[:, None] + 0.5 * h * gp[None, :]
    phi_l = (1.0 - gp) / 2.0
    phi_r = (1.0 + gp) / 2.0
    w_x = 0.5 * h * gw

    def gather_nodal(values_at_gauss: np.ndarray) -> np.ndarray:
        nodal = np.zeros(n_x)
        nodal[:-1] += (values_at_gauss * (w_x * phi_l)[None, :]).sum(axis=1)
        nodal[1:] += (values_at_gauss * (w_x * phi_r)[None, :]).sum(axis=1)
        return nodal

    load = np.zeros((tgrid.N + 1) * n_x)
    for i in range(tgrid.N):
        t0 = tgrid.taus[i]
        dt = tgrid.deltas[i]
        mid = t0 + 0.5 * dt
        for gt, wt in zip(gp, gw):
            t = mid + 0.5 * dt * gt
            w_t = 0.5 * dt * wt
            g = (
                np.asarray(problem.f(t, xg), dtype=float)
                - np.asarray(problem.y_d_t(t, xg), dtype=float)
                - np.asarray(problem.Ay_d(t, xg), dtype=float)
            )
            g = np.broadcast_to(g, xg.shape)
            nodal = gather_nodal(g)
            lam = (t - t0) / dt
            load[i * n_x : (i + 1) * n_x] += w_t * (1.0 - lam) * nodal
            load[(i + 1) * n_x : (i + 2) * n_x] += w_t * lam * nodal

    g0 = np.asarray(problem.y_b(xg), dtype=float) - np.asarray(
        problem.y_d(0.0, xg), dtype=float
    )
    g0 = np.broadcast_to(g0, xg.shape)
    load[:n_x] += gather_nodal(g0)
    return load


def assemble(
    problem: "ProblemSpec",
    smesh: SpatialMesh,
    tgrid: TimeGrid,
    quad_order: int = 3,
) -> AssembledSystem:
    """Assemble the free-dof system for the adjoint pair.

    Raises ValueError for a non-positive trust coefficient or degenerate
    grids (the coupled system needs at least one interval in time and one
    interior node in space).
    """
    if not problem.alpha > 0.0:
        raise ValueError(f"alpha must be positive, got {problem.alpha}")
    if tgrid.N < 1:
        raise ValueError("need at least one time interval")
    if smesh.d < 2:
        raise ValueError("need at least one interior spatial node")

    dofmap = build_dofmap(problem, smesh, tgrid)
    mats = fem1d.assemble_spatial_matrices(
        smesh, problem.a, problem.a0, quad_order=quad_order
    )
    k_hat = (mats.K_a + mats.M_a0).tocsr()
    s0 = (k_hat + (1.0 / problem.alpha) * mats.M).tocsr()

    mt, kt = fem1d.assemble_line_matrices(tgrid.taus)
    n_t = tgrid.N + 1
    e00 = sp.coo_array(([1.0], ([0], [0])), shape=(n_t, n_t))

    a_pp_full = (sp.kron(kt, mats.M) + sp.kron(e00, s0)).tocsr()
    coupling_full = sp.kron(mt, k_hat).tocsr()
    a_qq_full = sp.kron(mt, mats.M).tocsr()

    pf, qf, qx = dofmap.p_free, dofmap.q_free, dofmap.q_fixed
    a_pp = a_pp_full[pf][:, pf]
    a_pq = coupling_full[pf][:, qf]
    a_qp = -coupling_full[qf][:, pf]
    a_qq = a_qq_full[qf][:, qf]
    A = sp.block_array([[a_pp, a_pq], [a_qp, a_qq]]).tocsr()

    b_p = _data_load(problem, smesh, tgrid, quad_order)[pf]
    b_q = np.zeros(qf.size)
    if np.any(dofmap.q_fixed_values):
        # Lift the known q boundary columns onto the right-hand side.
        b_p -= coupling_full[pf][:, qx] @ dofmap.q_fixed_values
        b_q -= a_qq_full[qf][:, qx] @ dofmap.q_fixed_values
    b = np.concatenate([b_p, b_q])
    return AssembledSystem(A=A, b=b, dofmap=dofmap)


def _relative_residual(A: sp.csr_array, x: np.ndarray, b: np.ndarray) -> float:
    r = b - A @ x
    norm_b = float(np.linalg.norm(b))
    norm_r = float(np.linalg.norm(r))
    return norm_r / norm_b if norm_b > 0.0 else norm_r


def solve_sparse(system: AssembledSystem) -> EllipticSolution:
    """Direct sparse solve with one step of iterative refinement.

    The contract is a relative residual of at most 1e-10 (absolute 1e-12
    for a zero load); anything worse raises EllipticSolverError instead of
    returning a silently inaccurate solution.
    """
    A, b = system.A, system.b
    try:
        lu = spla.splu(A.tocsc())
        x = lu.solve(b)
        x += lu.solve(b - A @ x)
    except RuntimeError as exc:
        raise EllipticSolverError(f"sparse factorization failed: {exc}") from exc

    residual = _relative_residual(A, x, b)
    zero_load = not np.any(b)
    if (zero_load and residual > 1e-12) or (not zero_load and residual > 1e-10):
        raise EllipticSolverError(
            f"linear solve achieved residual {residual:.3e}, contract is 1e-10"
        )

    p_vals, q_vals = system.dofmap.scatter(x)
    tgrid, smesh = system.dofmap.tgrid, system.dofmap.smesh
    return EllipticSolution(
        p=SpaceTimeField(tgrid, smesh, p_vals),
        q=SpaceTimeField(tgrid, smesh, q_vals),
        solver_residual=residual,
    )


def residual_check(system: AssembledSystem, sol: EllipticSolution) -> float:
    """Relative algebraic residual of a solution against its system.

    This is the fully discrete counterpart of Galerkin orthogonality: a
    converged solution leaves no component of the load in the test space.
    """
    x = system.dofmap.gather(sol.p.values, sol.q.values)
    return _relative_residual(system.A, x, system.b)


def dump_system(system: AssembledSystem, matrix_path, rhs_path) -> None:
    """Debug dump: matrix as 'row col value' triplets, rhs one value per line."""
    coo = system.A.tocoo()
    lines = [
        f"{r} {c} {v:.17g}" for r, c, v in zip(coo.row, coo.col, coo.data)
    ]
    Path(matrix_path).write_text("\n".join(lines) + "\n")
    Path(rhs_path).write_text(
        "\n".join(f"{v:.17g}" for v in system.b) + "\n"
    )

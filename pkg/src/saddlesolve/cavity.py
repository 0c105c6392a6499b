"""Built-in 2D lid-driven cavity benchmark.

Structured Taylor-Hood discretization on [-1, 1]^2: a uniform grid of
(2^(l-1))^2 squares, each split along the lower-left to upper-right
diagonal into two quadratic triangles.  Quadratic velocities live on the
fine node grid, linear pressures on the square vertices.  The unknown
layout is [u_x interior nodes, u_y interior nodes, all pressure nodes],
each block in lexicographic (y, x) node order, which makes the pressure
null vector a trailing constant block.

Dirichlet velocity data (no-slip walls, moving top lid; the two top
corners take the lid value) is eliminated: assembled full-grid operators
are cached and the reduced blocks are sliced from them, with boundary
contributions moved to right-hand sides inside the residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .krylov import GmresParams, PrecondOperator, fgmres
from .mlilu import FactorParams, factorize

__all__ = [
    "CavityMesh",
    "CavityProblem",
    "build_mesh",
    "build_problem",
    "dof_counts",
    "null_vector",
    "oseen_operator",
    "newton_operator",
    "residual",
    "assemble_convection",
    "stokes_initial_guess",
    "split_state",
    "expand_state",
    "write_solution_csv",
]

INTERIOR, WALL, LID = 0, 1, 2

# degree-5, 7-point quadrature on the reference triangle (weights sum to 1,
# scaled by the reference area 1/2 below)
_SQ15 = math.sqrt(15.0)
_QW = np.array(
    [9.0 / 40.0]
    + [(155.0 + _SQ15) / 1200.0] * 3
    + [(155.0 - _SQ15) / 1200.0] * 3
)
_B1 = (6.0 + _SQ15) / 21.0
_A1 = 1.0 - 2.0 * _B1
_B2 = (6.0 - _SQ15) / 21.0
_A2 = 1.0 - 2.0 * _B2
_QP = np.array(
    [
        [1.0 / 3.0, 1.0 / 3.0],
        [_B1, _B1], [_A1, _B1], [_B1, _A1],
        [_B2, _B2], [_A2, _B2], [_B2, _A2],
    ]
)


def _p2_basis(pts):
    """Values and reference gradients of the 6 quadratic basis functions
    (vertices then edge midpoints 01, 12, 20) at the given (xi, eta)."""
    xi, eta = pts[:, 0], pts[:, 1]
    lam = np.stack([1.0 - xi - eta, xi, eta], axis=1)
    n = np.stack(
        [
            lam[:, 0] * (2 * lam[:, 0] - 1),
            lam[:, 1] * (2 * lam[:, 1] - 1),
            lam[:, 2] * (2 * lam[:, 2] - 1),
            4 * lam[:, 0] * lam[:, 1],
            4 * lam[:, 1] * lam[:, 2],
            4 * lam[:, 2] * lam[:, 0],
        ],
        axis=1,
    )
    gl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    dn = np.empty((pts.shape[0], 6, 2))
    for d in range(2):
        dn[:, 0, d] = (4 * lam[:, 0] - 1) * gl[0, d]
        dn[:, 1, d] = (4 * lam[:, 1] - 1) * gl[1, d]
        dn[:, 2, d] = (4 * lam[:, 2] - 1) * gl[2, d]
        dn[:, 3, d] = 4 * (lam[:, 1] * gl[0, d] + lam[:, 0] * gl[1, d])
        dn[:, 4, d] = 4 * (lam[:, 2] * gl[1, d] + lam[:, 1] * gl[2, d])
        dn[:, 5, d] = 4 * (lam[:, 0] * gl[2, d] + lam[:, 2] * gl[0, d])
    return n, dn


def _p1_basis(pts):
    xi, eta = pts[:, 0], pts[:, 1]
    return np.stack([1.0 - xi - eta, xi, eta], axis=1)


def dof_counts(level: int):
    """(velocity dofs per component, pressure dofs) after elimination."""
    return (2**level - 1) ** 2, (2 ** (level - 1) + 1) ** 2


@dataclass
class CavityMesh:
    level: int
    nodes: np.ndarray           # (n_nodes, 2) fine-grid coordinates
    triangles: np.ndarray       # (n_tri, 6) quadratic connectivity
    p1_conn: np.ndarray         # (n_tri, 3) vertex -> pressure dof
    pressure_nodes: np.ndarray  # fine node id of each pressure dof
    boundary_kind: np.ndarray   # per fine node: INTERIOR / WALL / LID
    interior: np.ndarray        # fine node ids of interior velocity dofs

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_velocity(self) -> int:
        return self.interior.size

    @property
    def n_pressure(self) -> int:
        return self.pressure_nodes.size

    @property
    def n_unknowns(self) -> int:
        return 2 * self.n_velocity + self.n_pressure


def build_mesh(level: int) -> CavityMesh:
    if not (3 <= level <= 12):
        raise ValueError("mesh level must be between 3 and 12")
    ncell = 2 ** (level - 1)       # squares per side
    m = 2 * ncell                  # fine intervals per side
    coords_1d = -1.0 + 2.0 * np.arange(m + 1) / m
    ix, iy = np.meshgrid(np.arange(m + 1), np.arange(m + 1))
    nodes = np.column_stack([coords_1d[ix.ravel()], coords_1d[iy.ravel()]])

    def nid(jx, jy):
        return jy * (m + 1) + jx

    cx, cy = np.meshgrid(np.arange(ncell), np.arange(ncell))
    bx = (2 * cx.ravel()).astype(np.intp)
    by = (2 * cy.ravel()).astype(np.intp)
    # lower-right triangle then upper-left, both counterclockwise, split
    # along the same lower-left to upper-right diagonal in every square
    t_low = np.column_stack([
        nid(bx, by), nid(bx + 2, by), nid(bx + 2, by + 2),
        nid(bx + 1, by), nid(bx + 2, by + 1), nid(bx + 1, by + 1),
    ])
    t_up = np.column_stack([
        nid(bx, by), nid(bx + 2, by + 2), nid(bx, by + 2),
        nid(bx + 1, by + 1), nid(bx + 1, by + 2), nid(bx, by + 1),
    ])
    triangles = np.empty((2 * ncell * ncell, 6), dtype=np.intp)
    triangles[0::2] = t_low
    triangles[1::2] = t_up

    def pid(jx, jy):
        return (jy // 2) * (ncell + 1) + jx // 2

    p_low = np.column_stack([pid(bx, by), pid(bx + 2, by), pid(bx + 2, by + 2)])
    p_up = np.column_stack([pid(bx, by), pid(bx + 2, by + 2), pid(bx, by + 2)])
    p1_conn = np.empty((2 * ncell * ncell, 3), dtype=np.intp)
    p1_conn[0::2] = p_low
    p1_conn[1::2] = p_up

    px, py = np.meshgrid(np.arange(0, m + 1, 2), np.arange(0, m + 1, 2))
    pressure_nodes = nid(px.ravel().astype(np.intp), py.ravel().astype(np.intp))

    gx, gy = ix.ravel(), iy.ravel()
    kind = np.full((m + 1) * (m + 1), INTERIOR, dtype=np.int8)
    on_boundary = (gx == 0) | (gx == m) | (gy == 0) | (gy == m)
    kind[on_boundary] = WALL
    kind[gy == m] = LID  # top corners included: leaky-lid convention
    interior = np.flatnonzero(kind == INTERIOR).astype(np.intp)

    return CavityMesh(
        level=level,
        nodes=nodes,
        triangles=triangles,
        p1_conn=p1_conn,
        pressure_nodes=pressure_nodes,
        boundary_kind=kind,
        interior=interior,
    )


class _Quadrature:
    """Per-element-class basis tables; the mesh has two congruent triangle
    shapes (even/odd triangle index) with constant affine maps."""

    def __init__(self, mesh: CavityMesh):
        phi, dphi = _p2_basis(_QP)
        psi = _p1_basis(_QP)
        self.phi = phi
        self.psi = psi
        self.classes = []
        for c in (0, 1):
            tri = mesh.triangles[c::2]
            v = mesh.nodes[mesh.triangles[c, :3]]
            jac = np.column_stack([v[1] - v[0], v[2] - v[0]])
            det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
            jinv = np.array([[jac[1, 1], -jac[0, 1]], [-jac[1, 0], jac[0, 0]]]) / det
            grad = dphi @ jinv            # (nq, 6, 2) physical gradients
            wdet = 0.5 * _QW * abs(det)   # reference area folded in
            self.classes.append(
                dict(
                    tri=tri,
                    p1=mesh.p1_conn[c::2],
                    gx=grad[:, :, 0],
                    gy=grad[:, :, 1],
                    wdet=wdet,
                )
            )


def _scatter(nrows, ncols, rows, cols, vals):
    out = sp.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols)).tocsr()
    out.sum_duplicates()
    out.sort_indices()
    return out


@dataclass
class CavityProblem:
    mesh: CavityMesh
    re: float
    nu: float
    bc_kind: str
    lid_values: np.ndarray        # lid u_x at every fine node (0 off-lid)
    quad: _Quadrature = field(repr=False)
    stiffness_full: sp.csr_matrix = field(repr=False)   # scalar grad-grad
    div_x_full: sp.csr_matrix = field(repr=False)       # negative divergence
    div_y_full: sp.csr_matrix = field(repr=False)
    pressure_mass: sp.csr_matrix = field(repr=False)
    K: sp.csr_matrix = field(repr=False)                # reduced viscous block
    E: sp.csr_matrix = field(repr=False)                # reduced divergence
    Mp: sp.csr_matrix = field(repr=False)
    _conv_scatter: tuple = field(repr=False, default=None)

    @property
    def n_unknowns(self) -> int:
        return self.mesh.n_unknowns

    def boundary_velocity(self):
        """(u_x, u_y) Dirichlet data on the full node grid."""
        return self.lid_values, np.zeros(self.mesh.n_nodes)


def build_problem(level: int, re: float, bc_kind: str = "standard") -> CavityProblem:
    """Assemble the constant operators for a cavity at the given Reynolds
    number; nu = 2/Re for the unit lid speed on the width-2 box."""
    if re <= 0:
        raise ValueError("Reynolds number must be positive")
    if bc_kind not in ("standard", "regularized"):
        raise ValueError("bc_kind must be 'standard' or 'regularized'")
    mesh = build_mesh(level)
    quad = _Quadrature(mesh)
    nv = mesh.n_nodes
    npd = mesh.n_pressure

    lid = np.zeros(nv)
    on_lid = mesh.boundary_kind == LID
    if bc_kind == "standard":
        lid[on_lid] = 1.0
    else:
        lid[on_lid] = 1.0 - mesh.nodes[on_lid, 0] ** 4

    k_rows, k_cols, k_vals = [], [], []
    e_rows, e_cols, ex_vals, ey_vals = [], [], [], []
    m_rows, m_cols, m_vals = [], [], []
    phi, psi = quad.phi, quad.psi
    for cls in quad.classes:
        tri, p1, gx, gy, wdet = cls["tri"], cls["p1"], cls["gx"], cls["gy"], cls["wdet"]
        ne = tri.shape[0]
        k_loc = np.einsum("q,qa,qb->ab", wdet, gx, gx) + np.einsum("q,qa,qb->ab", wdet, gy, gy)
        ex_loc = -np.einsum("q,qp,qb->pb", wdet, psi, gx)
        ey_loc = -np.einsum("q,qp,qb->pb", wdet, psi, gy)
        mp_loc = np.einsum("q,qp,qr->pr", wdet, psi, psi)
        k_rows.append(np.repeat(tri, 6, axis=1).ravel())
        k_cols.append(np.tile(tri, (1, 6)).ravel())
        k_vals.append(np.tile(k_loc.ravel(), ne))
        e_rows.append(np.repeat(p1, 6, axis=1).ravel())
        e_cols.append(np.tile(tri, (1, 3)).ravel())
        ex_vals.append(np.tile(ex_loc.ravel(), ne))
        ey_vals.append(np.tile(ey_loc.ravel(), ne))
        m_rows.append(np.repeat(p1, 3, axis=1).ravel())
        m_cols.append(np.tile(p1, (1, 3)).ravel())
        m_vals.append(np.tile(mp_loc.ravel(), ne))

    stiff = _scatter(nv, nv, np.concatenate(k_rows), np.concatenate(k_cols),
                     np.concatenate(k_vals))
    div_x = _scatter(npd, nv, np.concatenate(e_rows), np.concatenate(e_cols),
                     np.concatenate(ex_vals))
    div_y = _scatter(npd, nv, np.concatenate(e_rows), np.concatenate(e_cols),
                     np.concatenate(ey_vals))
    mp = _scatter(npd, npd, np.concatenate(m_rows), np.concatenate(m_cols),
                  np.concatenate(m_vals))

    nu = 2.0 / re
    intr = mesh.interior
    k_red = sp.csr_matrix(nu * stiff[intr, :][:, intr])
    ex_red = sp.csr_matrix(div_x[:, intr])
    ey_red = sp.csr_matrix(div_y[:, intr])
    e_red = sp.hstack([ex_red, ey_red], format="csr")
    k_block = sp.block_diag([k_red, k_red], format="csr")

    return CavityProblem(
        mesh=mesh,
        re=re,
        nu=nu,
        bc_kind=bc_kind,
        lid_values=lid,
        quad=quad,
        stiffness_full=stiff,
        div_x_full=div_x,
        div_y_full=div_y,
        pressure_mass=mp,
        K=k_block,
        E=e_red,
        Mp=mp,
    )


def split_state(prob: CavityProblem, x: np.ndarray):
    nvi = prob.mesh.n_velocity
    return x[:nvi], x[nvi:2 * nvi], x[2 * nvi:]


def expand_state(prob: CavityProblem, x: np.ndarray):
    """Full-grid velocity fields (Dirichlet data injected) and pressure."""
    ux_i, uy_i, p = split_state(prob, x)
    ubx, uby = prob.boundary_velocity()
    ux = ubx.copy()
    uy = uby.copy()
    ux[prob.mesh.interior] = ux_i
    uy[prob.mesh.interior] = uy_i
    return ux, uy, p


def _convection_full(prob: CavityProblem, ux_full, uy_full) -> sp.csr_matrix:
    """Scalar advection operator int phi_a (u . grad phi_b) on the full
    node grid (identical for both velocity components)."""
    phi = prob.quad.phi
    rows, cols, vals = [], [], []
    for cls in prob.quad.classes:
        tri, gx, gy, wdet = cls["tri"], cls["gx"], cls["gy"], cls["wdet"]
        uxq = ux_full[tri] @ phi.T
        uyq = uy_full[tri] @ phi.T
        ce = np.einsum("eq,qa,qb->eab", uxq * wdet, phi, gx)
        ce += np.einsum("eq,qa,qb->eab", uyq * wdet, phi, gy)
        rows.append(np.repeat(tri, 6, axis=1).ravel())
        cols.append(np.tile(tri, (1, 6)).ravel())
        vals.append(ce.ravel())
    return _scatter(prob.mesh.n_nodes, prob.mesh.n_nodes,
                    np.concatenate(rows), np.concatenate(cols),
                    np.concatenate(vals))


def _cross_blocks_full(prob: CavityProblem, ux_full, uy_full):
    """The four int phi_a phi_b (d u_i / d x_j) blocks of the Newton cross
    term, on the full node grid, as ((xx, xy), (yx, yy))."""
    phi = prob.quad.phi
    parts = {key: [] for key in ("xx", "xy", "yx", "yy")}
    rows, cols = [], []
    for cls in prob.quad.classes:
        tri, gx, gy, wdet = cls["tri"], cls["gx"], cls["gy"], cls["wdet"]
        fields = {
            "xx": ux_full[tri] @ gx.T,
            "xy": ux_full[tri] @ gy.T,
            "yx": uy_full[tri] @ gx.T,
            "yy": uy_full[tri] @ gy.T,
        }
        for key, fq in fields.items():
            parts[key].append(np.einsum("eq,qa,qb->eab", fq * wdet, phi, phi).ravel())
        rows.append(np.repeat(tri, 6, axis=1).ravel())
        cols.append(np.tile(tri, (1, 6)).ravel())
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    nv = prob.mesh.n_nodes
    return {k: _scatter(nv, nv, r, c, np.concatenate(v)) for k, v in parts.items()}


def assemble_convection(prob: CavityProblem, x: np.ndarray):
    """Reduced linearized convection C and Newton cross term W at the given
    state (both over the 2*nvi velocity unknowns)."""
    ux, uy, _ = expand_state(prob, x)
    intr = prob.mesh.interior
    c_full = _convection_full(prob, ux, uy)
    c_red = sp.csr_matrix(c_full[intr, :][:, intr])
    ck = sp.block_diag([c_red, c_red], format="csr")
    w = _cross_blocks_full(prob, ux, uy)
    wr = {k: sp.csr_matrix(m[intr, :][:, intr]) for k, m in w.items()}
    wk = sp.bmat([[wr["xx"], wr["xy"]], [wr["yx"], wr["yy"]]], format="csr")
    return ck, wk


def residual(prob: CavityProblem, x: np.ndarray) -> np.ndarray:
    """F(x) = [momentum; continuity] with boundary data folded in and zero
    body force."""
    ux, uy, p = expand_state(prob, x)
    conv = _convection_full(prob, ux, uy)
    mom_x = prob.nu * (prob.stiffness_full @ ux) + conv @ ux + prob.div_x_full.T @ p
    mom_y = prob.nu * (prob.stiffness_full @ uy) + conv @ uy + prob.div_y_full.T @ p
    intr = prob.mesh.interior
    cont = prob.div_x_full @ ux + prob.div_y_full @ uy
    return np.concatenate([mom_x[intr], mom_y[intr], cont])


def _velocity_block(prob: CavityProblem, x: np.ndarray, with_cross: bool):
    ux, uy, _ = expand_state(prob, x)
    intr = prob.mesh.interior
    conv = _convection_full(prob, ux, uy)
    a_red = sp.csr_matrix((prob.nu * prob.stiffness_full + conv)[intr, :][:, intr])
    if not with_cross:
        return [[a_red, None], [None, a_red]]
    w = _cross_blocks_full(prob, ux, uy)
    wr = {k: sp.csr_matrix(m[intr, :][:, intr]) for k, m in w.items()}
    return [[a_red + wr["xx"], wr["xy"]], [wr["yx"], a_red + wr["yy"]]]


def _saddle(prob: CavityProblem, vel_blocks) -> sp.csr_matrix:
    nvi = prob.mesh.n_velocity
    ex = prob.E[:, :nvi]
    ey = prob.E[:, nvi:]
    out = sp.bmat(
        [
            [vel_blocks[0][0], vel_blocks[0][1], ex.T],
            [vel_blocks[1][0], vel_blocks[1][1], ey.T],
            [ex, ey, None],
        ],
        format="csr",
    )
    out.sort_indices()
    return out


def oseen_operator(prob: CavityProblem, x: np.ndarray) -> sp.csr_matrix:
    """Picard iteration matrix (no Newton cross term); also used as the
    factorization sparsifier in the Newton phase."""
    return _saddle(prob, _velocity_block(prob, x, with_cross=False))


def newton_operator(prob: CavityProblem, x: np.ndarray) -> sp.csr_matrix:
    """Full Jacobian of the residual."""
    return _saddle(prob, _velocity_block(prob, x, with_cross=True))


def null_vector(prob: CavityProblem) -> np.ndarray:
    """Unit vector spanning the constant-pressure null space."""
    nvi = prob.mesh.n_velocity
    npd = prob.mesh.n_pressure
    q = np.zeros(2 * nvi + npd)
    q[2 * nvi:] = 1.0 / math.sqrt(npd)
    return q


def stokes_rhs(prob: CavityProblem) -> np.ndarray:
    """Right-hand side of the Stokes system: boundary lift of the lid."""
    ubx, uby = prob.boundary_velocity()
    intr = prob.mesh.interior
    mom_x = -(prob.nu * (prob.stiffness_full @ ubx))[intr]
    mom_y = -(prob.nu * (prob.stiffness_full @ uby))[intr]
    cont = -(prob.div_x_full @ ubx + prob.div_y_full @ uby)
    return np.concatenate([mom_x, mom_y, cont])


def stokes_operator(prob: CavityProblem) -> sp.csr_matrix:
    nvi = prob.mesh.n_velocity
    return _saddle(prob, [[prob.K[:nvi, :][:, :nvi], None],
                          [None, prob.K[nvi:, :][:, nvi:]]])


def stokes_initial_guess(prob: CavityProblem, rtol: float = 1e-10) -> np.ndarray:
    """Solve the Stokes system with an accurate factorization and flexible
    GMRES; the pressure is shifted to zero mean."""
    a = stokes_operator(prob)
    b = stokes_rhs(prob)
    params = FactorParams(alpha=2.0, droptol=1e-3)
    factor = factorize(a, params)
    precond = PrecondOperator(factor, j_op=a, null_basis=null_vector(prob),
                              refine_steps=2)
    x, rep = fgmres(a, precond, b, GmresParams(restart=30, max_iters=300, rtol=rtol))
    if not rep.converged:
        raise RuntimeError(
            f"Stokes solve stalled at relative residual {rep.final_relres:.3e}"
        )
    nvi = prob.mesh.n_velocity
    x[2 * nvi:] -= x[2 * nvi:].mean()
    return x


def pressure_to_nodes(prob: CavityProblem, p: np.ndarray) -> np.ndarray:
    """Linear interpolation of the pressure onto the fine node grid."""
    mesh = prob.mesh
    m = int(round(math.sqrt(mesh.n_nodes))) - 1
    ncell = m // 2
    out = np.empty(mesh.n_nodes)
    ix = np.arange(mesh.n_nodes) % (m + 1)
    iy = np.arange(mesh.n_nodes) // (m + 1)

    def pid(jx, jy):
        return (jy // 2) * (ncell + 1) + jx // 2

    even = (ix % 2 == 0) & (iy % 2 == 0)
    out[even] = p[pid(ix[even], iy[even])]
    hmid = (ix % 2 == 1) & (iy % 2 == 0)
    out[hmid] = 0.5 * (p[pid(ix[hmid] - 1, iy[hmid])] + p[pid(ix[hmid] + 1, iy[hmid])])
    vmid = (ix % 2 == 0) & (iy % 2 == 1)
    out[vmid] = 0.5 * (p[pid(ix[vmid], iy[vmid] - 1)] + p[pid(ix[vmid], iy[vmid] + 1)])
    dmid = (ix % 2 == 1) & (iy % 2 == 1)
    out[dmid] = 0.5 * (p[pid(ix[dmid] - 1, iy[dmid] - 1)] + p[pid(ix[dmid] + 1, iy[dmid] + 1)])
    return out


def centerline_profile(prob: CavityProblem, x: np.ndarray):
    """(y, u_x) along the vertical centerline x = 0."""
    ux, _, _ = expand_state(prob, x)
    mesh = prob.mesh
    m = int(round(math.sqrt(mesh.n_nodes))) - 1
    jx = m // 2
    ids = jx + (m + 1) * np.arange(m + 1)
    return mesh.nodes[ids, 1], ux[ids]


def write_solution_csv(prob: CavityProblem, x: np.ndarray, path) -> None:
    ux, uy, p = expand_state(prob, x)
    pn = pressure_to_nodes(prob, p)
    with open(path, "w", encoding="ascii") as f:
        f.write("x,y,u,v,p\n")
        for (px, py), u, v, q in zip(prob.mesh.nodes, ux, uy, pn):
            f.write(f"{px:.17g},{py:.17g},{u:.17g},{v:.17g},{q:.17g}\n")

"""Structured periodic-channel finite element layer.

Geometry is a rectangular channel, periodic in x (and z in 3D), with solid
slip walls at y = 0 and y = Ly.  All fields use biquadratic (Q2) tensor
Lagrange elements on a uniform grid; the wall-normal velocity degrees of
freedom are removed strongly.  Element Jacobians are constant, quadrature
is tensor Gauss, and every domain or wall integral in the package goes
through this module.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "ChannelMesh",
    "QuadratureRule",
    "ElementBasis",
    "DiscreteSolution",
    "build_mesh",
    "gauss_rule",
    "integrate",
    "lp_norm",
    "norms",
]


def _shape1d(t):
    """Quadratic Lagrange values/derivatives at reference points t in [0,1]."""
    t = np.asarray(t, dtype=float)
    N = np.stack([2 * t * t - 3 * t + 1, 4 * t - 4 * t * t, 2 * t * t - t])
    dN = np.stack([4 * t - 3, 4 - 8 * t, 4 * t - 1])
    d2N = np.stack([np.full_like(t, 4.0), np.full_like(t, -8.0), np.full_like(t, 4.0)])
    return N, dN, d2N


@lru_cache(maxsize=32)
def _gauss1d(npts):
    x, w = np.polynomial.legendre.leggauss(npts)
    return (x + 1.0) / 2.0, w / 2.0


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss rule on the reference cell [0,1]**dim."""

    degree: int
    dim: int
    points: np.ndarray = field(repr=False, default=None)
    weights: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.points is None:
            npts = (self.degree + 2) // 2
            t, w = _gauss1d(npts)
            grids = np.meshgrid(*([t] * self.dim), indexing="ij")
            pts = np.stack([g.reshape(-1) for g in grids], axis=-1)
            wgrids = np.meshgrid(*([w] * self.dim), indexing="ij")
            wts = np.prod(np.stack([g.reshape(-1) for g in wgrids]), axis=0)
            object.__setattr__(self, "points", pts)
            object.__setattr__(self, "weights", wts)


def gauss_rule(degree=5, dim=2):
    return QuadratureRule(degree=degree, dim=dim)


@dataclass(frozen=True)
class ChannelMesh:
    """Uniform Q2 mesh of a periodic channel with slip walls at y=0, Ly.

    Periodic directions: x (axis 0) and, in 3D, z (axis 2).  Nodes on the
    periodic seam are identified, so fields are periodic by construction.
    """

    dim: int
    extents: tuple
    counts: tuple
    node_counts: tuple = field(default=None)
    node_coords: np.ndarray = field(repr=False, default=None)
    conn: np.ndarray = field(repr=False, default=None)
    wall_faces: tuple = field(repr=False, default=None)
    wall_nodes: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        d = self.dim
        if d not in (2, 3):
            raise ConfigError("spatial dimension must be 2 or 3")
        if len(self.extents) != d or len(self.counts) != d:
            raise ConfigError("extents/counts must match the dimension")
        if any(L <= 0 for L in self.extents):
            raise ConfigError("domain extents must be positive")
        if any(int(c) <= 0 or int(c) != c for c in self.counts):
            raise ConfigError("element counts must be positive integers")
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        periodic = [True, False] + ([True] if d == 3 else [])
        ncounts = tuple(2 * c if per else 2 * c + 1
                        for c, per in zip(counts, periodic))
        object.__setattr__(self, "node_counts", ncounts)

        axes = [np.arange(m) * (L / (2 * c))
                for m, L, c in zip(ncounts, self.extents, counts)]
        grids = np.meshgrid(*axes, indexing="ij")
        # node id = ix + Wx*(iy + Wy*iz): x fastest
        coords = np.stack([g.transpose(*reversed(range(d))).reshape(-1)
                           for g in grids], axis=-1)
        object.__setattr__(self, "node_coords", coords)

        object.__setattr__(self, "conn", self._build_conn(counts, ncounts, periodic))
        object.__setattr__(self, "wall_faces", self._build_wall_faces(counts, ncounts, periodic))
        gy = (np.arange(np.prod(ncounts)) // ncounts[0]) % ncounts[1]
        object.__setattr__(self, "wall_nodes",
                           np.flatnonzero((gy == 0) | (gy == ncounts[1] - 1)))

    def _build_conn(self, counts, ncounts, periodic):
        d = self.dim
        # element multi-indices with x fastest (id = ex + nx*(ey + ny*ez))
        eidx = np.stack([g.reshape(-1) for g in
                         np.meshgrid(*[np.arange(c) for c in counts], indexing="ij")],
                        axis=-1)
        key = sum(eidx[:, k] * int(np.prod(counts[:k])) for k in range(d))
        eidx = eidx[np.argsort(key)]
        # local node multi-indices with x fastest (l = a + 3b + 9c)
        loc_list = np.stack([m.reshape(-1) for m in
                             np.meshgrid(*([np.arange(3)] * d), indexing="ij")],
                            axis=-1)
        lkey = sum(loc_list[:, k] * 3 ** k for k in range(d))
        loc_list = loc_list[np.argsort(lkey)]
        gidx = 2 * eidx[:, None, :] + loc_list[None, :, :]  # (n_elem, nloc, d)
        for k, per in enumerate(periodic):
            if per:
                gidx[..., k] %= ncounts[k]
        nid = gidx[..., 0]
        stride = 1
        for k in range(1, d):
            stride *= ncounts[k - 1]
            nid = nid + gidx[..., k] * stride
        return np.ascontiguousarray(nid)

    def _build_wall_faces(self, counts, ncounts, periodic):
        d = self.dim
        faces = []
        n_elem = int(np.prod(counts))
        conn = None
        for wall, b in ((0, 0), (1, 2)):
            ey = 0 if wall == 0 else counts[1] - 1
            if d == 2:
                elems = np.array([ex + counts[0] * ey for ex in range(counts[0])])
                loc = np.array([a + 3 * b for a in range(3)])
            else:
                elems = np.array([ex + counts[0] * (ey + counts[1] * ez)
                                  for ez in range(counts[2])
                                  for ex in range(counts[0])])
                loc = np.array([a + 3 * b + 9 * c
                                for c in range(3) for a in range(3)])
            faces.append((elems, loc))
        return tuple(faces)

    @property
    def n_nodes(self):
        return int(np.prod(self.node_counts))

    @property
    def n_elems(self):
        return int(np.prod(self.counts))

    @property
    def h(self):
        return tuple(L / c for L, c in zip(self.extents, self.counts))

    @property
    def volume(self):
        return float(np.prod(self.extents))

    @property
    def wall_area(self):
        if self.dim == 2:
            return 2.0 * self.extents[0]
        return 2.0 * self.extents[0] * self.extents[2]

    def locate(self, x):
        """Element index and reference coordinates containing physical x."""
        x = np.asarray(x, dtype=float)
        h = np.asarray(self.h)
        counts = np.asarray(self.counts)
        xi = np.array(x, dtype=float)
        for k in (0, 2) if self.dim == 3 else (0,):
            xi[..., k] = np.mod(xi[..., k], self.extents[k])
        e = np.minimum(np.floor(xi / h).astype(int), counts - 1)
        e = np.maximum(e, 0)
        t = xi / h - e
        eid = e[..., 0]
        stride = 1
        for k in range(1, self.dim):
            stride *= self.counts[k - 1]
            eid = eid + e[..., k] * stride
        return eid, t


def build_mesh(Lx, Ly, nx, ny, Lz=None, nz=None):
    """Construct a channel mesh; 3D when Lz/nz are given."""
    if Lz is None:
        return ChannelMesh(dim=2, extents=(float(Lx), float(Ly)),
                           counts=(int(nx), int(ny)))
    return ChannelMesh(dim=3, extents=(float(Lx), float(Ly), float(Lz)),
                       counts=(int(nx), int(ny), int(nz)))


class ElementBasis:
    """Shape functions, quadrature geometry, and gather/scatter helpers
    for one (mesh, rule) pair.  Immutable after construction."""

    def __init__(self, mesh: ChannelMesh, rule: QuadratureRule = None,
                 boundary_rule: QuadratureRule = None):
        d = mesh.dim
        self.mesh = mesh
        self.rule = rule or gauss_rule(5, d)
        if self.rule.dim != d:
            raise ConfigError("quadrature rule dimension mismatch")
        self.brule = boundary_rule or gauss_rule(self.rule.degree, d - 1)
        h = mesh.h

        pts = self.rule.points
        per_axis = [_shape1d(pts[:, k]) for k in range(d)]
        nloc = 3 ** d
        nqp = pts.shape[0]
        N = np.ones((nloc, nqp))
        dN = np.zeros((nloc, nqp, d))
        d2N = np.zeros((nloc, nqp, d, d))
        for l in range(nloc):
            a = [(l // 3 ** k) % 3 for k in range(d)]
            vals = [per_axis[k][0][a[k]] for k in range(d)]
            dvals = [per_axis[k][1][a[k]] / h[k] for k in range(d)]
            d2vals = [per_axis[k][2][a[k]] / h[k] ** 2 for k in range(d)]
            N[l] = np.prod(vals, axis=0)
            for i in range(d):
                fac = dvals[i].copy()
                for k in range(d):
                    if k != i:
                        fac = fac * vals[k]
                dN[l, :, i] = fac
            for i in range(d):
                for j in range(d):
                    if i == j:
                        fac = d2vals[i].copy()
                        for k in range(d):
                            if k != i:
                                fac = fac * vals[k]
                    else:
                        fac = dvals[i] * (per_axis[j][1][a[j]] / h[j])
                        for k in range(d):
                            if k != i and k != j:
                                fac = fac * vals[k]
                    d2N[l, :, i, j] = fac
        self.N, self.dN, self.d2N = N, dN, d2N
        self.w = self.rule.weights * np.prod(h)

        # physical quadrature coordinates, (n_elem, nqp, d)
        origins = mesh.node_coords[mesh.conn[:, 0]]
        self.qp_x = origins[:, None, :] + pts[None, :, :] * np.asarray(h)

        # wall faces: shape functions of the face-restricted nodes
        bpts = self.brule.points
        if d == 2:
            fvals = _shape1d(bpts[:, 0])[0]
            self.Nf = fvals  # (3, nqf)
            self.wf = self.brule.weights * h[0]
        else:
            fx = _shape1d(bpts[:, 0])[0]
            fz = _shape1d(bpts[:, 1])[0]
            nf = 9
            nqf = bpts.shape[0]
            Nf = np.zeros((nf, nqf))
            for c in range(3):
                for a in range(3):
                    Nf[a + 3 * c] = fx[a] * fz[c]
            self.Nf = Nf
            self.wf = self.brule.weights * h[0] * h[2]
        self.face_x = []
        self.face_conn = []
        for wall, (elems, loc) in enumerate(mesh.wall_faces):
            fconn = mesh.conn[np.ix_(elems, loc)]
            self.face_conn.append(fconn)
            x0 = mesh.node_coords[fconn[:, 0]]
            if d == 2:
                fx = x0[:, None, :].repeat(bpts.shape[0], axis=1).astype(float)
                fx[..., 0] += bpts[None, :, 0] * h[0]
            else:
                fx = x0[:, None, :].repeat(bpts.shape[0], axis=1).astype(float)
                fx[..., 0] += bpts[None, :, 0] * h[0]
                fx[..., 2] += bpts[None, :, 1] * h[2]
            self.face_x.append(fx)
        # outward wall normals
        n0 = np.zeros(d); n0[1] = -1.0
        n1 = np.zeros(d); n1[1] = 1.0
        self.normals = (n0, n1)

    # -- evaluation ---------------------------------------------------------
    def gather(self, nodal):
        """Element-local nodal values, (n_elem, nloc)."""
        return nodal[self.mesh.conn]

    def values(self, local):
        """Field values at quadrature points from local values (..., nloc)."""
        return np.einsum("lq,...l->...q", self.N, local)

    def gradients(self, local):
        return np.einsum("lqd,...l->...qd", self.dN, local)

    def hessians(self, local):
        return np.einsum("lqij,...l->...qij", self.d2N, local)

    def face_values(self, nodal, wall):
        return np.einsum("lq,fl->fq", self.Nf, nodal[self.face_conn[wall]])

    def face_local_values(self, local, wall):
        return np.einsum("lq,...l->...q", self.Nf, local)

    def integrate_qp(self, vals):
        """Sum w_q * vals over elements and quadrature points."""
        return float(np.einsum("eq,q->", vals, self.w))

    def integrate_face_qp(self, vals, wall):
        return float(np.einsum("fq,q->", vals, self.wf))

    def scatter_add(self, out, local):
        """Accumulate local test contributions (n_elem, nloc) into nodal array."""
        np.add.at(out, self.mesh.conn, local)

    def scatter_add_face(self, out, local, wall):
        np.add.at(out, self.face_conn[wall], local)


def integrate(fn, mesh, rule=None, boundary=False):
    """Quadrature of a coordinate function over the domain or both walls.

    ``fn`` receives coordinates of shape (..., d) and must broadcast.
    """
    eb = ElementBasis(mesh, rule or gauss_rule(5, mesh.dim))
    if not boundary:
        vals = np.asarray(fn(eb.qp_x), dtype=float)
        return eb.integrate_qp(vals)
    total = 0.0
    for wall in (0, 1):
        vals = np.asarray(fn(eb.face_x[wall]), dtype=float)
        total += eb.integrate_face_qp(vals, wall)
    return total


class DiscreteSolution:
    """Nodal coefficients of (rho, u, theta, Y) with slip constraints.

    Field layout (row index into ``data``): rho; u components; theta;
    Y components.  Wall-normal velocity is forced to zero at wall nodes
    and excluded from the unknown vector.
    """

    def __init__(self, mesh: ChannelMesh, n_species: int, data=None):
        self.mesh = mesh
        self.n = int(n_species)
        d = mesh.dim
        self.n_fields = 2 + d + self.n
        if data is None:
            data = np.zeros((self.n_fields, mesh.n_nodes))
        data = np.asarray(data, dtype=float)
        if data.shape != (self.n_fields, mesh.n_nodes):
            raise ConfigError("solution data shape mismatch")
        self.data = data
        self.i_rho = 0
        self.i_u = list(range(1, 1 + d))
        self.i_theta = 1 + d
        self.i_Y = list(range(2 + d, 2 + d + self.n))
        self.normal_comp = self.i_u[1]  # wall normal is +-e_y
        mask = np.ones((self.n_fields, mesh.n_nodes), dtype=bool)
        mask[self.normal_comp, mesh.wall_nodes] = False
        self.free_mask = mask
        self.n_dof = int(mask.sum())
        self.apply_constraints()

    # -- constructors -------------------------------------------------------
    @classmethod
    def uniform(cls, mesh, n_species, rho, theta, Y=None, u=None):
        sol = cls(mesh, n_species)
        sol.data[sol.i_rho] = rho
        sol.data[sol.i_theta] = theta
        Y = np.full(n_species, 1.0 / n_species) if Y is None else np.asarray(Y)
        for k in range(n_species):
            sol.data[sol.i_Y[k]] = Y[k]
        if u is not None:
            for c, comp in enumerate(sol.i_u):
                sol.data[comp] = u[c]
        sol.apply_constraints()
        return sol

    @classmethod
    def from_functions(cls, mesh, n_species, fns):
        """Interpolate callables (of node coordinates) into the Q2 space.

        ``fns``: dict with keys 'rho', 'u', 'theta', 'Y'; vector-valued
        entries return shape (..., d) / (..., n).
        """
        sol = cls(mesh, n_species)
        x = mesh.node_coords
        sol.data[sol.i_rho] = fns["rho"](x)
        u = np.asarray(fns["u"](x))
        for c, comp in enumerate(sol.i_u):
            sol.data[comp] = u[..., c]
        sol.data[sol.i_theta] = fns["theta"](x)
        Y = np.asarray(fns["Y"](x))
        for k in range(n_species):
            sol.data[sol.i_Y[k]] = Y[..., k]
        sol.apply_constraints()
        return sol

    def copy(self):
        return DiscreteSolution(self.mesh, self.n, self.data.copy())

    # -- constraints and vector mapping --------------------------------------
    def apply_constraints(self):
        self.data[self.normal_comp, self.mesh.wall_nodes] = 0.0

    def as_vector(self):
        return self.data[self.free_mask].copy()

    def from_vector(self, vec):
        out = self.copy()
        out.data[out.free_mask] = vec
        out.apply_constraints()
        return out

    # -- views ---------------------------------------------------------------
    @property
    def rho(self):
        return self.data[self.i_rho]

    @property
    def theta(self):
        return self.data[self.i_theta]

    @property
    def u(self):
        return self.data[self.i_u]

    @property
    def Y(self):
        return self.data[self.i_Y]

    def positivity_ok(self):
        return bool(self.theta.min() > 0 and self.Y.min() > 0)

    # -- evaluation ----------------------------------------------------------
    def eval_at(self, x):
        """Point evaluation of all fields at physical coordinates x (..., d)."""
        mesh = self.mesh
        x = np.atleast_2d(np.asarray(x, dtype=float))
        eid, t = mesh.locate(x)
        d = mesh.dim
        per_axis = [_shape1d(t[..., k]) for k in range(d)]
        nloc = 3 ** d
        vals = np.zeros((self.n_fields,) + x.shape[:-1])
        conn = mesh.conn[eid]
        for l in range(nloc):
            a = [(l // 3 ** k) % 3 for k in range(d)]
            shape = np.ones(x.shape[:-1])
            for k in range(d):
                shape = shape * per_axis[k][0][a[k]]
            vals += self.data[:, conn[..., l]] * shape
        return vals

    def interpolate_to(self, mesh_new):
        """Q2 point interpolation onto a (finer) mesh of the same channel."""
        vals = self.eval_at(mesh_new.node_coords)
        return DiscreteSolution(mesh_new, self.n, vals)


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

def lp_norm(vals, w, p):
    """L^p norm of quadrature values (n_elem, nqp[, m]) with weights w."""
    vals = np.asarray(vals)
    if vals.ndim == 3:
        mag = np.sqrt((vals ** 2).sum(axis=-1))
    else:
        mag = np.abs(vals)
    if p == np.inf:
        return float(mag.max())
    return float(np.einsum("eq,q->", mag ** p, w) ** (1.0 / p))


def _grad_norm(grads, w, p=2):
    mag = np.sqrt((np.asarray(grads) ** 2).reshape(grads.shape[0], grads.shape[1], -1).sum(axis=-1))
    return float(np.einsum("eq,q->", mag ** p, w) ** (1.0 / p))


def norms(sol: DiscreteSolution, p_list=(1, 2, 6), rule=None):
    """Standard L^p norms, Sobolev norms and seminorms of all fields.

    Raises DomainError when a requested power is undefined (not applicable
    for the plain field norms here; see the monitor routines for weighted
    quantities).
    """
    eb = ElementBasis(sol.mesh, rule or gauss_rule(5, sol.mesh.dim))
    out = {}
    d = sol.mesh.dim

    def qp_vals(idx):
        return eb.values(eb.gather(sol.data[idx]))

    def qp_grads(idx):
        return eb.gradients(eb.gather(sol.data[idx]))

    scalars = {"rho": sol.i_rho, "theta": sol.i_theta}
    for k in range(sol.n):
        scalars[f"Y{k + 1}"] = sol.i_Y[k]
    for name, idx in scalars.items():
        v = qp_vals(idx)
        g = qp_grads(idx)
        for p in p_list:
            out[f"{name}_L{p}"] = lp_norm(v, eb.w, p)
        out[f"{name}_Linf"] = float(np.abs(sol.data[idx]).max())
        gn = _grad_norm(g, eb.w)
        out[f"{name}_H1semi"] = gn
        out[f"{name}_H1"] = float(np.hypot(out[f"{name}_L2"], gn))

    uv = np.stack([qp_vals(c) for c in sol.i_u], axis=-1)
    ug = np.stack([qp_grads(c) for c in sol.i_u], axis=-2)
    for p in p_list:
        out[f"u_L{p}"] = lp_norm(uv, eb.w, p)
    gn = float(np.einsum("eqij,eqij,q->", ug, ug, eb.w) ** 0.5)
    out["u_H1semi"] = gn
    out["u_H1"] = float(np.hypot(out["u_L2"], gn))
    return out

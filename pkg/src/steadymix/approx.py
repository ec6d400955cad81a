"""Residual and Jacobian assembly for the regularized approximate system.

The unknowns are the nodal values of (rho, u, theta, Y) on Q2 elements.
The continuity, species and internal-energy equations are discretized as
Galerkin-weighted residuals with their natural boundary conditions imposed
weakly; the momentum equation is the Galerkin form with slip constraints
and weak wall friction.  All regularized constitutive quantities (scaled
stress, augmented conductivity, shifted entropies, regularized species
fluxes) live here.

Jacobians are exact: the element-local residual kernels are evaluated on
complex-perturbed nodal values (complex-step differentiation), one local
degree of freedom at a time, vectorized over all elements.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DomainError
from .mesh import DiscreteSolution, ElementBasis
from . import mixture

__all__ = [
    "RegularizationSchedule",
    "SourceTerms",
    "ResidualVector",
    "Assembler",
    "regularized_stress",
    "regularized_conductivity",
    "regularized_entropy",
    "regularized_flux",
    "assemble_residual",
    "assemble_jacobian",
    "total_energy_residual",
]

_CSTEP = 1e-60


@dataclass(frozen=True)
class RegularizationSchedule:
    """One point of the regularization-parameter continuation.

    ``N`` is the resolution proxy (elements across the channel at this
    stage); the four small parameters must satisfy the strict ordering
    delta > eps > lam > eta > 0.  ``beta`` is the artificial-pressure
    exponent, ``B_exp`` the temperature-weight exponent and ``r_exp`` the
    diffusion-matrix regularization exponent.  ``rho_bar`` is the mean
    density M/|Omega| and is split evenly over the species.
    """

    N: int
    eta: float
    lam: float
    eps: float
    delta: float
    beta: float = 4.0
    B_exp: float = 6.0
    r_exp: float = 1.0
    rho_bar: float = 1.0
    n_species: int = 2

    def __post_init__(self):
        if not (self.delta > self.eps > self.lam > self.eta > 0):
            raise ConfigError(
                "regularization parameters must satisfy delta > eps > lam > eta > 0")
        if self.beta < 4:
            raise ConfigError("artificial pressure exponent must be >= 4")
        if self.r_exp < 0:
            raise ConfigError("matrix regularization exponent must be >= 0")
        if self.rho_bar <= 0 or self.N <= 0:
            raise ConfigError("rho_bar and N must be positive")

    @property
    def rho_bar_k(self):
        return self.rho_bar / self.n_species

    def check_B(self, m_exp):
        if self.B_exp < 2 * m_exp + 2:
            raise ConfigError("temperature-weight exponent must be >= 2*m + 2")


@dataclass
class SourceTerms:
    """Optional manufactured source terms appended to each equation.

    Volume callables take coordinates (..., d); wall callables take wall
    coordinates and the wall index (0: y=0, 1: y=Ly).  Vector-valued
    sources return a trailing axis of size d (momentum) or n (species).
    """

    mass: object = None
    momentum: object = None
    species: object = None
    energy: object = None
    wall_momentum: object = None
    wall_energy: object = None
    wall_mass: object = None
    wall_species: object = None


def regularized_stress(theta, grad_u, eta, p):
    """Viscous stress damped by 1/(1 + eta*theta).

    The built-in coefficient laws are smooth, so their mollification is the
    identity; only the damping factor differs from the plain stress.
    """
    return mixture._stress(theta, np.asarray(grad_u), p,
                           scale=1.0 / (1.0 + eta * np.asarray(theta)))


def regularized_conductivity(theta, delta, eta, B, p):
    """Heat conductivity augmented by delta*(theta**B + 1/theta)."""
    theta = np.asarray(theta)
    return p.kappa(theta) + delta * theta ** B + delta / theta


def _regularized_entropy(rho, theta, Y, lam, p):
    if np.any(np.real(Y) <= 0):
        raise DomainError("regularized entropy needs Y_k > 0")
    shift = np.log(rho + np.sqrt(lam))
    s_k = (p.cv * np.log(theta)[..., None] - np.log(Y) - shift[..., None])
    g_k = p.cp * theta[..., None] - theta[..., None] * s_k
    s = (Y * s_k).sum(axis=-1)
    return s_k, g_k, s


def regularized_entropy(s: mixture.StateSample, lam, p):
    """Shifted species entropies s_k, Gibbs functions g_k and mixture s.

    Defined for rho = 0 as long as lam > 0; reduces to the plain entropy
    (with unit molar masses) at lam = 0 and rho > 0.
    """
    if lam == 0 and s.rho <= 0:
        raise DomainError("unshifted entropy needs rho > 0")
    return _regularized_entropy(np.float64(s.rho), np.float64(s.theta),
                                s.Y, lam, p)


def _dhat(theta, Y, sched, closure):
    """Regularized diffusion matrix (or Fick scalar) without per-call checks."""
    sigma = Y.sum(axis=-1)
    scale = (sigma + sched.eps) ** sched.r_exp
    if closure.kind == "fick":
        return closure.coefficient(theta) / scale
    if closure.matrix_fn is not None:
        D = np.asarray(closure.matrix_fn(theta, Y))
    else:
        d = closure.coefficient(theta)
        n = Y.shape[-1]
        idx = np.arange(n)
        D = np.zeros(Y.shape + (n,), dtype=Y.dtype)
        D[..., idx, idx] = 1.0 / Y
        D = D - (1.0 / sigma)[..., None, None]
        D = d[..., None, None] * D
    return D / scale[..., None, None]


def _flux_parts(rho, theta, Y, grad_Y, sched, closure):
    """Matrix part and positivity-regularization part of the species flux."""
    Dh = _dhat(theta, Y, sched, closure)
    if closure.kind == "fick":
        fpart = -Dh[..., None, None] * grad_Y
    else:
        fpart = -Y[..., None] * np.einsum("...kl,...ld->...kd", Dh, grad_Y)
    coef = (sched.eps * (rho + 1.0)[..., None] * Y + sched.lam) / Y
    rpart = -coef[..., None] * grad_Y
    return fpart, rpart


def regularized_flux(s: mixture.StateSample, g: mixture.GradientSample,
                     sched: RegularizationSchedule, closure, p):
    """Regularized species flux: matrix diffusion plus the barrier term
    -(eps*(rho+1)*Y_k + lam) * grad(Y_k)/Y_k."""
    if np.any(s.Y <= 0):
        raise DomainError("regularized flux needs Y_k > 0")
    fpart, rpart = _flux_parts(np.float64(s.rho), np.float64(s.theta),
                               s.Y, g.grad_Y, sched, closure)
    return fpart + rpart


@dataclass
class ResidualVector:
    """Weighted-residual values, one row per field block (same layout as the
    unknown fields); constrained test entries are zeroed."""

    data: np.ndarray
    free_mask: np.ndarray

    def reduced(self):
        return self.data[self.free_mask]

    def norm(self):
        return float(np.linalg.norm(self.reduced()))

    def block(self, idx):
        return self.data[idx]


class Assembler:
    """Residual/Jacobian assembly for one (mesh, schedule, closure) stage."""

    def __init__(self, eb: ElementBasis, sched: RegularizationSchedule,
                 closure, reaction, params, force=None, sources=None):
        self.eb = eb
        self.sched = sched
        self.closure = closure
        self.reaction = reaction
        self.params = params
        d = eb.mesh.dim
        self.dim = d
        self.n = params.n
        self.n_fields = 2 + d + self.n
        self.i_u = list(range(1, 1 + d))
        self.i_theta = 1 + d
        self.i_Y = list(range(2 + d, 2 + d + self.n))

        # data evaluated once at quadrature points
        if force is None:
            self.force_qp = None
        elif callable(force):
            self.force_qp = np.asarray(force(eb.qp_x), dtype=float)
        else:
            f = np.asarray(force, dtype=float)
            self.force_qp = np.broadcast_to(f, eb.qp_x.shape).copy()
        self.theta0_qp = [params.theta0(eb.face_x[w]) for w in (0, 1)]
        self.src_vol = None
        self.src_wall = None
        if sources is not None:
            self.src_vol = np.zeros((self.n_fields,) + eb.qp_x.shape[:2])
            x = eb.qp_x
            if sources.mass is not None:
                self.src_vol[0] = sources.mass(x)
            if sources.momentum is not None:
                qm = np.asarray(sources.momentum(x))
                for c in range(d):
                    self.src_vol[1 + c] = qm[..., c]
            if sources.energy is not None:
                self.src_vol[self.i_theta] = sources.energy(x)
            if sources.species is not None:
                qs = np.asarray(sources.species(x))
                for k in range(self.n):
                    self.src_vol[self.i_Y[k]] = qs[..., k]
            self.src_wall = []
            for w in (0, 1):
                sw = np.zeros((self.n_fields,) + eb.face_x[w].shape[:2])
                if sources.wall_momentum is not None:
                    gm = np.asarray(sources.wall_momentum(eb.face_x[w], w))
                    for c in range(d):
                        sw[1 + c] = gm[..., c]
                if sources.wall_energy is not None:
                    sw[self.i_theta] = sources.wall_energy(eb.face_x[w], w)
                if sources.wall_mass is not None:
                    sw[0] = sources.wall_mass(eb.face_x[w], w)
                if sources.wall_species is not None:
                    gs = np.asarray(sources.wall_species(eb.face_x[w], w))
                    for k in range(self.n):
                        sw[self.i_Y[k]] = gs[..., k]
                self.src_wall.append(sw)

    def mass_error(self, sol: DiscreteSolution):
        """|int rho - M| adjusted for manufactured sources.

        Summing the continuity block over the nodal partition of unity gives
        eps*(int rho - M) - int q_c + wall terms, so with sources present the
        compatible total mass shifts accordingly.
        """
        eb = self.eb
        rho_q = eb.values(eb.gather(sol.data[0]))
        gap = eb.integrate_qp(rho_q) - self.params.M_total
        if self.src_vol is not None:
            gap -= eb.integrate_qp(self.src_vol[0]) / self.sched.eps
            for w in (0, 1):
                gap -= eb.integrate_face_qp(self.src_wall[w][0], w) / self.sched.eps
        return abs(gap)

    # -- gathering ------------------------------------------------------------
    def gather(self, sol: DiscreteSolution):
        return sol.data[:, self.eb.mesh.conn].transpose(1, 0, 2)  # (n_elem, nf, nloc)

    def gather_faces(self, sol: DiscreteSolution, wall):
        return sol.data[:, self.eb.face_conn[wall]].transpose(1, 0, 2)

    # -- local kernels ----------------------------------------------------------
    def _fields(self, lv):
        eb = self.eb
        vals = np.einsum("lq,efl->efq", eb.N, lv)
        grads = np.einsum("lqd,efl->efqd", eb.dN, lv)
        d = self.dim
        rho = vals[:, 0]
        grad_rho = grads[:, 0]
        u = np.moveaxis(vals[:, 1:1 + d], 1, -1)
        grad_u = np.moveaxis(grads[:, 1:1 + d], 1, 2)  # (e, q, c, b) = du_c/dx_b
        theta = vals[:, self.i_theta]
        grad_theta = grads[:, self.i_theta]
        Y = np.moveaxis(vals[:, self.i_Y[0]:self.i_Y[0] + self.n], 1, -1)
        grad_Y = np.moveaxis(grads[:, self.i_Y[0]:self.i_Y[0] + self.n], 1, 2)
        if not np.iscomplexobj(lv):
            if rho.size and rho.min() <= 0:
                raise DomainError("nonpositive density at a quadrature point")
            if theta.size and theta.min() <= 0:
                raise DomainError("nonpositive temperature at a quadrature point")
            if Y.size and Y.min() <= 0:
                raise DomainError("nonpositive mass fraction at a quadrature point")
        return rho, grad_rho, u, grad_u, theta, grad_theta, Y, grad_Y

    def local_volume_residual(self, lv):
        """Element-local weighted residuals, (n_elem, n_fields, nloc)."""
        eb, p, sc = self.eb, self.params, self.sched
        N, dN, wq = eb.N, eb.dN, eb.w
        rho, grad_rho, u, grad_u, theta, grad_theta, Y, grad_Y = self._fields(lv)
        d, n = self.dim, self.n

        lr = np.zeros_like(lv)

        def add_val(row, coef):
            lr[:, row, :] += np.einsum("eq,q,lq->el", coef, wq, N)

        def add_grad(row, vec):
            lr[:, row, :] += np.einsum("eqd,q,lqd->el", vec, wq, dN)

        div_u = np.einsum("eqcc->eq", grad_u)
        sigma = Y.sum(axis=-1)
        pi = rho ** p.gamma + rho * theta * (Y / p.molar_masses).sum(axis=-1)
        P = pi + sc.delta * rho ** sc.beta + sc.delta * rho ** 2
        energy = rho ** (p.gamma - 1.0) / (p.gamma - 1.0) + theta * (Y * p.cv).sum(axis=-1)
        S = regularized_stress(theta, grad_u, sc.eta, p)
        kt = regularized_conductivity(theta, sc.delta, sc.eta, sc.B_exp, p) \
            * (sc.eps + theta) / theta
        fpart, rpart = _flux_parts(rho, theta, Y, grad_Y, sc, self.closure)
        J = fpart + rpart
        if self.reaction is not None:
            from .closures import _production_rates
            omega = _production_rates(theta, Y, self.reaction)
        else:
            omega = np.zeros_like(Y)

        # continuity
        conv = np.einsum("eqd,eqd->eq", grad_rho, u)
        add_val(0, sc.eps * rho + conv + rho * div_u - sc.eps * sc.rho_bar)
        add_grad(0, sc.eps * grad_rho)

        # momentum
        for c in range(d):
            adv = 0.5 * rho * np.einsum("eqb,eqb->eq", u, grad_u[:, :, c, :])
            body = adv
            if self.force_qp is not None:
                body = body - rho * self.force_qp[..., c]
            add_val(1 + c, body)
            vec = -0.5 * (rho * u[..., c])[..., None] * u + S[:, :, c, :]
            vec[..., c] -= P
            add_grad(1 + c, vec)

        # species
        for k in range(n):
            Yk = Y[..., k]
            gYk = grad_Y[:, :, k, :]
            div_Yru = (np.einsum("eqd,eqd->eq", rho[..., None] * gYk
                                 + Yk[..., None] * grad_rho, u)
                       + Yk * rho * div_u)
            add_val(self.i_Y[k],
                    -omega[..., k] - sc.eps * sc.rho_bar_k + sc.eps * Yk * rho
                    + div_Yru + np.sqrt(sc.lam) * np.log(Yk))
            add_grad(self.i_Y[k], -J[:, :, k, :] + sc.eps * Yk[..., None] * grad_rho)

        # internal energy
        Jcv = np.einsum("k,eqkd->eqd", p.cv, J)
        add_grad(self.i_theta,
                 kt[..., None] * grad_theta - (rho * energy)[..., None] * u
                 - theta[..., None] * Jcv)
        Sgu = np.einsum("eqcb,eqcb->eq", S, grad_u)
        gr2 = np.einsum("eqd,eqd->eq", grad_rho, grad_rho)
        add_val(self.i_theta,
                pi * div_u - sc.delta / theta - Sgu
                - sc.delta * sc.eps * (sc.beta * rho ** (sc.beta - 2.0) + 2.0) * gr2)

        if self.src_vol is not None:
            for f in range(self.n_fields):
                lr[:, f, :] -= np.einsum("eq,q,lq->el", self.src_vol[f], wq, N)
        return lr

    def local_face_residual(self, fv, wall):
        """Wall-face contributions: slip friction and the temperature flux law."""
        eb, p, sc = self.eb, self.params, self.sched
        Nf, wf = eb.Nf, eb.wf
        vals = np.einsum("lq,efl->efq", Nf, fv)
        fr = np.zeros_like(fv)
        for c in range(self.dim):
            fr[:, 1 + c, :] += np.einsum("eq,q,lq->el",
                                         p.f_friction * vals[:, 1 + c], wf, Nf)
        theta = vals[:, self.i_theta]
        if not np.iscomplexobj(fv) and theta.size and theta.min() <= 0:
            raise DomainError("nonpositive wall temperature")
        bterm = ((p.L_heat + sc.delta * theta ** (sc.B_exp - 1.0))
                 * (theta - self.theta0_qp[wall])
                 + sc.eps * np.log(theta)
                 + sc.lam * theta ** (sc.B_exp / 2.0) * np.log(theta))
        fr[:, self.i_theta, :] += np.einsum("eq,q,lq->el", bterm, wf, Nf)
        if self.src_wall is not None:
            for f in range(self.n_fields):
                fr[:, f, :] -= np.einsum("eq,q,lq->el", self.src_wall[wall][f], wf, Nf)
        return fr

    # -- global assembly --------------------------------------------------------
    def residual(self, sol: DiscreteSolution) -> ResidualVector:
        lr = self.local_volume_residual(self.gather(sol))
        out = np.zeros_like(sol.data)
        for f in range(self.n_fields):
            np.add.at(out[f], self.eb.mesh.conn, lr[:, f, :])
        for wall in (0, 1):
            fr = self.local_face_residual(self.gather_faces(sol, wall), wall)
            for f in range(self.n_fields):
                np.add.at(out[f], self.eb.face_conn[wall], fr[:, f, :])
        out[~sol.free_mask] = 0.0
        return ResidualVector(out, sol.free_mask)

    def jacobian(self, sol: DiscreteSolution):
        """Sparse Jacobian on the free degrees of freedom (complex step)."""
        mesh = self.eb.mesh
        nf = self.n_fields
        redidx = -np.ones((nf, mesh.n_nodes), dtype=np.int64)
        redidx[sol.free_mask] = np.arange(sol.n_dof)

        rows, cols, vals = [], [], []
        h = _CSTEP

        lv = self.gather(sol).astype(complex)
        nloc = lv.shape[-1]
        conn = mesh.conn
        for f in range(nf):
            for l in range(nloc):
                lv[:, f, l] += 1j * h
                lr = self.local_volume_residual(lv)
                lv[:, f, l] -= 1j * h
                dcol = lr.imag / h  # (n_elem, nf, nloc)
                cg = redidx[f, conn[:, l]]
                for ft in range(nf):
                    rg = redidx[ft, conn]  # (n_elem, nloc)
                    keep = (rg >= 0) & (cg[:, None] >= 0)
                    rows.append(rg[keep])
                    cols.append(np.broadcast_to(cg[:, None], rg.shape)[keep])
                    vals.append(dcol[:, ft, :][keep])
        for wall in (0, 1):
            fv = self.gather_faces(sol, wall).astype(complex)
            nlf = fv.shape[-1]
            fconn = self.eb.face_conn[wall]
            for f in [*self.i_u, self.i_theta]:
                for l in range(nlf):
                    fv[:, f, l] += 1j * h
                    fr = self.local_face_residual(fv, wall)
                    fv[:, f, l] -= 1j * h
                    dcol = fr.imag / h
                    cg = redidx[f, fconn[:, l]]
                    for ft in range(nf):
                        rg = redidx[ft, fconn]
                        keep = (rg >= 0) & (cg[:, None] >= 0)
                        rows.append(rg[keep])
                        cols.append(np.broadcast_to(cg[:, None], rg.shape)[keep])
                        vals.append(fr.imag[:, ft, :][keep] / h)
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        J = sp.coo_matrix((vals, (rows, cols)), shape=(sol.n_dof, sol.n_dof))
        return J.tocsr()


def assemble_residual(sol, sched, closure, reaction, params, eb,
                      force=None, sources=None) -> ResidualVector:
    asm = Assembler(eb, sched, closure, reaction, params, force=force,
                    sources=sources)
    return asm.residual(sol)


def assemble_jacobian(sol, sched, closure, reaction, params, eb,
                      force=None, sources=None):
    asm = Assembler(eb, sched, closure, reaction, params, force=force,
                    sources=sources)
    return asm.jacobian(sol)


def _psi_nodal(sol, psi):
    if np.isscalar(psi):
        return np.full(sol.mesh.n_nodes, float(psi))
    if callable(psi):
        return np.asarray(psi(sol.mesh.node_coords), dtype=float)
    return np.asarray(psi, dtype=float)


def total_energy_residual_terms(sol, sched, closure, params, eb, psi,
                                force=None):
    """Named terms of the approximate total-energy balance for a scalar test
    function; the balance residual is their signed sum."""
    p, sc = params, sched
    psi_n = _psi_nodal(sol, psi)
    lp = eb.gather(psi_n)
    psi_q = eb.values(lp)
    gpsi_q = eb.gradients(lp)

    asm = Assembler(eb, sched, closure, None, params, force=force)
    rho, grad_rho, u, grad_u, theta, grad_theta, Y, grad_Y = \
        asm._fields(asm.gather(sol))
    div_u = np.einsum("eqcc->eq", grad_u)
    pi = rho ** p.gamma + rho * theta * (Y / p.molar_masses).sum(axis=-1)
    P = pi + sc.delta * rho ** sc.beta + sc.delta * rho ** 2
    energy = rho ** (p.gamma - 1.0) / (p.gamma - 1.0) + theta * (Y * p.cv).sum(axis=-1)
    S = regularized_stress(theta, grad_u, sc.eta, p)
    kt = regularized_conductivity(theta, sc.delta, sc.eta, sc.B_exp, p) \
        * (sc.eps + theta) / theta
    fpart, rpart = _flux_parts(rho, theta, Y, grad_Y, sc, closure)
    J = fpart + rpart
    Jcv = np.einsum("k,eqkd->eqd", p.cv, J)
    w = eb.w

    def vol(q):
        return float(np.einsum("eq,q->", q, w))

    u_gpsi = np.einsum("eqd,eqd->eq", u, gpsi_q)
    terms = {}
    terms["convective"] = -vol((rho * energy + 0.5 * rho
                                * np.einsum("eqd,eqd->eq", u, u) + P) * u_gpsi)
    Su = np.einsum("eqcb,eqc->eqb", S, u)
    terms["stress_work"] = -vol(np.einsum("eqb,eqb->eq", Su, gpsi_q))
    terms["delta_heat"] = -vol(sc.delta / theta * psi_q)
    terms["conduction"] = vol(kt * np.einsum("eqd,eqd->eq", grad_theta, gpsi_q))
    terms["species_heat"] = -vol(theta * np.einsum("eqd,eqd->eq", Jcv, gpsi_q))

    bsum = 0.0
    fsum = 0.0
    for wall in (0, 1):
        fv = np.einsum("lq,efl->efq", eb.Nf,
                       sol.data[:, eb.face_conn[wall]].transpose(1, 0, 2))
        th = fv[:, asm.i_theta]
        psw = np.einsum("lq,fl->fq", eb.Nf, psi_n[eb.face_conn[wall]])
        bterm = ((p.L_heat + sc.delta * th ** (sc.B_exp - 1.0))
                 * (th - asm.theta0_qp[wall])
                 + sc.eps * np.log(th) + sc.lam * th ** (sc.B_exp / 2.0) * np.log(th))
        bsum += float(np.einsum("fq,q->", bterm * psw, eb.wf))
        u2 = sum(fv[:, c] ** 2 for c in asm.i_u)
        fsum += float(np.einsum("fq,q->", u2 * psw, eb.wf))
    terms["wall_heat"] = bsum
    terms["wall_friction"] = p.f_friction * fsum

    if asm.force_qp is not None:
        terms["force_work"] = -vol(rho * np.einsum("eqd,eqd->eq",
                                                   asm.force_qp, u) * psi_q)
    else:
        terms["force_work"] = 0.0
    terms["beta_pressure"] = -sc.delta / (sc.beta - 1.0) * vol(
        sc.eps * sc.beta * sc.rho_bar * rho ** (sc.beta - 1.0) * psi_q
        + rho ** sc.beta * u_gpsi - sc.eps * sc.beta * rho ** sc.beta * psi_q)
    terms["quad_pressure"] = -sc.delta * vol(
        2.0 * sc.eps * sc.rho_bar * rho * psi_q + rho ** 2 * u_gpsi
        - 2.0 * sc.eps * rho ** 2 * psi_q)
    return terms


def total_energy_residual(sol, sched, closure, params, eb, psi, force=None):
    """Residual of the approximate total-energy balance for the test psi."""
    return float(sum(total_energy_residual_terms(
        sol, sched, closure, params, eb, psi, force=force).values()))

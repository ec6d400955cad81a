"""Manufactured solutions with symbolically derived compensating sources.

Chosen analytic fields are pushed through the strong form of the regularized
system with sympy; the resulting volume and wall source terms make the
fields an exact solution, which drives both the residual-exactness test and
the mesh-convergence study.  The symbolic route is independent of the numpy
assembly, so agreement between the two checks both.

Two families:

* ``trig``  - x-periodic trigonometric fields satisfying the slip and
  natural flux conditions exactly (zero wall-normal derivatives), smooth
  but not in the discrete space: used for convergence studies.
* ``poly``  - y-only polynomial fields with constant temperature and mass
  fractions (gamma = 2 required): exactly representable by Q2 elements, so
  the assembled residual vanishes to roundoff under a high-order rule.
"""

from dataclasses import dataclass

import numpy as np
import sympy as sp

from .approx import SourceTerms
from .errors import ConfigError

__all__ = ["ManufacturedProblem"]

_X, _Y = sp.symbols("x y", real=True, positive=False)


def _wrap(expr):
    """Lambdify a sympy expression into a function of coords (..., 2)."""
    fn = sp.lambdify((_X, _Y), expr, "numpy")

    def wrapped(coords):
        coords = np.asarray(coords)
        out = fn(coords[..., 0], coords[..., 1])
        return np.broadcast_to(np.asarray(out, dtype=float),
                               coords.shape[:-1]).copy()

    return wrapped


def _wrap_vec(exprs):
    fns = [_wrap(e) for e in exprs]

    def wrapped(coords):
        return np.stack([f(coords) for f in fns], axis=-1)

    return wrapped


class ManufacturedProblem:
    """Analytic fields plus every source needed to make them exact.

    Parameters mirror the physical and regularization constants; the
    regularization parameters are plain floats here so that the limit
    variant (all zero) can be formed for the weak-solution audits.
    """

    def __init__(self, params, Lx=1.0, Ly=1.0, *, eta=1e-3, lam=1e-2,
                 eps=1e-1, delta=1.0, beta=4.0, B_exp=6.0, r_exp=1.0,
                 closure=None, reaction=None, kind="trig",
                 amp=None, theta_bar=1.0, rho_bar=None, theta0_expr=None):
        if not params.equal_masses() or abs(params.molar_masses[0] - 1.0) > 1e-14:
            raise ConfigError("manufactured problems assume unit molar masses")
        self.params = params
        self.Lx, self.Ly = float(Lx), float(Ly)
        self.kind = kind
        n = params.n
        self.n = n
        self.eta, self.lam, self.eps, self.delta = eta, lam, eps, delta
        self.beta, self.B_exp, self.r_exp = beta, B_exp, r_exp
        rho_bar = params.M_total / (Lx * Ly) if rho_bar is None else rho_bar
        self.rho_bar = rho_bar

        a = {"rho": 0.1, "u": 0.1, "v": 0.05, "theta": 0.1, "Y": 0.05}
        if amp:
            a.update(amp)

        x, y = _X, _Y
        C = sp.cos(2 * sp.pi * x / Lx)
        S = sp.sin(2 * sp.pi * x / Lx)
        Cw = sp.cos(sp.pi * y / Ly)
        Sw = sp.sin(sp.pi * y / Ly)
        if kind == "trig":
            rho = rho_bar * (1 + a["rho"] * C * Cw)
            u1 = a["u"] * S * Cw
            u2 = a["v"] * C * Sw
            theta = theta_bar * (1 + a["theta"] * C * Cw)
            signs = [1 if k % 2 == 0 else -1 for k in range(n)]
            if n % 2 == 1:
                signs[-1] = 0
            Yk = [sp.Rational(1, n) + s * a["Y"] * C * Cw for s in signs]
        elif kind == "poly":
            if abs(params.gamma - 2.0) > 1e-14:
                raise ConfigError("polynomial manufactured fields need gamma = 2")
            t = y / Ly
            rho = rho_bar * (1 + a["rho"] * (t * t - t))
            u1 = a["u"] * (1 + t + t * t)
            u2 = a["v"] * t * (1 - t)
            theta = sp.Float(theta_bar)
            Yk = [sp.Rational(1, n) for _ in range(n)]
        else:
            raise ConfigError(f"unknown manufactured family {kind!r}")
        self._build(rho, (u1, u2), theta, Yk, closure, reaction, theta0_expr)

    # -- symbolic construction ------------------------------------------------
    def _build(self, rho, u, theta, Yk, closure, reaction, theta0_expr):
        p = self.params
        x, y = _X, _Y
        n = self.n
        eta, lam, eps, delta = self.eta, self.lam, self.eps, self.delta
        beta, B, r = self.beta, self.B_exp, self.r_exp
        u1, u2 = u

        def grad(f):
            return (sp.diff(f, x), sp.diff(f, y))

        def div(v):
            return sp.diff(v[0], x) + sp.diff(v[1], y)

        def dot(a, b):
            return a[0] * b[0] + a[1] * b[1]

        sigma = sum(Yk)
        pi = rho ** p.gamma + rho * theta * sigma
        P = pi + delta * rho ** beta + delta * rho ** 2
        e = rho ** (p.gamma - 1) / (p.gamma - 1) + theta * sum(
            c * Yv for c, Yv in zip(p.cv, Yk))

        gu = [[sp.diff(u1, x), sp.diff(u1, y)],
              [sp.diff(u2, x), sp.diff(u2, y)]]
        divu = gu[0][0] + gu[1][1]
        mu_s = p.mu0 * (1 + theta) / (1 + eta * theta)
        nu_s = p.nu0 * (1 + theta) / (1 + eta * theta)
        Smat = [[mu_s * (2 * gu[0][0] - sp.Rational(2, 3) * divu) + nu_s * divu,
                 mu_s * (gu[0][1] + gu[1][0])],
                [mu_s * (gu[0][1] + gu[1][0]),
                 mu_s * (2 * gu[1][1] - sp.Rational(2, 3) * divu) + nu_s * divu]]

        kappa_t = (p.kappa0 * (1 + theta ** p.m_exp) + delta * theta ** B
                   + delta / theta) * (eps + theta) / theta

        # regularized species fluxes
        if closure is None or closure.kind == "nondiagonal":
            d0 = closure.d0 if closure is not None else 1.0
            a_exp = closure.a_exp if closure is not None else 1.0
            dco = d0 * (1 + theta ** a_exp) / (sigma + eps) ** r
            J = []
            for k in range(n):
                gYk = grad(Yk[k])
                mat = [sp.Integer(0), sp.Integer(0)]
                for l in range(n):
                    Dkl = dco * ((1 if k == l else 0) / Yk[k] - 1 / sigma)
                    gl = grad(Yk[l])
                    mat[0] += Dkl * gl[0]
                    mat[1] += Dkl * gl[1]
                coef = (eps * (rho + 1) * Yk[k] + lam) / Yk[k]
                J.append((-Yk[k] * mat[0] - coef * gYk[0],
                          -Yk[k] * mat[1] - coef * gYk[1]))
        else:
            d0, a_exp = closure.d0, closure.a_exp
            dco = d0 * (1 + theta ** a_exp) / (sigma + eps) ** r
            J = []
            for k in range(n):
                gYk = grad(Yk[k])
                coef = (eps * (rho + 1) * Yk[k] + lam) / Yk[k]
                J.append((-dco * gYk[0] - coef * gYk[0],
                          -dco * gYk[1] - coef * gYk[1]))

        omega = [sp.Integer(0)] * n
        if reaction is not None:
            K = reaction.K0 * theta / (1 + theta)
            for i, j in reaction.pairs:
                rate = K * (Yk[j] - Yk[i])
                omega[i] += rate
                omega[j] -= rate

        lap_rho = sp.diff(rho, x, 2) + sp.diff(rho, y, 2)
        q_c = eps * rho + div((rho * u1, rho * u2)) - eps * lap_rho \
            - eps * self.rho_bar

        conv = []
        for c, uc in enumerate((u1, u2)):
            adv = sp.Rational(1, 2) * rho * (u1 * gu[c][0] + u2 * gu[c][1])
            cons = sp.Rational(1, 2) * (sp.diff(rho * uc * u1, x)
                                        + sp.diff(rho * uc * u2, y))
            divS_c = sp.diff(Smat[c][0], x) + sp.diff(Smat[c][1], y)
            gP = grad(P)
            conv.append(adv + cons - divS_c + gP[c])
        q_m = tuple(conv)

        q_s = []
        for k in range(n):
            gYk = grad(Yk[k])
            grho = grad(rho)
            qs = (div(J[k]) - omega[k] - eps * self.rho_bar / n
                  + eps * Yk[k] * rho
                  + div((Yk[k] * rho * u1, Yk[k] * rho * u2))
                  - eps * div((Yk[k] * grho[0], Yk[k] * grho[1]))
                  + sp.sqrt(lam) * sp.log(Yk[k]))
            q_s.append(qs)

        gth = grad(theta)
        grho = grad(rho)
        Jcv = (sum(p.cv[k] * J[k][0] for k in range(n)),
               sum(p.cv[k] * J[k][1] for k in range(n)))
        S_gu = sum(Smat[i][j] * gu[i][j] for i in range(2) for j in range(2))
        q_e = (-div((kappa_t * gth[0], kappa_t * gth[1]))
               + div((rho * e * u1, rho * e * u2))
               + pi * divu - delta / theta - S_gu
               - delta * eps * (beta * rho ** (beta - 2) + 2)
               * (grho[0] ** 2 + grho[1] ** 2)
               + div((theta * Jcv[0], theta * Jcv[1])))

        # wall sources (normal is -e_y at y=0, +e_y at y=Ly)
        if theta0_expr is None:
            if callable(p.theta0_wall):
                raise ConfigError("manufactured problems need a symbolic theta0")
            theta0_expr = sp.Float(float(p.theta0_wall))
        walls = []
        for wall, (ysub, nsign) in enumerate(((0.0, -1), (self.Ly, 1))):
            gm = []
            for c in range(2):
                Sn = nsign * Smat[c][1]
                gm.append((Sn + p.f_friction * (u1, u2)[c]).subs(y, ysub))
            flux = nsign * kappa_t * gth[1]
            bc = ((p.L_heat + delta * theta ** (B - 1)) * (theta - theta0_expr)
                  + eps * sp.log(theta) + lam * theta ** (B / 2) * sp.log(theta))
            Jn = [nsign * J[k][1] for k in range(n)]
            ge = (flux + bc - theta * sum(p.cv[k] * Jn[k] for k in range(n))
                  ).subs(y, ysub)
            gc = (eps * nsign * grho[1]).subs(y, ysub)
            gs = [(Jn[k] + eps * Yk[k] * nsign * grho[1]).subs(y, ysub)
                  for k in range(n)]
            walls.append({"mom": [sp.simplify(g) for g in gm],
                          "ene": ge, "mass": gc, "spe": gs})

        self._exprs = {
            "rho": rho, "u": (u1, u2), "theta": theta, "Y": Yk,
            "q_c": q_c, "q_m": q_m, "q_s": q_s, "q_e": q_e, "walls": walls,
        }
        self._f = {
            "rho": _wrap(rho), "u": _wrap_vec((u1, u2)), "theta": _wrap(theta),
            "Y": _wrap_vec(Yk),
            "grad_rho": _wrap_vec(grad(rho)),
            "grad_u": [_wrap_vec(grad(u1)), _wrap_vec(grad(u2))],
            "grad_theta": _wrap_vec(gth),
            "grad_Y": [_wrap_vec(grad(Yv)) for Yv in Yk],
            "div_u": _wrap(divu),
            "q_c": _wrap(q_c), "q_m": _wrap_vec(q_m),
            "q_s": _wrap_vec(q_s), "q_e": _wrap(q_e),
            "g_mom": [_wrap_vec(w["mom"]) for w in walls],
            "g_ene": [_wrap(w["ene"]) for w in walls],
            "g_mass": [_wrap(w["mass"]) for w in walls],
            "g_spe": [_wrap_vec(w["spe"]) for w in walls],
        }

    # -- consumers --------------------------------------------------------------
    def field_functions(self):
        """Callables for DiscreteSolution.from_functions."""
        return {k: self._f[k] for k in ("rho", "u", "theta", "Y")}

    def sources(self) -> SourceTerms:
        f = self._f
        return SourceTerms(
            mass=f["q_c"], momentum=f["q_m"], species=f["q_s"],
            energy=f["q_e"],
            wall_momentum=lambda xw, w: f["g_mom"][w](xw),
            wall_energy=lambda xw, w: f["g_ene"][w](xw),
            wall_mass=lambda xw, w: f["g_mass"][w](xw),
            wall_species=lambda xw, w: f["g_spe"][w](xw),
        )

    def interpolate(self, mesh):
        from .mesh import DiscreteSolution
        return DiscreteSolution.from_functions(mesh, self.n, self.field_functions())

    def error_norms(self, sol, eb):
        """L2 and H1-seminorm errors of every field against the exact ones."""
        f = self._f
        xq = eb.qp_x
        w = eb.w
        out = {}

        def l2(err2):
            return float(np.sqrt(np.einsum("eq,q->", err2, w)))

        rho_q = eb.values(eb.gather(sol.rho))
        out["rho_L2"] = l2((rho_q - f["rho"](xq)) ** 2)
        g = eb.gradients(eb.gather(sol.rho)) - f["grad_rho"](xq)
        out["rho_H1semi"] = l2((g ** 2).sum(axis=-1))

        err2 = 0.0
        gerr2 = 0.0
        for c, comp in enumerate(sol.i_u):
            uq = eb.values(eb.gather(sol.data[comp]))
            exact = f["u"](xq)[..., c]
            err2 = err2 + (uq - exact) ** 2
            gg = eb.gradients(eb.gather(sol.data[comp])) - f["grad_u"][c](xq)
            gerr2 = gerr2 + (gg ** 2).sum(axis=-1)
        out["u_L2"] = l2(err2)
        out["u_H1semi"] = l2(gerr2)

        th_q = eb.values(eb.gather(sol.theta))
        out["theta_L2"] = l2((th_q - f["theta"](xq)) ** 2)
        g = eb.gradients(eb.gather(sol.theta)) - f["grad_theta"](xq)
        out["theta_H1semi"] = l2((g ** 2).sum(axis=-1))

        err2 = 0.0
        gerr2 = 0.0
        Yx = f["Y"](xq)
        for k, comp in enumerate(sol.i_Y):
            Yq = eb.values(eb.gather(sol.data[comp]))
            err2 = err2 + (Yq - Yx[..., k]) ** 2
            gg = eb.gradients(eb.gather(sol.data[comp])) - f["grad_Y"][k](xq)
            gerr2 = gerr2 + (gg ** 2).sum(axis=-1)
        out["Y_L2"] = l2(err2)
        out["Y_H1semi"] = l2(gerr2)
        return out

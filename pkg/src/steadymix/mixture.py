"""Constitutive kernel for a heat-conducting, chemically reacting gas mixture.

Pointwise thermodynamics and transport: pressure, energies, enthalpy /
entropy / Gibbs functions per species, viscous stress, heat flux, diffusion
driving forces and fluxes, and the entropy production rate in its two
equivalent forms.  All operations are pure functions of a pointwise state
(and its spatial gradients) and broadcast over leading batch axes, so the
same formulas serve both scalar samples and quadrature-point arrays.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

__all__ = [
    "MixtureParameters",
    "StateSample",
    "GradientSample",
    "pressure",
    "internal_energy",
    "total_energy",
    "species_thermo",
    "stress",
    "heat_flux",
    "driving_forces",
    "diffusion_flux",
    "entropy_production",
    "entropy_production_terms",
]

SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class MixtureParameters:
    """Physical constants of the mixture model.

    Parameters
    ----------
    n : int
        Number of species.
    gamma : float
        Adiabatic exponent of the cold pressure/energy, > 1.
    molar_masses : array (n,)
        Positive molar masses.  Solver configurations use all ones;
        the kernel accepts general values.
    cv : array (n,)
        Constant-volume specific heats, positive.  cp is derived as
        cp_k = cv_k + 1/m_k and never stored.
    m_exp : float
        Growth exponent of the heat conductivity, > 0.
    a_exp : float
        Growth exponent of the diffusion coefficient, >= 0.
    mu0, nu0, kappa0 : float
        Transport prefactors: mu(theta) = mu0*(1+theta),
        nu(theta) = nu0*(1+theta), kappa(theta) = kappa0*(1+theta**m_exp).
    M_total : float
        Prescribed total mass of the mixture.
    f_friction : float
        Slip (Navier) friction coefficient on the walls.
    L_heat : float
        Boundary heat-exchange coefficient, > 0.
    theta0_wall : float or callable
        External wall temperature; a constant or a function of boundary
        coordinates, bounded below by a positive constant.
    """

    n: int
    gamma: float
    molar_masses: np.ndarray
    cv: np.ndarray
    m_exp: float
    a_exp: float
    mu0: float = 1.0
    nu0: float = 1.0
    kappa0: float = 1.0
    M_total: float = 1.0
    f_friction: float = 1.0
    L_heat: float = 1.0
    theta0_wall: object = 1.0

    def __post_init__(self):
        object.__setattr__(self, "molar_masses",
                           np.asarray(self.molar_masses, dtype=float))
        object.__setattr__(self, "cv", np.asarray(self.cv, dtype=float))
        if self.gamma <= 1.0:
            raise DomainError("gamma must exceed 1")
        if self.molar_masses.shape != (self.n,) or np.any(self.molar_masses <= 0):
            raise DomainError("molar masses must be n positive reals")
        if self.cv.shape != (self.n,) or np.any(self.cv <= 0):
            raise DomainError("specific heats must be n positive reals")
        if self.m_exp <= 0:
            raise DomainError("heat-conductivity exponent must be positive")
        if self.a_exp < 0:
            raise DomainError("diffusion exponent must be nonnegative")
        if self.M_total <= 0:
            raise DomainError("total mass must be positive")
        if self.L_heat <= 0:
            raise DomainError("heat-exchange coefficient must be positive")
        if self.mu0 <= 0 or self.nu0 < 0 or self.kappa0 <= 0:
            raise DomainError("transport prefactors: mu0, kappa0 > 0, nu0 >= 0")
        if not callable(self.theta0_wall) and not float(self.theta0_wall) > 0:
            raise DomainError("wall temperature must be positive")

    @property
    def cp(self):
        return self.cv + 1.0 / self.molar_masses

    def mu(self, theta):
        return self.mu0 * (1.0 + theta)

    def nu(self, theta):
        return self.nu0 * (1.0 + theta)

    def kappa(self, theta):
        return self.kappa0 * (1.0 + theta ** self.m_exp)

    def theta0(self, x):
        """Wall temperature at boundary points ``x`` (shape (..., d))."""
        if callable(self.theta0_wall):
            return np.asarray(self.theta0_wall(x), dtype=float)
        return np.full(np.shape(x)[:-1], float(self.theta0_wall))

    def equal_masses(self, tol=1e-14):
        return np.all(np.abs(self.molar_masses - self.molar_masses[0]) <= tol)


@dataclass
class StateSample:
    """Pointwise thermodynamic state (rho, u, theta, Y)."""

    rho: float
    u: np.ndarray
    theta: float
    Y: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.rho < 0:
            raise DomainError("density must be nonnegative")
        if not self.theta > 0:
            raise DomainError("temperature must be strictly positive")
        if np.any(self.Y < 0) or np.any(self.Y > 1):
            raise DomainError("mass fractions must lie in [0, 1]")

    @property
    def dim(self):
        return self.u.shape[0]

    def on_simplex(self, tol=SIMPLEX_TOL):
        return abs(self.Y.sum() - 1.0) <= tol

    def require_simplex(self, tol=SIMPLEX_TOL):
        if not self.on_simplex(tol):
            raise DomainError("mass fractions do not sum to one")


@dataclass
class GradientSample:
    """Spatial gradients paired with a StateSample."""

    grad_rho: np.ndarray
    grad_u: np.ndarray
    grad_theta: np.ndarray
    grad_Y: np.ndarray

    def __post_init__(self):
        self.grad_rho = np.asarray(self.grad_rho, dtype=float)
        self.grad_u = np.asarray(self.grad_u, dtype=float)
        self.grad_theta = np.asarray(self.grad_theta, dtype=float)
        self.grad_Y = np.asarray(self.grad_Y, dtype=float)
        for a in (self.grad_rho, self.grad_u, self.grad_theta, self.grad_Y):
            if not np.all(np.isfinite(a)):
                raise DomainError("gradients must be finite")

    def simplex_consistent(self, tol=SIMPLEX_TOL):
        return np.all(np.abs(self.grad_Y.sum(axis=0)) <= tol)


# ---------------------------------------------------------------------------
# batched internals (leading axes broadcast; species axis second to last for
# gradient arrays, last for values)
# ---------------------------------------------------------------------------

def _pressure(rho, theta, Y, p):
    cold = rho ** p.gamma
    molecular = rho * theta * (Y / p.molar_masses).sum(axis=-1)
    return cold + molecular


def _internal_energy(rho, theta, Y, p):
    return rho ** (p.gamma - 1.0) / (p.gamma - 1.0) + theta * (Y * p.cv).sum(axis=-1)


def _species_entropy(rho, theta, Y, p):
    # s_k = cv_k log(theta) - (1/m_k) log(rho Y_k / m_k)
    arg = rho[..., None] * Y / p.molar_masses
    return p.cv * _log(theta)[..., None] - _log(arg) / p.molar_masses


def _log(z):
    return np.log(z)


def _species_enthalpy(theta, p):
    return p.cp * np.asarray(theta)[..., None]


def _stress(theta, grad_u, p, scale=1.0):
    d = grad_u.shape[-1]
    div_u = np.einsum("...ii->...", grad_u)
    sym = grad_u + np.swapaxes(grad_u, -1, -2)
    eye = np.eye(d)
    mu = p.mu(theta) * scale
    nu = p.nu(theta) * scale
    dev = sym - (2.0 / 3.0) * div_u[..., None, None] * eye
    return mu[..., None, None] * dev + (nu * div_u)[..., None, None] * eye


def _grad_log_pk(rho, theta, Y, grad_rho, grad_theta, grad_Y):
    # log p_k = log(rho Y_k theta / m_k); gradient independent of m_k
    t1 = grad_rho[..., None, :] / rho[..., None, None]
    t2 = grad_Y / Y[..., None]
    t3 = grad_theta[..., None, :] / theta[..., None, None]
    return t1 + t2 + t3


def _grad_sk(rho, theta, Y, grad_rho, grad_theta, grad_Y, p):
    # grad s_k = cv_k grad(theta)/theta - (1/m_k) grad(rho Y_k)/(rho Y_k)
    a = p.cv[:, None] * grad_theta[..., None, :] / theta[..., None, None]
    b = (grad_rho[..., None, :] / rho[..., None, None] + grad_Y / Y[..., None])
    return a - b / p.molar_masses[:, None]


def _driving_forces(rho, theta, Y, grad_rho, grad_theta, grad_Y, p):
    m = p.molar_masses
    pk = rho[..., None] * Y * theta[..., None] / m
    pim = pk.sum(axis=-1)
    grad_pk = (theta[..., None, None] * Y[..., None] * grad_rho[..., None, :]
               + rho[..., None, None] * theta[..., None, None] * grad_Y
               + rho[..., None, None] * Y[..., None] * grad_theta[..., None, :]
               ) / m[:, None]
    grad_pim = grad_pk.sum(axis=-2)
    return (grad_pk - Y[..., None] * grad_pim[..., None, :]) / pim[..., None, None]


def _diffusion_flux(rho, theta, Y, grad_rho, grad_theta, grad_Y, closure, p):
    if closure.kind == "fick":
        coeff = closure.coefficient(theta)
        return -coeff[..., None, None] * grad_Y
    D = closure.matrix(theta, Y)
    dk = _driving_forces(rho, theta, Y, grad_rho, grad_theta, grad_Y, p)
    return -Y[..., None] * np.einsum("...kl,...ld->...kd", D, dk)


# ---------------------------------------------------------------------------
# public pointwise operations
# ---------------------------------------------------------------------------

def pressure(s: StateSample, p: MixtureParameters) -> float:
    """Total pressure: cold part rho**gamma plus the ideal-mixture part."""
    return float(_pressure(np.float64(s.rho), np.float64(s.theta), s.Y, p))


def internal_energy(s: StateSample, p: MixtureParameters) -> float:
    """Specific internal energy (cold plus molecular part)."""
    return float(_internal_energy(np.float64(s.rho), np.float64(s.theta), s.Y, p))


def total_energy(s: StateSample, p: MixtureParameters) -> float:
    """Specific total energy: kinetic part plus internal energy."""
    return 0.5 * float(np.dot(s.u, s.u)) + internal_energy(s, p)


def species_thermo(s: StateSample, p: MixtureParameters):
    """Per-species enthalpy, entropy and Gibbs function plus mixture values.

    Returns
    -------
    dict with arrays ``h_k``, ``s_k``, ``g_k`` and scalars ``h``, ``s``, ``g``
    (mass-fraction weighted sums).

    Raises
    ------
    DomainError
        If some rho*Y_k vanishes, so the entropy logarithm is undefined;
        callers needing boundary-of-simplex states must use the regularized
        variants of the approximation layer.
    """
    if s.rho <= 0 or np.any(s.Y <= 0):
        raise DomainError("species entropy needs rho > 0 and Y_k > 0")
    theta = np.float64(s.theta)
    h_k = _species_enthalpy(theta, p)
    s_k = _species_entropy(np.float64(s.rho), theta, s.Y, p)
    g_k = h_k - s.theta * s_k
    return {
        "h_k": h_k, "s_k": s_k, "g_k": g_k,
        "h": float((s.Y * h_k).sum()),
        "s": float((s.Y * s_k).sum()),
        "g": float((s.Y * g_k).sum()),
    }


def stress(theta: float, grad_u: np.ndarray, p: MixtureParameters) -> np.ndarray:
    """Viscous stress tensor for the linear law with the 2/3 deviatoric factor."""
    if not theta > 0:
        raise DomainError("temperature must be positive")
    return _stress(np.float64(theta), np.asarray(grad_u, dtype=float), p)


def heat_flux(s: StateSample, g: GradientSample, F: np.ndarray,
              p: MixtureParameters) -> np.ndarray:
    """Total heat flux: enthalpy transport by diffusion plus Fourier's law."""
    h_k = _species_enthalpy(np.float64(s.theta), p)
    return np.einsum("k,kd->d", h_k, np.asarray(F)) - p.kappa(s.theta) * g.grad_theta


def driving_forces(s: StateSample, g: GradientSample,
                   p: MixtureParameters) -> np.ndarray:
    """Species diffusion driving forces d_k (n x d array).

    For equal molar masses on the simplex this reduces to grad Y_k.
    """
    if s.rho <= 0 or s.theta <= 0:
        raise DomainError("driving forces need rho > 0 and theta > 0")
    s.require_simplex()
    pim = _pressure(np.float64(s.rho), np.float64(s.theta), s.Y, p) - s.rho ** p.gamma
    if pim <= 0:
        raise DomainError("molecular pressure vanished")
    return _driving_forces(np.float64(s.rho), np.float64(s.theta), s.Y,
                           g.grad_rho, g.grad_theta, g.grad_Y, p)


def diffusion_flux(s: StateSample, g: GradientSample, closure,
                   p: MixtureParameters) -> np.ndarray:
    """Species diffusion fluxes F_k (n x d).

    The non-diagonal closure contracts the diffusion matrix with the
    driving forces; the Fick closure uses F_k = -D(theta, Y) grad Y_k
    (the sign that makes the entropy production nonnegative).
    """
    return _diffusion_flux(np.float64(s.rho), np.float64(s.theta), s.Y,
                           g.grad_rho, g.grad_theta, g.grad_Y, closure, p)


def entropy_production_terms(s: StateSample, g: GradientSample, F, omega,
                             p: MixtureParameters):
    """The four summands of the quadratic (manifestly signed) form of the
    entropy production rate: viscous, conductive, diffusive, reactive."""
    if s.rho <= 0 or np.any(s.Y <= 0):
        raise DomainError("entropy production needs rho > 0 and Y in the open simplex")
    F = np.asarray(F, dtype=float)
    omega = np.asarray(omega, dtype=float)
    S = _stress(np.float64(s.theta), g.grad_u, p)
    viscous = float(np.einsum("ij,ij->", S, g.grad_u)) / s.theta
    conductive = p.kappa(s.theta) * float(np.dot(g.grad_theta, g.grad_theta)) / s.theta ** 2
    glpk = _grad_log_pk(np.float64(s.rho), np.float64(s.theta), s.Y,
                        g.grad_rho, g.grad_theta, g.grad_Y)
    diffusive = -float(np.einsum("kd,kd->", F / p.molar_masses[:, None], glpk))
    g_k = species_thermo(s, p)["g_k"]
    reactive = -float((p.molar_masses * g_k * omega).sum()) / s.theta
    return viscous, conductive, diffusive, reactive


def entropy_production(s: StateSample, g: GradientSample, F, omega, closure,
                       p: MixtureParameters):
    """Entropy production rate, in both equivalent forms.

    ``sigma25`` uses the heat flux and the gradients of g_k/theta;
    ``sigma26`` is the expanded form whose four terms are individually
    nonnegative for admissible closures.  ``F`` and ``omega`` may be None,
    in which case they are computed from ``closure`` (fluxes) and taken as
    zero (production rates).
    """
    if F is None:
        F = diffusion_flux(s, g, closure, p)
    F = np.asarray(F, dtype=float)
    if omega is None:
        omega = np.zeros(p.n)
    omega = np.asarray(omega, dtype=float)

    thermo = species_thermo(s, p)
    S = _stress(np.float64(s.theta), g.grad_u, p)
    Q = heat_flux(s, g, F, p)
    grad_gk_over_theta = -_grad_sk(np.float64(s.rho), np.float64(s.theta), s.Y,
                                   g.grad_rho, g.grad_theta, g.grad_Y, p)
    sigma25 = (float(np.einsum("ij,ij->", S, g.grad_u)) / s.theta
               - float(np.dot(Q, g.grad_theta)) / s.theta ** 2
               - float(np.einsum("kd,kd->", F, grad_gk_over_theta))
               - float((p.molar_masses * thermo["g_k"] * omega).sum()) / s.theta)
    sigma26 = sum(entropy_production_terms(s, g, F, omega, p))
    return sigma25, sigma26

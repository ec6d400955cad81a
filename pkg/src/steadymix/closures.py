"""Concrete diffusion-matrix and reaction-rate closures with validation.

The built-in diffusion matrix family is

    D_kl(theta, Y) = d(theta) * (delta_kl / Y_k - 1 / sigma_Y),
    d(theta) = d0 * (1 + theta**a),

which is symmetric, annihilates Y, is positive semidefinite and attains the
spectral lower bound with constant d0 on the simplex.  The built-in Fick
closure is the scalar D(theta, Y) = d(theta).  Reaction rates compose
additively from two-species exchange pairs with a bounded rate function.

User-supplied closures are validated by sampling, never symbolically;
a failed check is a hard error.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ClosureError, DomainError
from . import mixture

__all__ = [
    "DiffusionClosure",
    "ReactionClosure",
    "build_matrix",
    "regularized_matrix",
    "production_rates",
    "validate_diffusion_closure",
    "validate_reaction_closure",
    "closure_sweep",
]

_PSD_TOL = 1e-10
_SUM_TOL = 1e-12


@dataclass(frozen=True)
class DiffusionClosure:
    """Diffusion closure selector: non-diagonal matrix family or Fick scalar.

    ``matrix_fn(theta, Y) -> (n, n) array`` may override the built-in family;
    it is then checked at every sampled point.
    """

    kind: str = "nondiagonal"
    d0: float = 1.0
    a_exp: float = 1.0
    matrix_fn: object = None

    def __post_init__(self):
        if self.kind not in ("nondiagonal", "fick"):
            raise ClosureError(f"unknown diffusion closure kind {self.kind!r}")
        if self.d0 <= 0:
            raise ClosureError("diffusion prefactor d0 must be positive")
        if self.a_exp < 0:
            raise ClosureError("diffusion exponent must be nonnegative")

    def coefficient(self, theta):
        """Scalar d(theta) = d0 * (1 + theta**a)."""
        return self.d0 * (1.0 + np.asarray(theta) ** self.a_exp)

    def matrix(self, theta, Y):
        """Diffusion matrix at (theta, Y); batched over leading axes."""
        if self.kind != "nondiagonal":
            raise ClosureError("matrix closure requested from a Fick closure")
        Y = np.asarray(Y)
        if self.matrix_fn is not None:
            D = np.asarray(self.matrix_fn(theta, Y), dtype=float)
            _check_matrix_point(D, Y, self.d0)
            return D
        d = self.coefficient(theta)
        sigma = Y.sum(axis=-1)
        n = Y.shape[-1]
        D = np.zeros(Y.shape + (n,), dtype=Y.dtype)
        idx = np.arange(n)
        D[..., idx, idx] = 1.0 / Y
        D = D - (1.0 / sigma)[..., None, None]
        return d[..., None, None] * D


@dataclass(frozen=True)
class ReactionClosure:
    """Species production rates built from two-species exchange pairs.

    For each pair (i, j) the exchange rate is K(theta) * (Y_j - Y_i) added
    to omega_i and subtracted from omega_j.  The default rate function
    K(theta) = K0 * theta / (1 + theta) is bounded and differentiable on
    (0, inf).  ``rate_fn(theta)`` may replace it.
    """

    pairs: tuple = ((0, 1),)
    K0: float = 1.0
    r_exp: float = 1.0
    rate_fn: object = None

    def __post_init__(self):
        if self.K0 < 0:
            raise ClosureError("rate prefactor must be nonnegative")
        if self.r_exp <= 0:
            raise ClosureError("lower-bound exponent must be positive")
        for pair in self.pairs:
            if len(pair) != 2 or pair[0] == pair[1]:
                raise ClosureError(f"invalid reaction pair {pair!r}")

    def rate(self, theta):
        if self.rate_fn is not None:
            return np.asarray(self.rate_fn(theta))
        theta = np.asarray(theta)
        return self.K0 * theta / (1.0 + theta)


def build_matrix(theta, Y, closure: DiffusionClosure) -> np.ndarray:
    """Evaluate and validate the diffusion matrix at one state.

    Checks (for user-supplied matrices at every call, for the built-in family
    on demand): symmetry, D Y = 0, positive semidefiniteness and the spectral
    lower bound with constant d0 on the orthogonal complement of (1, ..., 1).
    """
    Y = np.asarray(Y, dtype=float)
    if np.any(Y <= 0):
        raise DomainError("diffusion matrix needs Y_k > 0")
    D = closure.matrix(theta, Y)
    if closure.matrix_fn is None:
        _check_matrix_point(D, Y, closure.d0)
    return D


def _check_matrix_point(D, Y, d0):
    if D.ndim != 2:
        for Dp, Yp in zip(D.reshape(-1, *D.shape[-2:]), Y.reshape(-1, Y.shape[-1])):
            _check_matrix_point(Dp, Yp, d0)
        return
    n = Y.shape[-1]
    scale = max(1.0, float(np.abs(D).max()))
    if not np.allclose(D, D.T, atol=1e-12 * scale, rtol=0):
        raise ClosureError("diffusion matrix is not symmetric")
    if np.any(np.abs(D @ Y) > 1e-13 * scale):
        raise ClosureError("diffusion matrix does not annihilate Y")
    w = np.linalg.eigvalsh(D)
    if w.min() < -_PSD_TOL * scale:
        raise ClosureError("diffusion matrix is not positive semidefinite")
    if n > 1:
        # spectral lower bound on span{1}^perp against the Y^{-1} weight
        rng = np.random.default_rng(12345)
        for _ in range(8):
            x = rng.standard_normal(n)
            x -= x.mean()
            lhs = d0 * float((x * x / Y).sum())
            rhs = float(x @ D @ x)
            if rhs < lhs - 1e-10 * max(1.0, abs(lhs)):
                raise ClosureError("diffusion matrix violates the spectral lower bound")


def regularized_matrix(theta, Y, eps, r, closure: DiffusionClosure):
    """Matrix (or Fick scalar) divided by (sigma_Y + eps)**r."""
    Y = np.asarray(Y)
    sigma = Y.sum(axis=-1)
    if np.any(np.real(sigma + eps) <= 0):
        raise DomainError("sigma_Y + eps must be positive")
    if closure.kind == "fick":
        return closure.coefficient(theta) / (sigma + eps) ** r
    D = closure.matrix(theta, Y)
    return D / ((sigma + eps) ** r)[..., None, None]


def production_rates(s, p, c: ReactionClosure) -> np.ndarray:
    """Species production rates omega_k for the state sample ``s``.

    The mass-weighted sum is checked to vanish; a violation beyond 1e-12
    (possible only for user rate functions / unequal molar masses) is a
    hard error.
    """
    omega = _production_rates(np.float64(s.theta), np.asarray(s.Y, dtype=float), c)
    total = float((p.molar_masses * omega).sum())
    if abs(total) > _SUM_TOL * max(1.0, float(np.abs(omega).max())):
        raise ClosureError("production rates violate mass conservation")
    return omega


def _production_rates(theta, Y, c: ReactionClosure):
    K = c.rate(theta)
    omega = np.zeros(Y.shape, dtype=Y.dtype)
    for i, j in c.pairs:
        r = K * (Y[..., j] - Y[..., i])
        omega[..., i] += r
        omega[..., j] -= r
    return omega


def validate_diffusion_closure(closure, p, n_samples=2000, seed=0, theta_max=100.0):
    """Randomized sweep of all diffusion-closure invariants.

    Samples theta in (0, theta_max] and Y in the open simplex, with
    on-simplex gradient directions, and checks: symmetry, D Y = 0, PSD,
    the spectral lower bound with d0, the entry growth bound
    |Y_i D_ij| <= C (1 + theta**a), flux summation to zero and (for Fick)
    the two-sided coefficient bounds.  Raises ClosureError on failure;
    returns a dict of observed extremes.
    """
    rng = np.random.default_rng(seed)
    n = p.n
    worst = {"entry_bound": 0.0, "flux_sum": 0.0, "matrix_min_eig": np.inf,
             "lower_bound_slack": np.inf, "fick_low": np.inf, "fick_high": 0.0}
    C_entry = closure.d0  # built-in: |Y_i D_ij| = d(theta)|delta_ij - Y_i/sigma| <= d(theta)
    for _ in range(n_samples):
        theta = rng.uniform(1e-3, theta_max)
        Y = rng.dirichlet(np.ones(n) * rng.uniform(0.5, 3.0))
        Y = np.clip(Y, 1e-9, None)
        Y /= Y.sum()
        gY = rng.standard_normal((n, 3))
        gY -= gY.mean(axis=0)
        grow = rng.standard_normal(3)
        gth = rng.standard_normal(3)
        rho = rng.uniform(0.1, 3.0)
        growth = 1.0 + theta ** closure.a_exp
        if closure.kind == "fick":
            Dv = float(closure.coefficient(theta))
            if not closure.d0 <= Dv <= 2.0 * closure.d0 * growth:
                raise ClosureError("Fick coefficient violates its bounds")
            worst["fick_low"] = min(worst["fick_low"], Dv / closure.d0)
            worst["fick_high"] = max(worst["fick_high"], Dv / growth)
            F = -Dv * gY
        else:
            D = build_matrix(theta, Y, closure)
            entry = np.abs(Y[:, None] * D).max() / growth
            worst["entry_bound"] = max(worst["entry_bound"], entry)
            if entry > C_entry * (1.0 + 1e-12):
                raise ClosureError("diffusion matrix entry growth bound violated")
            worst["matrix_min_eig"] = min(worst["matrix_min_eig"],
                                          float(np.linalg.eigvalsh(D).min()))
            x = rng.standard_normal(n)
            x -= x.mean()
            slack = float(x @ D @ x) - closure.d0 * float((x * x / Y).sum())
            worst["lower_bound_slack"] = min(worst["lower_bound_slack"], slack)
            if slack < -1e-10:
                raise ClosureError("diffusion matrix violates the spectral lower bound")
            dk = mixture._driving_forces(np.float64(rho), np.float64(theta), Y,
                                         grow, gth, gY, p)
            F = -Y[:, None] * np.einsum("kl,ld->kd", D, dk)
        fsum = float(np.abs(F.sum(axis=0)).max())
        scale = max(1.0, float(np.abs(F).max()))
        worst["flux_sum"] = max(worst["flux_sum"], fsum / scale)
        if fsum > _SUM_TOL * scale:
            raise ClosureError("diffusion fluxes do not sum to zero")
    return worst


def validate_reaction_closure(reaction, p, n_samples=2000, seed=1,
                              theta_max=100.0):
    """Randomized sweep of the reaction-closure invariants.

    Checks boundedness, the one-sided lower bound omega_k >= -C Y_k**r,
    mass conservation and the Gibbs-weighted dissipation inequality.
    Raises ClosureError on failure; returns observed extremes.
    """
    rng = np.random.default_rng(seed)
    n = p.n
    for i, j in reaction.pairs:
        if abs(p.molar_masses[i] - p.molar_masses[j]) > 1e-14:
            raise ClosureError("built-in reaction pairs need equal molar masses")
    worst = {"mass_sum": 0.0, "gibbs_rate": -np.inf, "lower_bound": np.inf,
             "rate_bound": 0.0}
    C_lb = float(np.max(reaction.rate(np.linspace(1e-3, theta_max, 512))))
    for _ in range(n_samples):
        theta = rng.uniform(1e-3, theta_max)
        Y = rng.dirichlet(np.ones(n))
        Y = np.clip(Y, 1e-9, None)
        Y /= Y.sum()
        rho = rng.uniform(0.1, 3.0)
        omega = _production_rates(np.float64(theta), Y, reaction)
        worst["rate_bound"] = max(worst["rate_bound"], float(np.abs(omega).max()))
        msum = float((p.molar_masses * omega).sum())
        worst["mass_sum"] = max(worst["mass_sum"], abs(msum))
        if abs(msum) > _SUM_TOL:
            raise ClosureError("reaction rates violate mass conservation")
        lb = float((omega + C_lb * Y ** reaction.r_exp).min())
        worst["lower_bound"] = min(worst["lower_bound"], lb)
        if lb < -1e-12:
            raise ClosureError("reaction rate decays a species too fast")
        state = mixture.StateSample(rho=rho, u=np.zeros(3), theta=theta, Y=Y)
        g_k = mixture.species_thermo(state, p)["g_k"]
        gw = float((p.molar_masses * g_k * omega).sum())
        worst["gibbs_rate"] = max(worst["gibbs_rate"], gw)
        if gw > 1e-12 * max(1.0, float(np.abs(g_k).max())):
            raise ClosureError("reaction rates violate the entropy condition")
    return worst


def closure_sweep(p, closure, reaction, n_samples=10000, seed=0, theta_max=100.0):
    """Full randomized validation of both closures; returns observed extremes."""
    out = {}
    out.update(validate_diffusion_closure(closure, p, n_samples=n_samples,
                                          seed=seed, theta_max=theta_max))
    out.update(validate_reaction_closure(reaction, p, n_samples=n_samples,
                                         seed=seed + 1, theta_max=theta_max))
    return out

"""Diffusion-matrix and reaction-closure tests, including the randomized
validation sweeps."""

import numpy as np
import pytest

import steadymix as sm
from steadymix.closures import (closure_sweep, validate_diffusion_closure,
                                validate_reaction_closure)


def params(n=2, **kw):
    base = dict(n=n, gamma=1.5, molar_masses=[1.0] * n, cv=[1.5] * n,
                m_exp=2.0, a_exp=1.0)
    base.update(kw)
    return sm.MixtureParameters(**base)


# ---------------------------------------------------------------------------
# diffusion matrix
# ---------------------------------------------------------------------------

def test_build_matrix_example():
    clo = sm.DiffusionClosure(kind="nondiagonal", d0=0.5, a_exp=0.0)  # d == 1
    D = sm.build_matrix(1.0, np.array([0.5, 0.5]), clo)
    assert np.allclose(D, [[1.0, -1.0], [-1.0, 1.0]], atol=1e-14)
    # D annihilates Y
    assert np.abs(D @ np.array([0.5, 0.5])).max() <= 1e-13
    # quadratic form equality on the mean-free direction
    x = np.array([1.0, -1.0])
    assert x @ D @ x == pytest.approx(4.0, rel=1e-14)
    assert float((x * x / 0.5).sum()) == pytest.approx(4.0)


def test_build_matrix_needs_positive_Y():
    clo = sm.DiffusionClosure(kind="nondiagonal", d0=1.0, a_exp=0.0)
    with pytest.raises(sm.DomainError):
        sm.build_matrix(1.0, np.array([1.0, 0.0]), clo)


def test_build_matrix_rejects_bad_user_matrix():
    bad = sm.DiffusionClosure(kind="nondiagonal", d0=1.0, a_exp=0.0,
                              matrix_fn=lambda th, Y: np.array([[1.0, 0.2],
                                                                [0.0, 1.0]]))
    with pytest.raises(sm.ClosureError):
        sm.build_matrix(1.0, np.array([0.5, 0.5]), bad)


def test_regularized_matrix_scalings():
    clo = sm.DiffusionClosure(kind="nondiagonal", d0=1.0, a_exp=1.0)
    Y = np.array([0.6, 0.4])
    D = sm.build_matrix(2.0, Y, clo)
    # eps = 0 on the simplex: unscaled
    assert np.allclose(sm.regularized_matrix(2.0, Y, 0.0, 1.0, clo), D)
    # r = 0: unscaled for any eps
    assert np.allclose(sm.regularized_matrix(2.0, Y, 0.7, 0.0, clo), D)
    # sigma = 1, eps = 1, r = 1: halved
    assert np.allclose(sm.regularized_matrix(2.0, Y, 1.0, 1.0, clo), D / 2.0)


def test_fick_regularized_scalar():
    clo = sm.DiffusionClosure(kind="fick", d0=2.0, a_exp=0.0)
    val = sm.regularized_matrix(1.0, np.array([0.5, 0.5]), 1.0, 1.0, clo)
    assert val == pytest.approx(2.0 * 2.0 / 2.0)


def test_closure_kind_validation():
    with pytest.raises(sm.ClosureError):
        sm.DiffusionClosure(kind="tensorial")
    with pytest.raises(sm.ClosureError):
        sm.DiffusionClosure(d0=0.0)
    clo = sm.DiffusionClosure(kind="fick")
    with pytest.raises(sm.ClosureError):
        clo.matrix(1.0, np.array([0.5, 0.5]))


# ---------------------------------------------------------------------------
# reaction rates
# ---------------------------------------------------------------------------

def test_production_rates_equilibrium():
    p = params()
    reac = sm.ReactionClosure(pairs=((0, 1),), K0=1.0)
    s = sm.StateSample(rho=1.0, u=np.zeros(2), theta=1.0, Y=[0.5, 0.5])
    assert np.allclose(sm.production_rates(s, p, reac), 0.0)


def test_production_rates_oracle():
    # omega_1 = K(theta) (Y_2 - Y_1); rate_fn = 1 forces K = 1
    p = params()
    reac = sm.ReactionClosure(pairs=((0, 1),), K0=1.0, rate_fn=lambda th: 1.0)
    s = sm.StateSample(rho=1.0, u=np.zeros(2), theta=3.0, Y=[0.2, 0.8])
    om = sm.production_rates(s, p, reac)
    assert np.allclose(om, [0.6, -0.6], atol=1e-15)


def test_production_rates_mass_conservation():
    rng = np.random.default_rng(2)
    p = params(n=4, molar_masses=[1.0] * 4, cv=[1.0] * 4)
    reac = sm.ReactionClosure(pairs=((0, 1), (2, 3), (1, 2)), K0=0.7)
    for _ in range(100):
        Y = rng.dirichlet(np.ones(4))
        s = sm.StateSample(rho=1.0, u=np.zeros(2),
                           theta=rng.uniform(0.1, 10), Y=Y)
        om = sm.production_rates(s, p, reac)
        assert abs(float((p.molar_masses * om).sum())) <= 1e-14


def test_builtin_rate_bounded():
    reac = sm.ReactionClosure(pairs=((0, 1),), K0=2.0)
    th = np.linspace(1e-6, 1e6, 1000)
    K = reac.rate(th)
    assert np.all(K >= 0) and np.all(K <= 2.0)


def test_reaction_lower_bound_builtin():
    # omega_1 >= -K Y_1 for the exchange family
    rng = np.random.default_rng(4)
    p = params()
    reac = sm.ReactionClosure(pairs=((0, 1),), K0=1.5)
    for _ in range(200):
        Y = rng.dirichlet(np.ones(2))
        th = rng.uniform(0.01, 100)
        s = sm.StateSample(rho=1.0, u=np.zeros(2), theta=th, Y=Y)
        om = sm.production_rates(s, p, reac)
        K = float(reac.rate(th))
        assert om[0] >= -K * Y[0] - 1e-14
        assert om[1] >= -K * Y[1] - 1e-14


def test_gibbs_weighted_rate_formula():
    # sum g_k omega_k = K theta (Y2 - Y1) log(Y1/Y2) <= 0
    rng = np.random.default_rng(6)
    p = params(cv=[1.5, 1.5])
    reac = sm.ReactionClosure(pairs=((0, 1),), K0=1.0)
    for _ in range(200):
        Y = np.clip(rng.dirichlet(np.ones(2)), 1e-9, None)
        Y /= Y.sum()
        th = rng.uniform(0.05, 50)
        s = sm.StateSample(rho=rng.uniform(0.1, 3), u=np.zeros(2), theta=th, Y=Y)
        om = sm.production_rates(s, p, reac)
        g_k = sm.species_thermo(s, p)["g_k"]
        val = float((g_k * om).sum())
        K = float(reac.rate(th))
        formula = K * th * (Y[1] - Y[0]) * np.log(Y[0] / Y[1])
        assert val == pytest.approx(formula, rel=1e-10, abs=1e-12)
        assert val <= 1e-12


# ---------------------------------------------------------------------------
# validation sweeps
# ---------------------------------------------------------------------------

def test_validate_diffusion_closure_builtin():
    p = params(n=3, molar_masses=[1.0] * 3, cv=[1.0] * 3)
    for kind in ("nondiagonal", "fick"):
        clo = sm.DiffusionClosure(kind=kind, d0=1.0, a_exp=1.0)
        worst = validate_diffusion_closure(clo, p, n_samples=300, seed=0)
        assert worst["flux_sum"] <= 1e-12


def test_validate_rejects_nonsymmetric_user_matrix():
    p = params()
    bad = sm.DiffusionClosure(kind="nondiagonal", d0=1.0, a_exp=0.0,
                              matrix_fn=lambda th, Y: np.array([[1.0, -0.5],
                                                                [-1.0, 1.0]]))
    with pytest.raises(sm.ClosureError):
        validate_diffusion_closure(bad, p, n_samples=10, seed=0)


def test_validate_reaction_closure_builtin():
    p = params()
    reac = sm.ReactionClosure(pairs=((0, 1),), K0=1.0)
    worst = validate_reaction_closure(reac, p, n_samples=300, seed=1)
    assert worst["mass_sum"] <= 1e-14
    assert worst["gibbs_rate"] <= 1e-12


def test_validate_reaction_rejects_unequal_cv_pair():
    # Gibbs-weighted dissipation fails by sampling when paired species have
    # different specific heats
    p = params(cv=[1.0, 2.0])
    reac = sm.ReactionClosure(pairs=((0, 1),), K0=1.0)
    with pytest.raises(sm.ClosureError):
        validate_reaction_closure(reac, p, n_samples=500, seed=2)


def test_closure_sweep_smoke():
    p = params()
    clo = sm.DiffusionClosure(kind="nondiagonal", d0=1.0, a_exp=1.0)
    reac = sm.ReactionClosure(pairs=((0, 1),), K0=1.0)
    worst = closure_sweep(p, clo, reac, n_samples=200, seed=0)
    assert worst["flux_sum"] <= 1e-12
    assert worst["mass_sum"] <= 1e-14

"""Regularized-quantity and assembly tests: closed-form values, limit
consistency, manufactured exactness, Jacobian oracle."""

import numpy as np
import pytest

import steadymix as sm
from steadymix.approx import (Assembler, regularized_conductivity,
                              regularized_entropy, regularized_flux,
                              regularized_stress, total_energy_residual)
from steadymix.manufactured import ManufacturedProblem


def params(gamma=1.5, **kw):
    base = dict(n=2, gamma=gamma, molar_masses=[1.0, 1.0], cv=[1.5, 1.5],
                m_exp=2.0, a_exp=1.0, mu0=0.1, nu0=0.1, kappa0=1.0,
                M_total=1.0, f_friction=1.0, L_heat=1.0, theta0_wall=1.0)
    base.update(kw)
    return sm.MixtureParameters(**base)


def schedule(**kw):
    base = dict(N=4, eta=1e-3, lam=1e-2, eps=1e-1, delta=1.0, beta=4.0,
                B_exp=6.0, r_exp=1.0, rho_bar=1.0, n_species=2)
    base.update(kw)
    return sm.RegularizationSchedule(**base)


def make_assembler(nx=4, p=None, sched=None, closure=None, reaction=None,
                   degree=5, **kw):
    p = p or params()
    sched = sched or schedule(N=nx)
    closure = closure or sm.DiffusionClosure(kind="nondiagonal", d0=1.0,
                                             a_exp=1.0)
    mesh = sm.build_mesh(1.0, 1.0, nx, nx)
    eb = sm.ElementBasis(mesh, sm.gauss_rule(degree, 2))
    return Assembler(eb, sched, closure, reaction, p, **kw), mesh, eb


# ---------------------------------------------------------------------------
# regularized constitutive quantities
# ---------------------------------------------------------------------------

def test_schedule_ordering_invariant():
    with pytest.raises(sm.ConfigError):
        schedule(eps=2.0)  # eps > delta
    with pytest.raises(sm.ConfigError):
        schedule(eta=0.1)  # eta > lam
    with pytest.raises(sm.ConfigError):
        schedule(beta=2.0)
    sched = schedule()
    assert sched.rho_bar_k == pytest.approx(0.5)
    with pytest.raises(sm.ConfigError):
        sched.check_B(3.0)  # needs B >= 8


def test_regularized_stress_damping():
    p = params()
    gu = np.array([[0.0, 1.0], [0.0, 0.0]])
    S0 = sm.stress(1.0, gu, p)
    S_eta = regularized_stress(1.0, gu, 1.0, p)
    assert np.allclose(S_eta, S0 / 2.0, rtol=1e-14)
    assert np.allclose(regularized_stress(1.0, gu, 0.0, p), S0, rtol=1e-14)
    assert np.all(regularized_stress(2.0, np.zeros((2, 2)), 0.5, p) == 0.0)


def test_regularized_conductivity_value():
    p = params(kappa0=1.0, m_exp=2.0)
    # kappa(1) = 2 plus both delta terms
    assert regularized_conductivity(1.0, 0.1, 1e-3, 6.0, p) \
        == pytest.approx(2.2, rel=1e-14)
    assert regularized_conductivity(1.0, 0.0, 1e-3, 6.0, p) \
        == pytest.approx(2.0, rel=1e-14)
    # monotone nondecreasing in delta
    vals = [regularized_conductivity(0.7, d, 1e-3, 6.0, p)
            for d in (0.0, 0.05, 0.1, 0.2)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert regularized_conductivity(0.7, 0.1, 1e-3, 6.0, p) >= p.kappa(0.7)


def test_regularized_entropy_values():
    p = params()
    s = sm.StateSample(rho=1.0, u=np.zeros(2), theta=1.0, Y=[0.5, 0.5])
    s_k, g_k, s_mix = regularized_entropy(s, 0.0, p)
    th = sm.species_thermo(s, p)
    assert np.allclose(s_k, th["s_k"], rtol=1e-14)
    # defined at rho = 0 for lam > 0; all logs vanish at the unit state
    s0 = sm.StateSample(rho=0.0, u=np.zeros(2), theta=1.0, Y=[1.0, 1.0])
    s_k0, g_k0, _ = regularized_entropy(s0, 1.0, p)
    assert np.allclose(s_k0, 0.0, atol=1e-15)
    assert np.allclose(g_k0, p.cp, rtol=1e-14)
    # g = cp*theta - theta*s identically
    s_k1, g_k1, _ = regularized_entropy(
        sm.StateSample(rho=0.3, u=np.zeros(2), theta=2.0, Y=[0.4, 0.6]), 0.01, p)
    assert np.allclose(g_k1, p.cp * 2.0 - 2.0 * s_k1, rtol=1e-14)
    with pytest.raises(sm.DomainError):
        regularized_entropy(s0, 0.0, p)


def test_regularized_flux_reductions_and_oracle():
    p = params()
    clo = sm.DiffusionClosure(kind="nondiagonal", d0=0.55, a_exp=0.0)  # d = 1.1
    s = sm.StateSample(rho=1.0, u=np.zeros(3), theta=1.0, Y=[0.5, 0.5])
    e1 = np.array([1.0, 0.0, 0.0])
    g = sm.GradientSample(np.zeros(3), np.zeros((3, 3)), np.zeros(3),
                          np.stack([e1, -e1]))
    sched = schedule(eps=0.1, lam=0.01)
    # term-by-term oracle: Dhat = D/(sigma+eps)^r = [[1,-1],[-1,1]];
    # matrix part = -Y_1 (Dhat_11 - Dhat_12) e1 = -e1;
    # barrier part = (eps(rho+1)Y_1 + lam)/Y_1 = (0.1*2*0.5 + 0.01)/0.5 = 0.22
    J = regularized_flux(s, g, sched, clo, p)
    assert np.allclose(J[0], -(1.0 + 0.22) * e1, rtol=1e-12)
    assert np.allclose(J[1], +(1.0 + 0.22) * e1, rtol=1e-12)
    # zero gradients -> zero flux
    g0 = sm.GradientSample(np.zeros(3), np.zeros((3, 3)), np.zeros(3),
                           np.zeros((2, 3)))
    assert np.allclose(regularized_flux(s, g0, sched, clo, p), 0.0)


def test_regularized_flux_limit_is_plain_flux():
    # eps-free, lam-free barrier vanishes; on the simplex sigma = 1 so the
    # matrix part reduces to the unregularized flux
    rng = np.random.default_rng(12)
    p = params()
    clo = sm.DiffusionClosure(kind="nondiagonal", d0=1.2, a_exp=1.0)
    tiny = sm.RegularizationSchedule(N=4, eta=1e-18, lam=1e-17, eps=1e-16,
                                     delta=1e-15, rho_bar=1.0, n_species=2)
    for _ in range(20):
        Y = np.clip(rng.dirichlet(np.ones(2)), 1e-3, None)
        Y /= Y.sum()
        s = sm.StateSample(rho=rng.uniform(0.2, 2), u=np.zeros(3),
                           theta=rng.uniform(0.2, 2), Y=Y)
        gY = rng.standard_normal((2, 3))
        gY -= gY.mean(axis=0)
        g = sm.GradientSample(np.zeros(3), np.zeros((3, 3)), np.zeros(3), gY)
        J = regularized_flux(s, g, tiny, clo, p)
        F = sm.diffusion_flux(s, g, clo, p)
        assert np.allclose(J, F, atol=1e-12)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def test_uniform_state_continuity_block_vanishes():
    asm, mesh, eb = make_assembler()
    sol = sm.DiscreteSolution.uniform(mesh, 2, rho=1.0, theta=1.0)
    R = asm.residual(sol)
    assert np.abs(R.block(0)).max() <= 1e-14


def test_constant_test_function_gives_mass_identity():
    # summing the continuity block equals eps * (int rho - M)
    asm, mesh, eb = make_assembler()
    rng = np.random.default_rng(3)
    sol = sm.DiscreteSolution.uniform(mesh, 2, rho=1.0, theta=1.0)
    sol.data += 0.05 * rng.standard_normal(sol.data.shape)
    sol.data[sol.i_theta] = np.abs(sol.data[sol.i_theta]) + 0.5
    for k in sol.i_Y:
        sol.data[k] = np.abs(sol.data[k]) + 0.3
    sol.apply_constraints()
    R = asm.residual(sol)
    rho_q = eb.values(eb.gather(sol.rho))
    mass_gap = eb.integrate_qp(rho_q) - asm.params.M_total
    assert float(R.block(0).sum()) == pytest.approx(asm.sched.eps * mass_gap,
                                                    rel=1e-10)


def test_manufactured_polynomial_exactness():
    # gamma = 2, constant theta and Y, y-only polynomial rho and u: every
    # integrand is exactly integrated at degree 11, so the residual is
    # roundoff-level
    p = params(gamma=2.0)
    clo = sm.DiffusionClosure(kind="nondiagonal", d0=1.0, a_exp=1.0)
    reac = sm.ReactionClosure(pairs=((0, 1),), K0=1.0)
    prob = ManufacturedProblem(p, 1.0, 1.0, eta=1e-3, lam=1e-2, eps=1e-1,
                               delta=1.0, closure=clo, reaction=reac,
                               kind="poly")
    sched = schedule()
    mesh = sm.build_mesh(1.0, 1.0, 4, 4)
    eb = sm.ElementBasis(mesh, sm.gauss_rule(11, 2))
    asm = Assembler(eb, sched, clo, reac, p, sources=prob.sources())
    sol = prob.interpolate(mesh)
    R = asm.residual(sol)
    assert np.abs(R.reduced()).max() <= 1e-10


def test_manufactured_trig_residual_converges():
    # interpolant of non-polynomial fields: residual is small and shrinks
    # under refinement
    p = params()
    clo = sm.DiffusionClosure(kind="nondiagonal", d0=1.0, a_exp=1.0)
    reac = sm.ReactionClosure(pairs=((0, 1),), K0=1.0)
    prob = ManufacturedProblem(p, 1.0, 1.0, eta=1e-3, lam=1e-2, eps=1e-1,
                               delta=1.0, closure=clo, reaction=reac,
                               kind="trig")
    norms = []
    for nx in (4, 8):
        sched = schedule(N=nx)
        mesh = sm.build_mesh(1.0, 1.0, nx, nx)
        eb = sm.ElementBasis(mesh)
        asm = Assembler(eb, sched, clo, reac, p, sources=prob.sources())
        R = asm.residual(prob.interpolate(mesh))
        norms.append(R.norm())
    assert norms[1] < 0.25 * norms[0]


def test_jacobian_fd_oracle():
    # forward finite differences of the residual along 5 random directions
    asm, mesh, eb = make_assembler(nx=3)
    rng = np.random.default_rng(5)
    sol = sm.DiscreteSolution.uniform(mesh, 2, rho=1.0, theta=1.0)
    x0 = sol.as_vector() + 0.02 * rng.standard_normal(sol.n_dof)
    sol0 = sol.from_vector(x0)
    J = asm.jacobian(sol0)
    R0 = asm.residual(sol0).reduced()
    h = 1e-6
    for _ in range(5):
        v = rng.standard_normal(sol.n_dof)
        R1 = asm.residual(sol0.from_vector(x0 + h * v)).reduced()
        fd = (R1 - R0) / h
        Jv = J @ v
        assert np.linalg.norm(fd - Jv) <= 1e-5 * np.linalg.norm(Jv)


def test_jacobian_sparsity_locality():
    # entries couple only degrees of freedom sharing an element
    asm, mesh, eb = make_assembler(nx=3)
    sol = sm.DiscreteSolution.uniform(mesh, 2, rho=1.0, theta=1.0)
    J = asm.jacobian(sol).tocoo()
    redidx = -np.ones((sol.n_fields, mesh.n_nodes), dtype=int)
    redidx[sol.free_mask] = np.arange(sol.n_dof)
    node_of = np.zeros(sol.n_dof, dtype=int)
    for f in range(sol.n_fields):
        sel = redidx[f] >= 0
        node_of[redidx[f, sel]] = np.flatnonzero(sel)
    share = np.zeros((mesh.n_nodes, mesh.n_nodes), dtype=bool)
    for el in mesh.conn:
        share[np.ix_(el, el)] = True
    assert np.all(share[node_of[J.row], node_of[J.col]])


def test_jacobian_continuity_block_spd_at_rest():
    # with u = 0 the continuity diagonal block is eps*(mass + stiffness):
    # symmetric positive definite
    asm, mesh, eb = make_assembler(nx=3)
    sol = sm.DiscreteSolution.uniform(mesh, 2, rho=1.0, theta=1.0)
    J = asm.jacobian(sol).toarray()
    nr = mesh.n_nodes
    block = J[:nr, :nr]
    assert np.allclose(block, block.T, atol=1e-12)
    w = np.linalg.eigvalsh(0.5 * (block + block.T))
    assert w.min() > 0


def test_domain_error_on_nonpositive_state():
    asm, mesh, eb = make_assembler(nx=3)
    sol = sm.DiscreteSolution.uniform(mesh, 2, rho=1.0, theta=1.0)
    sol.data[sol.i_theta, 0] = -0.5
    with pytest.raises(sm.DomainError):
        asm.residual(sol)


# ---------------------------------------------------------------------------
# total energy balance functional
# ---------------------------------------------------------------------------

def test_total_energy_uniform_closed_form():
    # all fields uniform, u = 0, psi = 1: only the wall exchange, the delta
    # heat source and the eps production terms survive
    p = params()
    sched = schedule()
    clo = sm.DiffusionClosure(kind="nondiagonal", d0=1.0, a_exp=1.0)
    mesh = sm.build_mesh(1.0, 1.0, 4, 4)
    eb = sm.ElementBasis(mesh)
    rho0, th0 = 1.3, 1.2
    sol = sm.DiscreteSolution.uniform(mesh, 2, rho=rho0, theta=th0)
    val = total_energy_residual(sol, sched, clo, p, eb, psi=1.0)
    area = 2.0  # both walls of the unit square
    sc = sched
    expected = ((p.L_heat + sc.delta * th0 ** (sc.B_exp - 1)) * (th0 - 1.0)
                + sc.eps * np.log(th0)
                + sc.lam * th0 ** (sc.B_exp / 2) * np.log(th0)) * area \
        - sc.delta / th0 \
        - sc.delta / (sc.beta - 1) * (sc.eps * sc.beta * sc.rho_bar
                                      * rho0 ** (sc.beta - 1)
                                      - sc.eps * sc.beta * rho0 ** sc.beta) \
        - sc.delta * (2 * sc.eps * sc.rho_bar * rho0 - 2 * sc.eps * rho0 ** 2)
    assert val == pytest.approx(expected, rel=1e-12)


def test_total_energy_vanishes_at_converged_state():
    from steadymix.solver import newton_solve, SolverOptions
    p = params()
    sched = schedule(N=4)
    clo = sm.DiffusionClosure(kind="nondiagonal", d0=1.0, a_exp=1.0)
    reac = sm.ReactionClosure(pairs=((0, 1),), K0=1.0)
    mesh = sm.build_mesh(1.0, 1.0, 4, 4)
    eb = sm.ElementBasis(mesh)
    force = np.array([0.02, 0.0])
    asm = Assembler(eb, sched, clo, reac, p, force=force)
    sol0 = sm.DiscreteSolution.uniform(mesh, 2, rho=1.0, theta=1.0)
    sol, info = newton_solve(sol0, asm, SolverOptions(newton_tol=1e-12))
    from steadymix.approx import total_energy_residual_terms
    terms = total_energy_residual_terms(sol, sched, clo, p, eb, psi=1.0,
                                        force=force)
    val = sum(terms.values())
    scale = sum(abs(t) for t in terms.values())
    assert abs(val) <= 1e-8 * scale
    # audit sensitivity: perturbed states are generically nonzero
    pert = sol.copy()
    pert.data[pert.i_theta] *= 1.001
    val2 = total_energy_residual(pert, sched, clo, p, eb, psi=1.0, force=force)
    assert abs(val2) > 1e-6

"""Damped Newton solver and regularization-parameter continuation.

Newton iterations use the exact (complex-step) Jacobian, a sparse direct
factorization, backtracking on the residual norm and a fraction-to-boundary
rule that keeps temperature and mass fractions strictly positive.  The
continuation driver walks an ordered stage list (mesh refinement first,
then eta, lambda, eps, delta reductions), warm-starting every stage and
bisecting a parameter step when Newton fails.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse.linalg as spla

from .errors import (ConfigError, DomainError, LinearSolveFailure,
                     NonConvergence, PathStalled)
from .mesh import DiscreteSolution, ElementBasis, gauss_rule
from .approx import Assembler, RegularizationSchedule

__all__ = [
    "SolverOptions",
    "ContinuationPath",
    "StageRecord",
    "SolveReport",
    "newton_solve",
    "continue_path",
]

_PARAM_ORDER = ("N", "eta", "lam", "eps", "delta")


@dataclass(frozen=True)
class SolverOptions:
    newton_tol: float = 1e-10
    max_iter: int = 50
    armijo: float = 1e-4
    min_step: float = 1e-10
    boundary_fraction: float = 0.01
    quad_degree: int = 5
    verbose: bool = False
    reproducible: bool = False


@dataclass
class StageRecord:
    index: int
    N: int
    eta: float
    lam: float
    eps: float
    delta: float
    iterations: int
    residual_norm: float
    mass_error: float
    line_search_backtracks: int
    wall_time: float
    monitors: dict = field(default_factory=dict)


@dataclass
class SolveReport:
    stages: list = field(default_factory=list)

    @property
    def accepted(self):
        return len(self.stages)


@dataclass(frozen=True)
class ContinuationPath:
    """Ordered regularization stages.

    Every stage must satisfy the parameter ordering on its own; across
    stages exactly one parameter class changes at a time, in the fixed
    order: N up first, then eta down, lambda down, eps down, delta down.
    """

    stages: tuple

    def __post_init__(self):
        stages = tuple(self.stages)
        object.__setattr__(self, "stages", stages)
        if not stages:
            raise ConfigError("continuation path needs at least one stage")
        last_class = -1
        for a, b in zip(stages, stages[1:]):
            changed = [k for k in _PARAM_ORDER if getattr(a, k) != getattr(b, k)]
            fixed = [k for k in ("beta", "B_exp", "r_exp", "rho_bar", "n_species")
                     if getattr(a, k) != getattr(b, k)]
            if fixed:
                raise ConfigError(f"{fixed[0]} must stay fixed along the path")
            if len(changed) != 1:
                raise ConfigError(
                    "each continuation step must change exactly one parameter")
            cls = _PARAM_ORDER.index(changed[0])
            if cls < last_class:
                raise ConfigError(
                    "continuation must shrink parameters in the order "
                    "N, eta, lam, eps, delta")
            if changed[0] == "N":
                if b.N <= a.N:
                    raise ConfigError("mesh level must increase along the path")
            elif getattr(b, changed[0]) >= getattr(a, changed[0]):
                raise ConfigError(f"{changed[0]} must decrease along the path")
            last_class = cls


def _positive_rows(sol):
    """Flat indices (into the free vector) of fields kept positive."""
    rows = np.zeros(sol.n_fields, dtype=bool)
    rows[sol.i_theta] = True
    for k in sol.i_Y:
        rows[k] = True
    per_field = sol.free_mask.sum(axis=1)
    idx = []
    start = 0
    for f in range(sol.n_fields):
        if rows[f]:
            idx.append(np.arange(start, start + per_field[f]))
        start += per_field[f]
    return np.concatenate(idx) if idx else np.array([], dtype=int)


def _mass_error(sol, asm):
    return asm.mass_error(sol)


def newton_solve(initial: DiscreteSolution, asm: Assembler,
                 opts: SolverOptions = SolverOptions()):
    """Damped Newton iteration for one regularization stage.

    Returns the converged solution and an info dict (iterations, final
    residual norm, mass error, backtrack count).  Raises DomainError on an
    inadmissible initial state, LinearSolveFailure on a singular Jacobian
    and NonConvergence when max_iter or the minimal step is exhausted.
    """
    sol = initial.copy()
    if not sol.positivity_ok():
        raise DomainError("initial state must have positive theta and Y nodal values")
    scale = np.sqrt(sol.n_dof)
    pos_rows = _positive_rows(sol)
    frac = opts.boundary_fraction

    R = asm.residual(sol)
    rnorm = R.norm()
    backtracks = 0
    for it in range(opts.max_iter + 1):
        mass_err = _mass_error(sol, asm)
        if rnorm <= opts.newton_tol * scale and \
                mass_err <= opts.newton_tol / asm.sched.eps:
            return sol, {"iterations": it, "residual_norm": rnorm,
                         "mass_error": mass_err, "backtracks": backtracks}
        if it == opts.max_iter:
            break
        J = asm.jacobian(sol)
        try:
            lu = spla.splu(J.tocsc())
            dx = lu.solve(-R.reduced())
        except RuntimeError as exc:
            raise LinearSolveFailure(str(exc)) from exc
        if not np.all(np.isfinite(dx)):
            raise LinearSolveFailure("non-finite Newton correction")

        x = sol.as_vector()
        alpha = 1.0
        if pos_rows.size:
            v = x[pos_rows]
            dv = dx[pos_rows]
            shrink = dv < 0
            if np.any(shrink):
                amax = np.min((1.0 - frac) * v[shrink] / -dv[shrink])
                alpha = min(1.0, float(amax))
        accepted = False
        while alpha >= opts.min_step:
            try:
                trial = sol.from_vector(x + alpha * dx)
                if not trial.positivity_ok():
                    raise DomainError("positivity lost")
                R_trial = asm.residual(trial)
                rn_trial = R_trial.norm()
                if np.isfinite(rn_trial) and \
                        rn_trial <= (1.0 - opts.armijo * alpha) * rnorm:
                    sol, R, rnorm = trial, R_trial, rn_trial
                    accepted = True
                    break
            except DomainError:
                pass
            alpha *= 0.5
            backtracks += 1
        if not accepted:
            raise NonConvergence("line search stalled",
                                 residual_norm=rnorm, iterations=it)
        if opts.verbose:
            print(f"    newton it {it + 1}: |R| = {rnorm:.3e}  (step {alpha:.2e})")
    raise NonConvergence("Newton did not reach the tolerance",
                         residual_norm=rnorm, iterations=opts.max_iter)


def _geometric_mid(a: RegularizationSchedule, b: RegularizationSchedule):
    """Stage halfway (geometrically) between a and b in the one changing
    parameter; mesh refinements cannot be bisected."""
    changed = [k for k in _PARAM_ORDER if getattr(a, k) != getattr(b, k)][0]
    if changed == "N":
        return None
    mid = float(np.sqrt(getattr(a, changed) * getattr(b, changed)))
    return replace(b, **{changed: mid})


def continue_path(path: ContinuationPath, params, closure, reaction,
                  mesh_factory, opts: SolverOptions = SolverOptions(),
                  force=None, monitor_fn=None, initial=None,
                  max_bisections=5):
    """Warm-started Newton continuation along ``path``.

    ``mesh_factory(N)`` builds the stage mesh; ``monitor_fn(sol, sched, eb)``
    (optional) returns a dict recorded per accepted stage.  Returns the
    final solution and a SolveReport.  Raises PathStalled when a stage
    cannot be reached even after ``max_bisections`` parameter bisections.
    """
    report = SolveReport()
    sol = None
    eb = None
    cur_N = None
    cur_sched = None

    def make_eb(N):
        mesh = mesh_factory(N)
        return ElementBasis(mesh, gauss_rule(opts.quad_degree, mesh.dim))

    for idx, target in enumerate(path.stages):
        pending = [target]
        bisections = 0
        while pending:
            sched = pending[-1]
            if cur_N != sched.N:
                new_eb = make_eb(sched.N)
                if sol is not None:
                    sol = sol.interpolate_to(new_eb.mesh)
                eb = new_eb
                cur_N = sched.N
            if sol is None:
                theta_init = float(np.mean(params.theta0(eb.mesh.node_coords[eb.mesh.wall_nodes])))
                sol = DiscreteSolution.uniform(
                    eb.mesh, params.n, rho=sched.rho_bar, theta=theta_init)
            asm = Assembler(eb, sched, closure, reaction, params, force=force)
            t0 = time.perf_counter()
            try:
                sol_new, info = newton_solve(sol, asm, opts)
            except NonConvergence:
                if cur_sched is None:
                    raise PathStalled("first stage did not converge")
                mid = _geometric_mid(cur_sched, sched)
                if mid is None or bisections >= max_bisections:
                    raise PathStalled(
                        f"stage {idx} unreachable after {bisections} bisections")
                bisections += 1
                pending.append(mid)
                continue
            wall = 0.0 if opts.reproducible else time.perf_counter() - t0
            sol = sol_new
            cur_sched = sched
            pending.pop()
            is_target = not pending
            if opts.verbose:
                print(f"  stage {idx}{'' if is_target else ' (bisection)'}: "
                      f"N={sched.N} eta={sched.eta:.3g} lam={sched.lam:.3g} "
                      f"eps={sched.eps:.3g} delta={sched.delta:.3g} "
                      f"-> {info['iterations']} its, |R|={info['residual_norm']:.3e}")
            if is_target:
                monitors = monitor_fn(sol, sched, eb) if monitor_fn else {}
                report.stages.append(StageRecord(
                    index=idx, N=sched.N, eta=sched.eta, lam=sched.lam,
                    eps=sched.eps, delta=sched.delta,
                    iterations=info["iterations"],
                    residual_norm=info["residual_norm"],
                    mass_error=info["mass_error"],
                    line_search_backtracks=info["backtracks"],
                    wall_time=wall, monitors=monitors))
    return sol, report

"""Outer fixed point coupling the population flow with the backward value solve.

The map at the heart of the solver sends a candidate initial value profile
Phi to the time-zero slice of the value function computed along the
population trajectory that Phi seeds:

    F: Phi  ->  u(., 0),
        where (X, P) flow from P(0) = Phi'(X_0)
        and u solves the backward equation along (X, X').

Solutions of the coupled game are fixed points of F.  They are searched by
damped Picard iteration; existence theory guarantees a fixed point but no
contraction rate, so non-convergence is a reportable outcome, never hidden.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .ensembles import Ensemble, TrajectoryEnsemble, ensemble_distance
from .errors import XmfgError
from .families import HamiltonianFamily, solve_velocity
from .flow import integrate_flow
from .hjb import (
    AnalyticSlice,
    GridConfig,
    RegularityReport,
    ValueGrid,
    ValueSlice,
    regularity_report,
    solve_backward,
)

__all__ = [
    "SolverConfig",
    "ProblemSpec",
    "MfgSolution",
    "canonical_grid",
    "apply_F",
    "solve_mfg",
    "master_value",
    "master_consistency_residual",
    "uniqueness_probe",
    "UniquenessProbeResult",
]


@dataclass(frozen=True)
class SolverConfig:
    """Discretization and outer-iteration knobs."""

    n_particles: int = 64
    nx: int = 201
    time_steps: int = 200
    nv: int = 201
    v_max: float | None = None  # None selects from coercivity
    damping: float = 0.5
    tol_fix: float = 1e-6
    tol_traj: float = 1e-6
    max_outer: int = 60

    def __post_init__(self):
        if min(self.n_particles, self.nx, self.time_steps, self.nv, self.max_outer) < 1:
            raise ValueError("all solver sizes must be positive")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping must lie in (0, 1]")
        if self.v_max is not None and self.v_max <= 0:
            raise ValueError("v_max must be positive when given")
        if self.tol_fix <= 0 or self.tol_traj <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class ProblemSpec:
    """A game instance: cost family, horizon, initial population, exponent."""

    family: HamiltonianFamily
    horizon: float
    initial: Ensemble
    q: float = 2.0

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.initial.dim != 1:
            raise ValueError("solver grid is 1-d; initial ensemble must have dim 1")
        if self.initial.q != self.q:
            object.__setattr__(self, "initial", Ensemble(self.initial.samples, q=self.q))


@dataclass
class MfgSolution:
    """Best iterate of the damped Picard run plus its full residual record."""

    value: ValueGrid
    traj: TrajectoryEnsemble
    residual_history: list[tuple[int, float, float]]
    converged: bool
    final_phi_residual: float
    final_traj_residual: float
    iterations: int
    regularity_history: list[RegularityReport] = field(default_factory=list)

    @property
    def phi(self) -> ValueSlice:
        return self.value.time_slice(0)


def _auto_v_max(fam: HamiltonianFamily, x0: Ensemble) -> float:
    """Coercivity-based control cap: controls beyond it are never optimal.

    Finds the smallest speed for which the running cost at speed v dominates
    the flat cost plus the terminal slope times v on probe points around the
    initial hull, then doubles it.
    """
    lo, hi = float(np.min(x0.samples)), float(np.max(x0.samples))
    center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    half = max(half, 0.5)
    probes = np.linspace(center - 1.5 * half, center + 1.5 * half, 9)
    psi_vals = np.asarray(fam.terminal(probes, x0), dtype=float)
    lip = float(np.max(np.abs(np.diff(psi_vals))) / (probes[1] - probes[0]))
    lip = max(lip, 1e-6)
    rest = Ensemble(np.zeros_like(x0.samples), q=x0.q)
    base = np.asarray(fam.lagrangian(probes, 0.0, x0, rest), dtype=float)
    for v in np.geomspace(1e-3, 1e6, 400):
        cost = np.asarray(fam.lagrangian(probes, v, x0, rest), dtype=float)
        cost_neg = np.asarray(fam.lagrangian(probes, -v, x0, rest), dtype=float)
        if np.all(cost >= base + lip * v) and np.all(cost_neg >= base + lip * v):
            return 2.0 * v
    raise XmfgError("could not select v_max from coercivity; declare it explicitly")


def _state_dependent(fam: HamiltonianFamily) -> bool:
    probe = fam.control_speed(np.array([2.0]), np.array([1.0]))
    return not np.allclose(probe, 1.0)


def canonical_grid(
    problem: ProblemSpec,
    cfg: SolverConfig,
    traj0: TrajectoryEnsemble | None = None,
    include: tuple[float, float] | None = None,
) -> GridConfig:
    """Deterministic spatial grid for a problem/config pair.

    Linear dynamics pad the initial hull by v_max * T + 3 dx so no
    characteristic with admissible speed can exit; the padding belt is
    sacrificial (saturation there is tolerated).  State-scaled dynamics
    instead bracket the hull swept by the seed trajectory multiplicatively,
    keeping the domain away from x = 0.
    """
    fam = problem.family
    x0 = problem.initial
    v_max = cfg.v_max if cfg.v_max is not None else _auto_v_max(fam, x0)
    lo, hi = float(np.min(x0.samples)), float(np.max(x0.samples))
    if include is not None:
        lo, hi = min(lo, float(include[0])), max(hi, float(include[1]))
    if not _state_dependent(fam):
        pad = v_max * problem.horizon
        dx0 = (hi - lo + 2 * pad) / (cfg.nx - 1)
        pad += 3 * dx0
        return GridConfig(
            x_lo=lo - pad,
            x_hi=hi + pad,
            nx=cfg.nx,
            nv=cfg.nv,
            v_max=v_max,
            core_lo=lo - 3 * dx0,
            core_hi=hi + 3 * dx0,
        )
    if traj0 is None:
        phi0 = AnalyticSlice(lambda xq: fam.terminal_gradient(xq, x0))
        traj0 = integrate_flow(fam, x0, phi0, problem.horizon, cfg.time_steps)
    swept_lo = float(np.min(traj0.states))
    swept_hi = float(np.max(traj0.states))
    if include is not None:
        swept_lo = min(swept_lo, float(include[0]))
        swept_hi = max(swept_hi, float(include[1]))
    if swept_lo <= 0:
        raise XmfgError("state-scaled dynamics swept through x <= 0; problem ill-posed here")
    x_lo, x_hi = 0.5 * swept_lo, 1.5 * swept_hi
    dx0 = (x_hi - x_lo) / (cfg.nx - 1)
    return GridConfig(
        x_lo=max(x_lo - 3 * dx0, 0.25 * swept_lo),
        x_hi=x_hi + 3 * dx0,
        nx=cfg.nx,
        nv=cfg.nv,
        v_max=v_max,
        core_lo=swept_lo,
        core_hi=swept_hi,
    )


def _compose_once(
    problem: ProblemSpec, phi: ValueSlice, grid: GridConfig, cfg: SolverConfig
) -> tuple[ValueGrid, TrajectoryEnsemble]:
    traj = integrate_flow(
        problem.family, problem.initial, phi, problem.horizon, cfg.time_steps
    )
    vg = solve_backward(problem.family, traj, grid)
    return vg, traj


def _reintegrate_feedback(
    problem: ProblemSpec, vg: ValueGrid, cfg: SolverConfig
) -> TrajectoryEnsemble:
    """Forward sweep of the feedback dynamics along a frozen value grid.

    Plays the optimal control read off the solved value function:
    X' = G(X, Du(X, t), X), with the gradient rows interpolated linearly in
    time for the RK4 stages.
    """
    fam = problem.family
    x0 = problem.initial
    steps = cfg.time_steps
    times = np.linspace(0.0, problem.horizon, steps + 1)
    dt = problem.horizon / steps
    n = x0.n
    states = np.empty((steps + 1, n, 1))
    velocities = np.empty_like(states)
    costates = np.empty_like(states)
    x = x0.samples[:, 0].copy()

    def rate(xa, m_lo, w):
        grad_row = (1 - w) * vg.grad[m_lo] + w * vg.grad[min(m_lo + 1, steps)]
        p = np.interp(xa, vg.nodes, grad_row)
        z = solve_velocity(fam, xa, Ensemble(p, q=problem.q), Ensemble(xa, q=problem.q))
        return z.samples[:, 0], p

    for m in range(steps + 1):
        z, p = rate(x, m, 0.0)
        states[m, :, 0] = x
        velocities[m, :, 0] = z
        costates[m, :, 0] = p
        if m == steps:
            break
        k1, _ = rate(x, m, 0.0)
        k2, _ = rate(x + 0.5 * dt * k1, m, 0.5)
        k3, _ = rate(x + 0.5 * dt * k2, m, 0.5)
        k4, _ = rate(x + dt * k3, m, 1.0)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return TrajectoryEnsemble(
        times=times, states=states, velocities=velocities, costates=costates, q=problem.q
    )


def apply_F(problem: ProblemSpec, phi, cfg: SolverConfig) -> ValueSlice:
    """One application of the fixed-point map: flow from Phi, then solve back.

    ``phi`` may be a grid slice or any object exposing ``gradient_at``.
    The returned slice lives on the canonical grid of the problem/config.
    """
    grid = canonical_grid(problem, cfg)
    if not isinstance(phi, ValueSlice):
        nodes = grid.nodes()
        phi = ValueSlice(nodes, np.asarray(phi.value_at(nodes), dtype=float))
    vg, _ = _compose_once(problem, phi, grid, cfg)
    return vg.time_slice(0)


def _trajectory_gap(a: TrajectoryEnsemble, b: TrajectoryEnsemble, q: float) -> float:
    gaps = [
        ensemble_distance(a.ensemble(m), b.ensemble(m), r=q) for m in range(a.steps + 1)
    ]
    return float(max(gaps))


def solve_mfg(
    problem: ProblemSpec,
    cfg: SolverConfig,
    phi0=None,
    include: tuple[float, float] | None = None,
    strategy: str = "value",
) -> MfgSolution:
    """Damped Picard iteration Phi_{k+1} = (1 - lam) Phi_k + lam F(Phi_k).

    Starts from Phi_0 = psi(., X_0) unless ``phi0`` (array on the canonical
    nodes, or callable of the nodes) is supplied.  Convergence requires both
    the fixed-point residual ||F(Phi_k) - Phi_k||_inf <= tol_fix and the
    trajectory residual max_t W_q(X_k, X_{k-1}) <= tol_traj; reaching
    max_outer first returns the best iterate with ``converged=False``.

    ``strategy="trajectory"`` switches to the fallback iteration that holds
    the population path fixed, solves the value equation along it, then
    replays the feedback dynamics; it can stabilize problems for which the
    profile iteration stalls.
    """
    if strategy not in ("value", "trajectory"):
        raise ValueError("strategy must be 'value' or 'trajectory'")
    fam = problem.family
    grid = canonical_grid(problem, cfg, include=include)
    nodes = grid.nodes()
    if phi0 is None:
        phi_vals = np.asarray(fam.terminal(nodes, problem.initial), dtype=float)
    elif callable(phi0):
        phi_vals = np.asarray(phi0(nodes), dtype=float)
    else:
        phi_vals = np.asarray(phi0, dtype=float)
        if phi_vals.shape != nodes.shape:
            raise ValueError("phi0 array must match the canonical grid nodes")

    history: list[tuple[int, float, float]] = []
    reg_history: list[RegularityReport] = []
    best = None
    best_score = math.inf
    prev_traj = None
    prev_slice = None
    converged = False
    fix_res = math.inf
    traj_res = math.inf
    iterations = 0
    traj = None

    for k in range(1, cfg.max_outer + 1):
        iterations = k
        if strategy == "value":
            phi_slice = ValueSlice(nodes, phi_vals)
            vg, traj = _compose_once(problem, phi_slice, grid, cfg)
            fix_res = float(np.max(np.abs(vg.u[0] - phi_vals)))
        else:
            if traj is None:
                seed = ValueSlice(nodes, phi_vals)
                traj = integrate_flow(fam, problem.initial, seed, problem.horizon, cfg.time_steps)
            vg = solve_backward(fam, traj, grid)
            fix_res = (
                float(np.max(np.abs(vg.u[0] - prev_slice))) if prev_slice is not None else math.inf
            )
            prev_slice = vg.u[0]
        traj_res = (
            _trajectory_gap(traj, prev_traj, problem.q) if prev_traj is not None else math.nan
        )
        history.append((k, cfg.damping * fix_res if strategy == "value" else fix_res, traj_res))
        reg_history.append(regularity_report(vg))
        if fix_res <= best_score:
            best_score = fix_res
            best = (vg, traj, fix_res, traj_res)
        if k >= 2 and fix_res <= cfg.tol_fix and traj_res <= cfg.tol_traj:
            converged = True
            break
        prev_traj = traj
        if strategy == "value":
            phi_vals = (1.0 - cfg.damping) * phi_vals + cfg.damping * vg.u[0]
        else:
            replay = _reintegrate_feedback(problem, vg, cfg)
            lam = cfg.damping
            traj = TrajectoryEnsemble(
                times=replay.times,
                states=(1 - lam) * traj.states + lam * replay.states,
                velocities=(1 - lam) * traj.velocities + lam * replay.velocities,
                costates=(1 - lam) * traj.costates + lam * replay.costates,
                q=problem.q,
            )

    vg, traj, fix_res, traj_res = best
    return MfgSolution(
        value=vg,
        traj=traj,
        residual_history=history,
        converged=converged,
        final_phi_residual=fix_res,
        final_traj_residual=traj_res,
        iterations=iterations,
        regularity_history=reg_history,
    )


def master_value(problem: ProblemSpec, x: float, y: Ensemble, t: float, cfg: SolverConfig):
    """Candidate master-equation value: solve the game on [t, T] from Y.

    The restart time snaps to the solver time grid so the sub-problem shares
    the step size; the value is read at x on the time-t slice (time 0 of the
    sub-problem).  At t -> T this reproduces the terminal cost.
    """
    if not (0.0 <= t < problem.horizon):
        raise ValueError("master evaluation requires 0 <= t < horizon")
    dt = problem.horizon / cfg.time_steps
    m_t = min(int(round(t / dt)), cfg.time_steps - 1)
    sub_steps = cfg.time_steps - m_t
    sub_horizon = sub_steps * dt
    sub_problem = ProblemSpec(
        family=problem.family, horizon=sub_horizon, initial=y, q=problem.q
    )
    sub_cfg = replace(cfg, time_steps=sub_steps)
    sol = solve_mfg(sub_problem, sub_cfg, include=(x, x))
    return float(sol.value.value_at(np.asarray([x], dtype=float), 0)[0])


def master_consistency_residual(
    sol: MfgSolution, problem: ProblemSpec, cfg: SolverConfig, probe_points
) -> float:
    """max over probes (x, t) of |u(x, t) - V(x, X(t), t)|.

    Both sides approximate the same value, one through the full-horizon
    solve, the other through a restart at time t from the solved population
    state; the gap stacks the two discretizations.
    """
    dt = problem.horizon / cfg.time_steps
    worst = 0.0
    for x, t in probe_points:
        m_t = min(int(round(float(t) / dt)), cfg.time_steps - 1)
        t_snap = m_t * dt
        u_here = float(sol.value.value_at(np.asarray([x], dtype=float), m_t)[0])
        v_here = master_value(problem, float(x), sol.traj.ensemble(m_t), t_snap, cfg)
        worst = max(worst, abs(u_here - v_here))
    return worst


@dataclass(frozen=True)
class UniquenessProbeResult:
    """Spread of fixed points reached from randomized initial profiles."""

    status: str  # "conclusive" | "inconclusive"
    max_pairwise: float
    run_residuals: list[float]


def uniqueness_probe(
    problem: ProblemSpec,
    cfg: SolverConfig,
    k: int = 3,
    rng_seed: int = 0,
    lipschitz_cap: float = 2.0,
) -> UniquenessProbeResult:
    """Solve from k random Lipschitz-bounded initial profiles and compare.

    All runs converging to (numerically) the same profile is evidence for
    uniqueness; any non-converged run makes the probe inconclusive rather
    than a claim either way.
    """
    rng = np.random.default_rng(rng_seed)
    grid = canonical_grid(problem, cfg)
    nodes = grid.nodes()
    finals = []
    residuals = []
    for _ in range(k):
        amps = rng.uniform(-1.0, 1.0, size=3)
        freqs = rng.uniform(0.2, 1.5, size=3)
        phases = rng.uniform(0.0, 2 * np.pi, size=3)
        weight = np.sum(np.abs(amps * freqs))
        scale = lipschitz_cap / max(weight, 1e-12)
        phi0 = scale * np.sum(
            amps[:, None] * np.sin(freqs[:, None] * nodes[None, :] + phases[:, None]),
            axis=0,
        )
        try:
            sol = solve_mfg(problem, cfg, phi0=phi0)
        except XmfgError:
            # a run that blows up or saturates is no evidence either way
            residuals.append(math.nan)
            return UniquenessProbeResult("inconclusive", math.nan, residuals)
        residuals.append(sol.final_phi_residual)
        if not sol.converged:
            return UniquenessProbeResult("inconclusive", math.nan, residuals)
        finals.append(sol.value.u[0])
    worst = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            worst = max(worst, float(np.max(np.abs(finals[i] - finals[j]))))
    return UniquenessProbeResult("conclusive", worst, residuals)

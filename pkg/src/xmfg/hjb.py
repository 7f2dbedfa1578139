"""Backward semi-Lagrangian sweep for the frozen-coupling value equation.

Along a given population trajectory (X(t), X'(t)) the value function solves

    -u_t + H(x, u_x, X(t), X'(t)) = 0,   u(., T) = psi(., X(T)),

on a 1-d grid.  Each backward step minimizes over a finite control set

    u[m][i] = min_v  dt * L(x_i, v, X[m], V[m]) + I[u[m+1]](x_i + f(x_i, v) dt)

with piecewise-linear interpolation I clamped at the domain edges and ties
broken toward the smallest control index.  The scheme is monotone: raising
the terminal data can never lower any value.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .ensembles import TrajectoryEnsemble
from .errors import ControlSaturationError, DomainTooSmallError
from .families import HamiltonianFamily

logger = logging.getLogger(__name__)

__all__ = [
    "GridConfig",
    "ClampStats",
    "ValueSlice",
    "AnalyticSlice",
    "ValueGrid",
    "solve_backward",
    "gradient_at",
    "value_at",
    "regularity_report",
    "RegularityReport",
]

#: queries may clamp on at most this fraction of calls before escalating
CLAMP_ESCALATION_FRACTION = 0.01
#: clamp bookkeeping only escalates once at least this many queries were seen
CLAMP_ESCALATION_FLOOR = 100
#: per-slice saturation threshold on core nodes
SATURATION_FRACTION = 0.01


@dataclass(frozen=True)
class GridConfig:
    """Spatial grid plus control-set discretization for the backward sweep.

    ``core_lo``/``core_hi`` mark the sub-interval whose values are considered
    authoritative; the belt outside it is sacrificial padding where the
    control box may pinch without invalidating the solve.  They default to
    the full domain.
    """

    x_lo: float
    x_hi: float
    nx: int
    nv: int
    v_max: float
    core_lo: float | None = None
    core_hi: float | None = None

    def __post_init__(self):
        if not (self.x_hi > self.x_lo):
            raise ValueError("grid requires x_hi > x_lo")
        if self.nx < 3 or self.nv < 2:
            raise ValueError("grid requires nx >= 3 and nv >= 2")
        if not (self.v_max > 0):
            raise ValueError("v_max must be positive")

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / (self.nx - 1)

    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.nx)

    def controls(self) -> np.ndarray:
        return np.linspace(-self.v_max, self.v_max, self.nv)

    def core_interval(self) -> tuple[float, float]:
        lo = self.x_lo if self.core_lo is None else self.core_lo
        hi = self.x_hi if self.core_hi is None else self.core_hi
        return lo, hi


class ClampStats:
    """Counts out-of-domain queries and escalates past the tolerated share."""

    def __init__(self, label: str):
        self.label = label
        self.queries = 0
        self.clamped = 0

    def record(self, n_queries: int, n_clamped: int):
        if n_clamped and not self.clamped:
            logger.warning("%s: query outside the grid, clamping to the edge", self.label)
        self.queries += int(n_queries)
        self.clamped += int(n_clamped)
        if (
            self.queries >= CLAMP_ESCALATION_FLOOR
            and self.clamped > CLAMP_ESCALATION_FRACTION * self.queries
        ):
            raise DomainTooSmallError(
                f"{self.label}: {self.clamped}/{self.queries} queries fell outside "
                "the grid; enlarge the spatial domain"
            )


def _interp_clamped(xq: np.ndarray, x: np.ndarray, y: np.ndarray, stats: ClampStats | None):
    xq = np.asarray(xq, dtype=float)
    if stats is not None:
        outside = np.count_nonzero((xq < x[0]) | (xq > x[-1]))
        stats.record(xq.size, outside)
    return np.interp(xq, x, y)


def _central_gradient(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    g = np.empty_like(u)
    dx = x[1] - x[0]
    g[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2 * dx)
    g[..., 0] = (u[..., 1] - u[..., 0]) / dx
    g[..., -1] = (u[..., -1] - u[..., -2]) / dx
    return g


@dataclass
class ValueSlice:
    """One time slice of the value function with its spatial gradient."""

    x: np.ndarray
    u: np.ndarray
    grad: np.ndarray | None = None
    stats: ClampStats = field(default_factory=lambda: ClampStats("value slice"))

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if self.grad is None:
            self.grad = _central_gradient(self.x, self.u)
        else:
            self.grad = np.asarray(self.grad, dtype=float)

    def value_at(self, xq):
        return _interp_clamped(xq, self.x, self.u, self.stats)

    def gradient_at(self, xq):
        return _interp_clamped(xq, self.x, self.grad, self.stats)

    def blend(self, other: "ValueSlice", weight: float) -> "ValueSlice":
        """(1 - weight) * self + weight * other on shared nodes."""
        return ValueSlice(self.x, (1.0 - weight) * self.u + weight * other.u)


class AnalyticSlice:
    """Duck-typed value slice backed by callables; handy seed for the flow."""

    def __init__(self, gradient, value=None):
        self._gradient = gradient
        self._value = value

    def value_at(self, xq):
        if self._value is None:
            raise ValueError("analytic slice declared no value callable")
        return np.asarray(self._value(np.asarray(xq, dtype=float)), dtype=float)

    def gradient_at(self, xq):
        xq = np.asarray(xq, dtype=float)
        return np.broadcast_to(np.asarray(self._gradient(xq), dtype=float), xq.shape).copy()


@dataclass
class ValueGrid:
    """Value function and spatial gradient on the space-time grid."""

    config: GridConfig
    times: np.ndarray
    u: np.ndarray
    grad: np.ndarray
    stats: ClampStats = field(default_factory=lambda: ClampStats("value grid"))

    @property
    def x(self) -> np.ndarray:
        return self.nodes

    def __post_init__(self):
        self.nodes = self.config.nodes()
        self.times = np.asarray(self.times, dtype=float)

    @property
    def horizon(self) -> float:
        return float(self.times[-1] - self.times[0])

    def time_slice(self, m: int) -> ValueSlice:
        return ValueSlice(self.nodes, self.u[m], self.grad[m], stats=self.stats)

    def value_at(self, xq, t_index: int):
        return _interp_clamped(xq, self.nodes, self.u[t_index], self.stats)

    def gradient_at(self, xq, t_index: int):
        return _interp_clamped(xq, self.nodes, self.grad[t_index], self.stats)


def gradient_at(vg: ValueGrid, x, t_index: int):
    """Linear interpolation of the stored gradient row at x (clamped)."""
    return vg.gradient_at(x, t_index)


def value_at(vg: ValueGrid, x, t_index: int):
    return vg.value_at(x, t_index)


def solve_backward(
    fam: HamiltonianFamily, traj: TrajectoryEnsemble, cfg: GridConfig
) -> ValueGrid:
    """Backward semi-Lagrangian sweep along the frozen population trajectory.

    Raises :class:`ControlSaturationError` when the control argmin sits at
    +-v_max on more than 1% of the core nodes of any slice, which signals a
    control box too small for the problem.
    """
    x = cfg.nodes()
    controls = cfg.controls()
    steps = traj.steps
    dt = traj.dt
    u = np.empty((steps + 1, cfg.nx))
    u[steps] = fam.terminal(x, traj.ensemble(steps))

    speed = fam.control_speed(x[None, :], controls[:, None])  # (nv, nx)
    feet = (x[None, :] + dt * speed).ravel()
    core_lo, core_hi = cfg.core_interval()
    core = (x >= core_lo) & (x <= core_hi)
    core[[0, -1]] = False
    n_core = max(int(np.count_nonzero(core)), 1)

    for m in range(steps - 1, -1, -1):
        x_ens = traj.ensemble(m)
        z_ens = traj.velocity_ensemble(m)
        running = fam.lagrangian(x[None, :], controls[:, None], x_ens, z_ens)
        cost = dt * running + np.interp(feet, x, u[m + 1]).reshape(cfg.nv, cfg.nx)
        best = np.argmin(cost, axis=0)  # first minimum = smallest control
        u[m] = cost[best, np.arange(cfg.nx)]
        pinned = ((best == 0) | (best == cfg.nv - 1)) & core
        frac = np.count_nonzero(pinned) / n_core
        if frac > SATURATION_FRACTION:
            raise ControlSaturationError(
                f"control argmin pinned at +-v_max on {frac:.1%} of core nodes "
                f"at t={traj.times[m]:.4g}; increase v_max beyond {cfg.v_max:g}"
            )

    grad = _central_gradient(x, u)
    return ValueGrid(config=cfg, times=traj.times, u=u, grad=grad)


@dataclass(frozen=True)
class RegularityReport:
    """Discrete size, Lipschitz and semiconcavity constants of a value grid."""

    max_abs: float
    lip_const: float
    semiconcavity_const: float
    t1: float


def regularity_report(vg: ValueGrid, t1: float | None = None) -> RegularityReport:
    """Exact grid constants: sup |u|, max slope, max second difference / dx^2.

    The semiconcavity constant is evaluated on slices with t <= t1 (default
    0.9 of the horizon measured from the initial time), mirroring the fact
    that one-sided curvature bounds degenerate at the terminal time.
    """
    dx = vg.config.dx
    t0 = float(vg.times[0])
    if t1 is None:
        t1 = t0 + 0.9 * vg.horizon
    max_abs = float(np.max(np.abs(vg.u)))
    lip = float(np.max(np.abs(np.diff(vg.u, axis=1)))) / dx
    window = vg.times <= t1 + 1e-12
    if not np.any(window):
        window = vg.times == vg.times[0]
    uu = vg.u[window]
    second = (uu[:, 2:] + uu[:, :-2] - 2.0 * uu[:, 1:-1]) / dx**2
    return RegularityReport(
        max_abs=max_abs,
        lip_const=lip,
        semiconcavity_const=float(np.max(second)),
        t1=float(t1),
    )

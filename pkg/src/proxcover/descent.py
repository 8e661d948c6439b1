"""Proximal descent schemes: simultaneous per-agent proximal steps, the
load-balancing Lloyd variant, the continuous-time gradient flow, and the
grid-measure proximal pushforward.

All agents update simultaneously against the others' current positions; the
per-agent implicit step freezes the transport potential at the step's start
(one transport solve per outer step) and fixed-point iterates the kernel
average, falling back to an explicit step if the inner loop stalls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .domain import GridDensity, ParticleConfig, _normalized, histogram
from .kernels import ShrunkenDomain, kernel_cell_masses
from .objectives import (ObjectiveSpec, balanced_grad, balanced_value,
                         kernel_grad, kernel_solution,
                         potential_gradient_field)
from .partition import CapacityWeights
from .transport import w2_between_grids


@dataclass(frozen=True)
class DescentConfig:
    """Step size, iteration budget, and convergence/guard policy.

    With the ``strict`` guard the step size must satisfy the descent bound
    ``tau < 2 / (3 * alpha_estimate)`` at construction; the ``backtracking``
    guard instead halves ``tau`` whenever a step increases the objective.
    """

    tau: float
    max_steps: int = 500
    step_tol: float = 1e-6
    inner_tol: float = 1e-9
    inner_max_iter: int = 60
    seed: int = 0
    guard: str = "strict"
    alpha_estimate: float | None = None

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.step_tol <= 0 or self.inner_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.guard not in ("strict", "backtracking"):
            raise ValueError(f"unknown guard {self.guard!r}")
        if self.guard == "strict":
            if self.alpha_estimate is None:
                raise ValueError("strict guard needs an alpha_estimate")
            if self.alpha_estimate > 0 and self.tau >= 2.0 / (3.0 * self.alpha_estimate):
                raise ValueError(
                    f"strict guard requires tau < {2.0 / (3.0 * self.alpha_estimate):.4g}"
                    f" for alpha_estimate={self.alpha_estimate:.4g}")


@dataclass(frozen=True)
class TraceRow:
    state: object  # ParticleConfig or GridDensity
    value: float
    step_norm: float
    inner_iters: int


@dataclass
class DescentTrace:
    steps: list[TraceRow] = field(default_factory=list)
    terminated: str = "max_steps"
    explicit_fallbacks: int = 0
    tau_final: float = 0.0


@dataclass(frozen=True)
class StepModel:
    """Frozen-potential local model for one outer step."""

    value: float
    agent_grad: object  # callable (agent index, position) -> (2,) gradient


# -- objective adapters ---------------------------------------------------------

class KernelObjective:
    """Kernel-mixture coverage cost for the descent loop."""

    def __init__(self, spec: ObjectiveSpec, method: str = "auto",
                 epsilon: float = 3e-4):
        if spec.kind != "kernel":
            raise ValueError("expected a kernel objective spec")
        self.spec = spec
        self.method = method
        self.epsilon = epsilon
        self.shrunken = ShrunkenDomain(spec.target.domain, spec.kernel.h)

    def project(self, positions: np.ndarray) -> np.ndarray:
        return self.shrunken.project(positions)

    def value(self, config: ParticleConfig) -> float:
        return kernel_solution(config, self.spec, method=self.method,
                               epsilon=self.epsilon).cost

    def grad(self, config: ParticleConfig) -> np.ndarray:
        return kernel_grad(config, self.spec, method=self.method,
                           epsilon=self.epsilon)

    def step_model(self, config: ParticleConfig) -> StepModel:
        # one transport solve per outer step; the inner fixed point averages
        # the frozen potential's cell-gradient field under the moving kernel
        sol = kernel_solution(config, self.spec, method=self.method,
                              epsilon=self.epsilon)
        gfield = potential_gradient_field(sol.dual_source,
                                          self.spec.target.domain)
        spec = self.spec
        dom = spec.target.domain
        n = config.n

        def agent_grad(_i: int, y: np.ndarray) -> np.ndarray:
            idx, m = kernel_cell_masses(spec.kernel, dom, y)
            return (m @ gfield[idx]) / n

        return StepModel(value=sol.cost, agent_grad=agent_grad)


class BalancedObjective:
    """Capacity-constrained coverage cost; keeps the dual weights warm
    across steps."""

    def __init__(self, spec: ObjectiveSpec, tol: float | None = None):
        if spec.kind != "balanced":
            raise ValueError("expected a balanced objective spec")
        if spec.f_kind != "quadratic":
            raise ValueError("descent on the balanced objective requires quadratic cost")
        self.spec = spec
        self.tol = tol
        self._omega: np.ndarray | None = None

    def project(self, positions: np.ndarray) -> np.ndarray:
        dom = self.spec.target.domain
        out = positions.copy()
        out[:, 0] = np.clip(out[:, 0], dom.lo[0], dom.hi[0])
        out[:, 1] = np.clip(out[:, 1], dom.lo[1], dom.hi[1])
        return out

    def value_capacity(self, config: ParticleConfig) -> tuple[float, CapacityWeights]:
        omega0 = self._omega if self._omega is not None and \
            len(self._omega) == config.n else None
        val, cap = balanced_value(config, self.spec, tol=self.tol, omega0=omega0)
        self._omega = cap.omega
        return val, cap

    def value(self, config: ParticleConfig) -> float:
        return self.value_capacity(config)[0]

    def grad(self, config: ParticleConfig) -> np.ndarray:
        _, cap = self.value_capacity(config)
        return balanced_grad(config, self.spec, capacity=cap)

    def step_model(self, config: ParticleConfig) -> StepModel:
        val, cap = self.value_capacity(config)
        n = config.n
        centroids = cap.centroids

        def agent_grad(i: int, y: np.ndarray) -> np.ndarray:
            return 2.0 * (y - centroids[i]) / n

        return StepModel(value=val, agent_grad=agent_grad)


class QuadraticToy:
    """Test hook: decoupled quadratic wells ``0.5 * sum_i |x_i - a_i|**2``."""

    def __init__(self, anchors):
        self.anchors = np.atleast_2d(np.asarray(anchors, dtype=float))

    def project(self, positions: np.ndarray) -> np.ndarray:
        return positions.copy()

    def value(self, config: ParticleConfig) -> float:
        return 0.5 * float(((config.positions - self.anchors) ** 2).sum())

    def grad(self, config: ParticleConfig) -> np.ndarray:
        return config.positions - self.anchors

    def step_model(self, config: ParticleConfig) -> StepModel:
        anchors = self.anchors

        def agent_grad(i: int, y: np.ndarray) -> np.ndarray:
            return y - anchors[i]

        return StepModel(value=self.value(config), agent_grad=agent_grad)


def build_adapter(objective, method: str = "auto", epsilon: float = 3e-4,
                  capacity_tol: float | None = None):
    if isinstance(objective, ObjectiveSpec):
        if objective.kind == "kernel":
            return KernelObjective(objective, method=method, epsilon=epsilon)
        if objective.kind == "balanced":
            return BalancedObjective(objective, tol=capacity_tol)
        raise ValueError("descent needs a kernel or balanced objective")
    for name in ("value", "grad", "step_model", "project"):
        if not hasattr(objective, name):
            raise TypeError(f"objective adapter lacks {name}()")
    return objective


# -- per-agent proximal steps ----------------------------------------------------

def _inner_prox(x: np.ndarray, i: int, model: StepModel, adapter, tau: float,
                inner_tol: float, inner_max_iter: int) -> tuple[np.ndarray, int, bool]:
    """Damped fixed-point solve of ``y = x - tau * g_i(y)`` projected onto the
    feasible box; returns (y, iterations, used_fallback)."""
    y = x.copy()
    for it in range(1, inner_max_iter + 1):
        target = x - tau * model.agent_grad(i, y)
        y_next = 0.5 * (y + target)
        y_next = adapter.project(y_next[None, :])[0]
        delta = float(np.abs(y_next - y).max())
        y = y_next
        if delta <= inner_tol:
            return y, it, False
    # explicit-gradient fallback, flagged to the caller
    y = adapter.project((x - tau * model.agent_grad(i, x))[None, :])[0]
    return y, inner_max_iter, True


def agent_prox_step(config: ParticleConfig, objective, dcfg: DescentConfig,
                    model: StepModel | None = None):
    """One simultaneous proximal step of every agent against the current
    positions of the others.

    Returns ``(new_config, step_value, inner_iters, fallbacks)`` where
    ``step_value`` is the objective value at the step's starting positions.
    """
    adapter = build_adapter(objective)
    pos = adapter.project(config.positions)
    start = ParticleConfig(pos)
    if model is None:
        model = adapter.step_model(start)
    new = np.empty_like(pos)
    inner_total = 0
    fallbacks = 0
    for i in range(start.n):
        y, iters, fb = _inner_prox(pos[i], i, model, adapter, dcfg.tau,
                                   dcfg.inner_tol, dcfg.inner_max_iter)
        new[i] = y
        inner_total = max(inner_total, iters)
        fallbacks += int(fb)
    return ParticleConfig(new), model.value, inner_total, fallbacks


def lloyd_prox_step(config: ParticleConfig, objective, dcfg: DescentConfig):
    """Load-balancing Lloyd step: proximal pull toward the capacity cell
    centroids with the partition frozen for the step.

    Returns ``(new_config, step_value, capacity)``.
    """
    adapter = build_adapter(objective)
    if not isinstance(adapter, BalancedObjective):
        raise ValueError("the Lloyd step runs on the balanced objective")
    pos = adapter.project(config.positions)
    val, cap = adapter.value_capacity(ParticleConfig(pos))
    n = config.n
    lam = 2.0 * dcfg.tau / n
    new = (pos + lam * cap.centroids) / (1.0 + lam)
    return ParticleConfig(adapter.project(new)), val, cap


def gradient_flow(config: ParticleConfig, objective, dt: float, t_end: float,
                  record_values: bool = True) -> DescentTrace:
    """Explicit Euler integration of the descent field, re-evaluated from the
    current configuration at every step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    adapter = build_adapter(objective)
    pos = adapter.project(config.positions)
    trace = DescentTrace(tau_final=dt)
    nsteps = int(round(t_end / dt))
    state = ParticleConfig(pos)
    trace.steps.append(TraceRow(state, adapter.value(state) if record_values
                                else float("nan"), 0.0, 0))
    for _ in range(nsteps):
        g = adapter.grad(state)
        new = adapter.project(state.positions - dt * g)
        norm = float(np.linalg.norm(new - state.positions))
        state = ParticleConfig(new)
        trace.steps.append(TraceRow(state, adapter.value(state) if record_values
                                    else float("nan"), norm, 0))
    trace.terminated = "max_steps"
    return trace


# -- macroscopic scheme -----------------------------------------------------------

def macro_prox_step(mu: GridDensity, target: GridDensity, tau: float,
                    method: str = "auto", epsilon: float = 3e-4,
                    solution=None):
    """Push each source cell's mass to the cell minimizing
    ``|z - y|**2 / (2 tau) + phi(y)`` where ``phi`` is the transport potential
    toward the target (ties to the lowest cell index).

    Returns ``(new_measure, solution_at_mu)``.
    """
    if mu.domain != target.domain:
        raise ValueError("measures must share a domain")
    if tau <= 0:
        raise ValueError("tau must be positive")
    sol = solution if solution is not None else w2_between_grids(
        mu, target, method=method, epsilon=epsilon)
    dom = mu.domain
    centers = dom.cell_centers()
    phi = np.asarray(sol.dual_source, dtype=float)
    src = np.flatnonzero(mu.mass > 0)
    new_mass = np.zeros(dom.n_cells)
    chunk = max(1, 2_000_000 // dom.n_cells)
    for k0 in range(0, len(src), chunk):
        rows = src[k0:k0 + chunk]
        d2 = cdist(centers[rows], centers, "sqeuclidean")
        dest = (d2 / (2.0 * tau) + phi[None, :]).argmin(axis=1)
        np.add.at(new_mass, dest, mu.mass[rows])
    return GridDensity(dom, _normalized(new_mass)), sol


def agent_limit_step(config: ParticleConfig, target: GridDensity, tau: float,
                     method: str = "auto", epsilon: float = 3e-4) -> ParticleConfig:
    """Pointwise proximal map for a particle cloud: the potential is computed
    from the cloud's histogram and every particle jumps to the prox-optimal
    grid cell center (the large-population limit dynamics)."""
    dom = target.domain
    mu = histogram(config, dom)
    sol = w2_between_grids(mu, target, method=method, epsilon=epsilon)
    centers = dom.cell_centers()
    phi = np.asarray(sol.dual_source, dtype=float)
    d2 = cdist(config.positions, centers, "sqeuclidean")
    dest = (d2 / (2.0 * tau) + phi[None, :]).argmin(axis=1)
    return ParticleConfig(centers[dest])


# -- driver ------------------------------------------------------------------------

_SCHEMES = ("agent_prox", "lloyd", "flow", "macro")


def run(scheme: str, init, objective, dcfg: DescentConfig,
        ot_method: str = "auto", epsilon: float = 3e-4,
        capacity_tol: float | None = None) -> DescentTrace:
    """Iterate a descent scheme until the step norm drops below ``step_tol``,
    the step budget runs out, or the backtracking guard trips.

    ``init`` is a :class:`ParticleConfig` (particle schemes) or a
    :class:`GridDensity` (macro scheme); for the macro scheme ``objective``
    may be the target measure itself or a spec carrying it.
    """
    if scheme not in _SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {_SCHEMES}")
    if scheme == "flow":
        adapter = build_adapter(objective, method=ot_method, epsilon=epsilon,
                                capacity_tol=capacity_tol)
        return gradient_flow(init, adapter, dcfg.tau, dcfg.tau * dcfg.max_steps)
    if scheme == "macro":
        target = objective.target if isinstance(objective, ObjectiveSpec) else objective
        if not isinstance(target, GridDensity):
            raise TypeError("macro scheme needs the target grid measure")
        return _run_macro(init, target, dcfg, ot_method, epsilon)
    adapter = build_adapter(objective, method=ot_method, epsilon=epsilon,
                            capacity_tol=capacity_tol)
    return _run_particles(scheme, init, adapter, dcfg)


def _run_particles(scheme: str, init: ParticleConfig, adapter,
                   dcfg: DescentConfig) -> DescentTrace:
    import dataclasses

    trace = DescentTrace()
    tau = dcfg.tau
    config = ParticleConfig(adapter.project(init.positions))
    arrived_norm = 0.0  # norm of the step that produced `config`
    halvings = 0
    step = 0
    while True:
        step_cfg = dcfg if tau == dcfg.tau else dataclasses.replace(dcfg, tau=tau)
        if scheme == "lloyd":
            new_config, value, cap = lloyd_prox_step(config, adapter, step_cfg)
            inner, fallbacks = cap.iterations, 0
        else:
            new_config, value, inner, fallbacks = agent_prox_step(
                config, adapter, step_cfg)
        if (dcfg.guard == "backtracking" and trace.steps
                and value > trace.steps[-1].value
                + 1e-12 * (1.0 + abs(trace.steps[-1].value))):
            # the step that led here overshot: rewind and retry smaller
            tau /= 2.0
            halvings += 1
            step -= 1
            if halvings > 20:
                trace.terminated = "guard_triggered"
                break
            config = trace.steps[-1].state
            arrived_norm = trace.steps[-1].step_norm
            trace.steps.pop()
            continue
        halvings = 0
        trace.steps.append(TraceRow(config, value, arrived_norm, inner))
        trace.explicit_fallbacks += fallbacks
        if step >= dcfg.max_steps:
            trace.terminated = "max_steps"
            break
        norm = float(np.linalg.norm(new_config.positions - config.positions))
        config = new_config
        arrived_norm = norm
        step += 1
        if norm <= dcfg.step_tol:
            trace.steps.append(TraceRow(config, adapter.value(config), norm, 0))
            trace.terminated = "converged"
            break
    trace.tau_final = tau
    return trace


def _run_macro(init: GridDensity, target: GridDensity, dcfg: DescentConfig,
               method: str, epsilon: float) -> DescentTrace:
    trace = DescentTrace(tau_final=dcfg.tau)
    tau = dcfg.tau
    mu = init
    arrived_norm = 0.0
    halvings = 0
    step = 0
    while True:
        sol = w2_between_grids(mu, target, method=method, epsilon=epsilon)
        if (dcfg.guard == "backtracking" and trace.steps
                and sol.cost > trace.steps[-1].value
                + 1e-12 * (1.0 + abs(trace.steps[-1].value))):
            # at grid granularity the pushforward can jitter once it reaches
            # the floor; shrink the step and retry from the previous measure
            tau /= 2.0
            halvings += 1
            step -= 1
            if halvings > 20:
                trace.terminated = "guard_triggered"
                break
            mu = trace.steps[-1].state
            arrived_norm = trace.steps[-1].step_norm
            trace.steps.pop()
            continue
        halvings = 0
        trace.steps.append(TraceRow(mu, sol.cost, arrived_norm, 0))
        if step >= dcfg.max_steps:
            trace.terminated = "max_steps"
            break
        new_mu, _ = macro_prox_step(mu, target, tau, solution=sol)
        arrived_norm = 0.5 * float(np.abs(new_mu.mass - mu.mass).sum())
        mu = new_mu
        step += 1
        if arrived_norm <= dcfg.step_tol:
            final = w2_between_grids(mu, target, method=method, epsilon=epsilon)
            trace.steps.append(TraceRow(mu, final.cost, arrived_norm, 0))
            trace.terminated = "converged"
            break
    trace.tau_final = tau
    return trace

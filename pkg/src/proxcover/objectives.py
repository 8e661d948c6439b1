"""Coverage objective functions over agent configurations.

Three objectives ship:

* ``distortion``: expected f-cost to the nearest agent under the target
  measure (the classic multi-center quantization energy).
* ``balanced``: transport cost from the target onto equally weighted agents,
  evaluated through the capacity-constrained partition.
* ``kernel``: squared 2-Wasserstein distance between the rasterized kernel
  mixture of the agents and the target.

Gradients of the kernel objective come from transport duals (the grid
potential differentiated by central differences and averaged under each
agent's kernel), not autodiff, so they can be validated against finite
differences of the evaluation path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .domain import GridDensity, ParticleConfig
from .errors import TooLarge
from .kernels import (KernelSpec, ShrunkenDomain, kernel_cell_masses,
                      min_separation, mixture_density)
from .partition import CapacityWeights, solve_capacity_weights, voronoi
from .transport import (TransportSolution, cyclically_monotone, ground_cost,
                        w2_between_grids)

PROP_SITE_GUARD = 6
PROP_CELL_GUARD = 1024


@dataclass(frozen=True)
class ObjectiveSpec:
    """Objective kind, ground cost, target measure, and (for the kernel
    objective) the smoothing kernel."""

    kind: str
    target: GridDensity
    f_kind: str = "quadratic"
    kernel: KernelSpec | None = None

    def __post_init__(self):
        if self.kind not in ("distortion", "balanced", "kernel"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.f_kind not in ("quadratic", "linear"):
            raise ValueError(f"unknown f_kind {self.f_kind!r}")
        if (self.kernel is not None) != (self.kind == "kernel"):
            raise ValueError("kernel must be given exactly for the kernel objective")
        if self.kind == "kernel" and self.f_kind != "quadratic":
            raise ValueError("the kernel objective is the squared Wasserstein case")


def distortion_value(config: ParticleConfig, spec: ObjectiveSpec) -> float:
    """Midpoint-rule integral of ``min_i f(|x - x_i|)`` under the target."""
    costs = ground_cost(spec.f_kind, spec.target.domain.cell_centers(),
                        config.positions)
    return float(spec.target.mass @ costs.min(axis=1))


def balanced_value(config: ParticleConfig, spec: ObjectiveSpec,
                   tol: float | None = None,
                   omega0: np.ndarray | None = None
                   ) -> tuple[float, CapacityWeights]:
    """Capacity-constrained transport cost with uniform weights 1/N."""
    n = config.n
    cap = solve_capacity_weights(config, spec.target, spec.f_kind,
                                 np.full(n, 1.0 / n), tol=tol, omega0=omega0)
    return cap.cost, cap


@dataclass(frozen=True)
class DistortionTransportReport:
    """Two-route check: the distortion integral against the free-weight
    transport LP, plus the minimizing weights against the nearest-site
    cell masses."""

    distortion: float
    lp_cost: float
    gap: float
    lp_weights: np.ndarray
    voronoi_masses: np.ndarray
    weight_deviation: float
    boundary_mass: float


def distortion_transport_report(config: ParticleConfig,
                                spec: ObjectiveSpec) -> DistortionTransportReport:
    """Solve ``min_w C_f(sum_i w_i delta_{x_i}, target)`` as an explicit LP
    with a free agent-side marginal and compare with the distortion integral."""
    n = config.n
    dom = spec.target.domain
    if n > PROP_SITE_GUARD or dom.n_cells > PROP_CELL_GUARD:
        raise TooLarge(
            f"report guarded at N <= {PROP_SITE_GUARD} sites and "
            f"{PROP_CELL_GUARD} cells")
    costs = ground_cost(spec.f_kind, dom.cell_centers(), config.positions)
    ncells = dom.n_cells
    rows = np.repeat(np.arange(ncells), n)
    cols = np.arange(ncells * n)
    A = sparse.csr_matrix((np.ones(ncells * n), (rows, cols)),
                          shape=(ncells, ncells * n))
    res = linprog(costs.ravel(), A_eq=A, b_eq=spec.target.mass,
                  bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"free-marginal LP failed: {res.message}")
    plan = res.x.reshape(ncells, n)
    lp_weights = plan.sum(axis=0)
    part = voronoi(config, spec.target)
    h_val = distortion_value(config, spec)
    boundary_mass = float(spec.target.mass[part.boundary_cells].sum())
    return DistortionTransportReport(
        distortion=h_val,
        lp_cost=float(res.fun),
        gap=abs(h_val - float(res.fun)),
        lp_weights=lp_weights,
        voronoi_masses=part.mass,
        weight_deviation=float(np.abs(lp_weights - part.mass).max()),
        boundary_mass=boundary_mass,
    )


# -- kernel objective -----------------------------------------------------------

def kernel_value(config: ParticleConfig, spec: ObjectiveSpec,
                 method: str = "auto", **kwargs) -> float:
    mix = mixture_density(config, spec.kernel, spec.target.domain)
    return w2_between_grids(mix, spec.target, method=method, **kwargs).cost


def kernel_solution(config: ParticleConfig, spec: ObjectiveSpec,
                    method: str = "auto", **kwargs) -> TransportSolution:
    mix = mixture_density(config, spec.kernel, spec.target.domain)
    return w2_between_grids(mix, spec.target, method=method, **kwargs)


def kernel_potential_average(potential: np.ndarray, spec: KernelSpec,
                             domain, center) -> float:
    """Kernel-measure average of a grid potential around ``center``."""
    idx, m = kernel_cell_masses(spec, domain, center)
    return float(m @ potential[idx])


def potential_gradient_field(potential: np.ndarray, domain) -> np.ndarray:
    """Cell-center gradient of a grid potential: central differences inside,
    one-sided at the edges, outward components zeroed on boundary cells
    (zero-flux convention).  Shape ``(n_cells, 2)``."""
    phi = np.asarray(potential, dtype=float).reshape(domain.ny, domain.nx)
    gy, gx = np.gradient(phi, domain.dy, domain.dx)
    gx[:, 0] = np.minimum(gx[:, 0], 0.0)
    gx[:, -1] = np.maximum(gx[:, -1], 0.0)
    gy[0, :] = np.minimum(gy[0, :], 0.0)
    gy[-1, :] = np.maximum(gy[-1, :], 0.0)
    return np.column_stack([gx.ravel(), gy.ravel()])


def kernel_grad(config: ParticleConfig, spec: ObjectiveSpec,
                method: str = "auto", solution: TransportSolution | None = None,
                grad_step: float = 1e-6, **kwargs) -> np.ndarray:
    """Per-agent gradient: the potential's gradient averaged under each
    agent's kernel measure, scaled by the 1/N mixture weight.

    The average of the gradient equals the derivative of the averaged
    potential for a translating kernel, and the latter differentiates the
    smooth rasterizer directly, so it is evaluated that way (short centered
    differences of the kernel average at ``grad_step``).  At the shrunken
    domain's boundary the outward normal component is zeroed, matching the
    zero-flux convention of the descent schemes.
    """
    dom = spec.target.domain
    sol = solution if solution is not None else kernel_solution(
        config, spec, method=method, **kwargs)
    phi = np.asarray(sol.dual_source, dtype=float)
    shr = ShrunkenDomain(dom, spec.kernel.h)
    out = np.zeros((config.n, 2))
    for i, center in enumerate(config.positions):
        for k in (0, 1):
            cp = center.copy()
            cp[k] += grad_step
            cm = center.copy()
            cm[k] -= grad_step
            out[i, k] = (
                kernel_potential_average(phi, spec.kernel, dom, cp)
                - kernel_potential_average(phi, spec.kernel, dom, cm)
            ) / (2 * grad_step)
    out /= config.n
    _clamp_outward(out, config.positions, shr)
    return out


def _clamp_outward(grads: np.ndarray, positions: np.ndarray,
                   shr: ShrunkenDomain, atol: float = 1e-12) -> None:
    """Zero gradient components that would push an agent already on the
    shrunken-domain boundary outward under a descent step."""
    lo, hi = shr.lo, shr.hi
    for k, (l, h) in enumerate(((lo[0], hi[0]), (lo[1], hi[1]))):
        at_lo = np.abs(positions[:, k] - l) <= atol
        at_hi = np.abs(positions[:, k] - h) <= atol
        grads[at_lo, k] = np.minimum(grads[at_lo, k], 0.0)
        grads[at_hi, k] = np.maximum(grads[at_hi, k], 0.0)


def balanced_grad(config: ParticleConfig, spec: ObjectiveSpec,
                  capacity: CapacityWeights | None = None,
                  tol: float | None = None) -> np.ndarray:
    """Envelope gradient of the balanced objective for quadratic cost:
    ``(2/N) (x_i - b_i)`` with ``b_i`` the capacity cell centroid."""
    if spec.f_kind != "quadratic":
        raise ValueError("closed-form gradient requires quadratic cost")
    cap = capacity
    if cap is None:
        _, cap = balanced_value(config, spec, tol=tol)
    return 2.0 * (config.positions - cap.centroids) / config.n


# -- smoothness estimation --------------------------------------------------------

def estimate_smoothness(objective, config_sampler, trials: int,
                        seed=0, step_frac: float = 0.4) -> float:
    """Empirical curvature bound: max of ``|<g(y)-g(x), y-x>| / |y-x|^2``
    over sampled configurations and small cyclically monotone displacements.

    ``objective`` is an :class:`ObjectiveSpec` (kernel or balanced) or any
    object with a ``grad(config) -> (N, 2)`` method.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    if isinstance(objective, ObjectiveSpec):
        if objective.kind == "kernel":
            grad_fn = lambda c: kernel_grad(c, objective)
        elif objective.kind == "balanced":
            grad_fn = lambda c: balanced_grad(c, objective)
        else:
            raise ValueError("smoothness estimation needs a differentiable objective")
    else:
        grad_fn = objective.grad
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(trials):
        cfg = config_sampler(rng)
        pos = cfg.positions
        sep = min_separation(cfg)
        scale = step_frac * (sep / 2.0 if np.isfinite(sep) else 0.1)
        disp = rng.normal(size=pos.shape)
        disp *= scale * rng.random((pos.shape[0], 1)) / np.maximum(
            np.linalg.norm(disp, axis=1, keepdims=True), 1e-300)
        y = pos + disp
        if pos.shape[0] <= 8 and not cyclically_monotone(pos, y):
            continue
        gx = grad_fn(ParticleConfig(pos))
        gy = grad_fn(ParticleConfig(y))
        num = abs(float(((gy - gx) * (y - pos)).sum()))
        den = float(((y - pos) ** 2).sum())
        if den > 0:
            best = max(best, num / den)
    return best


def shrunken_domain_for(spec: ObjectiveSpec) -> ShrunkenDomain | None:
    if spec.kind == "kernel":
        return ShrunkenDomain(spec.target.domain, spec.kernel.h)
    return None

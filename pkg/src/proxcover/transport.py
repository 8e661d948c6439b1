"""Discrete optimal transport: exact LP oracle, entropic solver, grid-to-grid
squared-distance transport, and the cyclical-monotonicity checker.

Conventions:

* Ground costs are ``f(|x - y|)`` with ``f_kind`` either ``"quadratic"``
  (``f(d) = d**2``, the squared 2-Wasserstein case) or ``"linear"``
  (``f(d) = d``).
* Dual potentials satisfy ``dual_source[i] + dual_target[j] <= cost(i, j)``
  with equality on the plan support (up to solver tolerance) and are stored
  with a mean-zero source potential.
* Grid-to-grid solutions carry duals as full-grid fields (one value per cell,
  extended off the support by the cost transform), which downstream gradient
  code differentiates.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog, linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .domain import GridDensity
from .errors import NotConverged, TooLarge
from .kernels import KernelSpec, mixture_density

LP_GUARD = 4096
MONOTONE_BRUTE_GUARD = 8
MONOTONE_LP_GUARD = 64


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point masses; weights sum to 1."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(np.atleast_2d(self.points), dtype=float)
        w = np.ascontiguousarray(self.weights, dtype=float).ravel()
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        if pts.shape[0] != w.shape[0]:
            raise ValueError("one weight per point required")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass
class TransportSolution:
    """Optimal (or converged) coupling with duals.

    ``plan_src``, ``plan_dst``, ``plan_mass`` hold the sparse coupling.  For
    grid problems the indices are flat cell indices and the duals are
    full-grid fields; otherwise they index the input measures.
    """

    cost: float
    plan_src: np.ndarray
    plan_dst: np.ndarray
    plan_mass: np.ndarray
    dual_source: np.ndarray
    dual_target: np.ndarray
    method: str
    marginal_error: float = 0.0
    epsilon: float | None = None
    extras: dict = field(default_factory=dict)

    def plan_matrix(self, n_src: int | None = None, n_dst: int | None = None) -> np.ndarray:
        n = n_src if n_src is not None else len(self.dual_source)
        m = n_dst if n_dst is not None else len(self.dual_target)
        out = np.zeros((n, m))
        out[self.plan_src, self.plan_dst] = self.plan_mass
        return out


def ground_cost(f_kind: str, src_points: np.ndarray, dst_points: np.ndarray) -> np.ndarray:
    d = cdist(np.atleast_2d(src_points), np.atleast_2d(dst_points))
    if f_kind == "quadratic":
        return d * d
    if f_kind == "linear":
        return d
    raise ValueError(f"unknown f_kind {f_kind!r}")


def apply_f(f_kind: str, d: np.ndarray) -> np.ndarray:
    if f_kind == "quadratic":
        return d * d
    if f_kind == "linear":
        return d
    raise ValueError(f"unknown f_kind {f_kind!r}")


# -- exact LP oracle ----------------------------------------------------------

def _marginal_matrix(n: int, m: int) -> sparse.csr_matrix:
    """Equality constraints of the transport polytope with the redundant last
    target row dropped: n row-sum rows then m-1 column-sum rows."""
    var = np.arange(n * m)
    src_rows = var // m
    dst_rows = var % m
    keep = dst_rows < m - 1
    rows = np.concatenate([src_rows, n + dst_rows[keep]])
    cols = np.concatenate([var, var[keep]])
    data = np.ones(rows.shape[0])
    return sparse.csr_matrix((data, (rows, cols)), shape=(n + m - 1, n * m))


def ot_lp(mu: DiscreteMeasure, nu: DiscreteMeasure,
          f_kind: str = "quadratic") -> TransportSolution:
    """Exact optimal transport between discrete measures via the HiGHS LP
    solver (simplex, so the plan is a basic solution with at most
    ``n + m - 1`` entries and exact duals)."""
    n, m = mu.n, nu.n
    if n + m > LP_GUARD:
        raise TooLarge(f"combined support {n + m} exceeds LP guard {LP_GUARD}")
    C = ground_cost(f_kind, mu.points, nu.points)
    res = linprog(
        C.ravel(),
        A_eq=_marginal_matrix(n, m),
        b_eq=np.concatenate([mu.weights, nu.weights[:-1]]),
        bounds=(0, None),
        method="highs",
    )
    if res.status != 0:
        raise NotConverged(f"LP solver failed with status {res.status}: {res.message}")
    plan = res.x.reshape(n, m)
    src, dst = np.nonzero(plan > 0)
    y = np.asarray(res.eqlin.marginals, dtype=float)
    u = y[:n].copy()
    v = np.concatenate([y[n:], [0.0]])
    shift = u.mean()
    u -= shift
    v += shift
    row_err = np.abs(plan.sum(axis=1) - mu.weights).max()
    col_err = np.abs(plan.sum(axis=0) - nu.weights).max()
    return TransportSolution(
        cost=float(res.fun),
        plan_src=src,
        plan_dst=dst,
        plan_mass=plan[src, dst],
        dual_source=u,
        dual_target=v,
        method="lp",
        marginal_error=float(max(row_err, col_err)),
    )


# -- entropic solver ----------------------------------------------------------

def _eps_schedule(eps_final: float, cost_scale: float) -> list[float]:
    out = []
    eps = max(eps_final, 0.25 * cost_scale)
    while eps > eps_final * 1.0001:
        out.append(eps)
        eps = max(eps_final, eps / 5.0)
    out.append(eps_final)
    return out


def ot_sinkhorn(mu: DiscreteMeasure, nu: DiscreteMeasure, f_kind: str = "quadratic",
                epsilon: float = 1e-2, max_iter: int = 5000,
                tol: float = 1e-9) -> TransportSolution:
    """Log-domain Sinkhorn with an epsilon-scaling warm start.

    The reported cost is the transport term only (no entropy).  Raises
    :class:`NotConverged` with the current iterate attached when the marginal
    violation is still above ``tol`` after ``max_iter`` iterations.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    C = ground_cost(f_kind, mu.points, nu.points)
    la = np.log(mu.weights, where=mu.weights > 0,
                out=np.full(mu.n, -np.inf))
    lb = np.log(nu.weights, where=nu.weights > 0,
                out=np.full(nu.n, -np.inf))
    f = np.zeros(mu.n)
    g = np.zeros(nu.n)
    iters = 0
    err = np.inf
    for eps in _eps_schedule(epsilon, float(C.max())):
        stage_tol = tol if eps == epsilon else max(tol, 1e-4)
        while iters < max_iter:
            iters += 1
            f = -eps * logsumexp((g[None, :] - C) / eps + lb[None, :], axis=1)
            g = -eps * logsumexp((f[:, None] - C) / eps + la[:, None], axis=0)
            # row marginals after the g update
            row = np.exp((f[:, None] + g[None, :] - C) / eps + la[:, None] + lb[None, :])
            err = float(np.abs(row.sum(axis=1) - mu.weights).sum())
            if err <= stage_tol:
                break
        if eps == epsilon:
            break

    plan = np.exp((f[:, None] + g[None, :] - C) / eps + la[:, None] + lb[None, :])
    cost = float((plan * C).sum())
    shift = f[mu.weights > 0].mean()
    src, dst = np.nonzero(plan > 1e-15)
    sol = TransportSolution(
        cost=cost,
        plan_src=src,
        plan_dst=dst,
        plan_mass=plan[src, dst],
        dual_source=f - shift,
        dual_target=g + shift,
        method="sinkhorn",
        marginal_error=err,
        epsilon=epsilon,
    )
    if err > tol:
        raise NotConverged(
            f"sinkhorn marginal violation {err:.3e} > tol {tol:.3e} "
            f"after {iters} iterations", iterate=sol)
    return sol


# -- grid-to-grid squared-distance transport ----------------------------------

def _lse(t: np.ndarray, axis: int) -> np.ndarray:
    mx = t.max(axis=axis, keepdims=True)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    out = np.log(np.exp(t - safe).sum(axis=axis)) + np.squeeze(safe, axis=axis)
    return np.where(np.isfinite(np.squeeze(mx, axis=axis)), out, -np.inf)


def _grid_lse_pass(M: np.ndarray, cx: np.ndarray, cy: np.ndarray,
                   eps: float) -> np.ndarray:
    """Separable log-sum-exp of ``M[jy, jx] - (cx[ix, jx] + cy[iy, jy]) / eps``
    over the target indices, for every source cell ``(iy, ix)``."""
    t1 = _lse(M[:, None, :] - cx[None, :, :] / eps, axis=2)  # (ny, nx_i)
    return _lse(t1[None, :, :] - cy[:, :, None] / eps, axis=1)  # (ny_i, nx_i)


def _w2_grid_sinkhorn(a: GridDensity, b: GridDensity, epsilon: float,
                      max_iter: int, tol: float) -> TransportSolution:
    """Log-domain Sinkhorn for quadratic cost on a common grid.

    The Gibbs kernel factorizes over the two axes, so one potential update
    costs O(nx*ny*(nx+ny)) instead of O((nx*ny)**2).  The final stage is
    over-relaxed, which cuts the iteration count at small epsilon."""
    dom = a.domain
    xs, ys = dom.axis_centers()
    cx = (xs[:, None] - xs[None, :]) ** 2
    cy = (ys[:, None] - ys[None, :]) ** 2
    A = a.as_array()
    B = b.as_array()
    with np.errstate(divide="ignore"):
        la = np.log(A)
        lb = np.log(B)
    f = np.zeros_like(A)
    g = np.zeros_like(B)
    iters = 0
    err = np.inf
    cost_scale = float(cx.max() + cy.max())
    check_every = 8
    for eps in _eps_schedule(epsilon, cost_scale):
        final = eps == epsilon
        stage_tol = tol if final else max(tol, 1e-5)
        stage_cap = max_iter if final else min(max_iter, 400)
        relax = 1.6 if final else 1.0
        stage_it = 0
        while iters < max_iter and stage_it < stage_cap:
            iters += 1
            stage_it += 1
            fn = -eps * _grid_lse_pass((g + eps * lb) / eps, cx, cy, eps)
            f = np.where(np.isfinite(fn), f + relax * (fn - f), fn)
            gn = -eps * _grid_lse_pass((f + eps * la) / eps, cx, cy, eps)
            g = np.where(np.isfinite(gn), g + relax * (gn - g), gn)
            if stage_it % check_every == 0 or stage_it == stage_cap:
                resid = _grid_lse_pass((g + eps * lb) / eps, cx, cy, eps)
                with np.errstate(invalid="ignore"):
                    err = float(np.nansum(np.abs(A * (np.exp(f / eps + resid) - 1.0))))
                if err <= stage_tol:
                    break
        if final:
            break

    # transport cost and sparse plan, chunked over source rows
    supp_b = b.mass > 0
    centers = dom.cell_centers()
    gb_flat = (g + eps * lb).reshape(-1)
    fa_flat = (f + eps * la).reshape(-1)
    cost = 0.0
    src_list, dst_list, mass_list = [], [], []
    src_cells = np.flatnonzero(a.mass > 0)
    chunk = max(1, 262144 // max(1, int(supp_b.sum())))
    dst_cells = np.flatnonzero(supp_b)
    for k0 in range(0, len(src_cells), chunk):
        rows = src_cells[k0:k0 + chunk]
        Cblk = cdist(centers[rows], centers[dst_cells], "sqeuclidean")
        P = np.exp((fa_flat[rows][:, None] + gb_flat[dst_cells][None, :] - Cblk) / eps)
        cost += float((P * Cblk).sum())
        ii, jj = np.nonzero(P > 1e-15)
        src_list.append(rows[ii])
        dst_list.append(dst_cells[jj])
        mass_list.append(P[ii, jj])

    # duals as full-grid fields: the soft cost transform extends them off the
    # support smoothly
    phi = -eps * _grid_lse_pass((g + eps * lb) / eps, cx, cy, eps)
    psi = -eps * _grid_lse_pass((f + eps * la) / eps, cx, cy, eps)
    shift = float(phi.reshape(-1)[a.mass > 0].mean())
    sol = TransportSolution(
        cost=cost,
        plan_src=np.concatenate(src_list),
        plan_dst=np.concatenate(dst_list),
        plan_mass=np.concatenate(mass_list),
        dual_source=phi.reshape(-1) - shift,
        dual_target=psi.reshape(-1) + shift,
        method="sinkhorn",
        marginal_error=err,
        epsilon=epsilon,
    )
    if err > tol:
        raise NotConverged(
            f"grid sinkhorn marginal violation {err:.3e} > tol {tol:.3e} "
            f"after {iters} iterations", iterate=sol)
    return sol


def _ctransform(points_to: np.ndarray, supp_points: np.ndarray,
                supp_dual: np.ndarray, f_kind: str = "quadratic") -> np.ndarray:
    """Tightest dual extension: ``min_j cost(x, y_j) - dual[j]``."""
    out = np.empty(points_to.shape[0])
    chunk = max(1, 4_000_000 // max(1, supp_points.shape[0]))
    for k0 in range(0, points_to.shape[0], chunk):
        C = ground_cost(f_kind, points_to[k0:k0 + chunk], supp_points)
        out[k0:k0 + chunk] = (C - supp_dual[None, :]).min(axis=1)
    return out


def w2_between_grids(a: GridDensity, b: GridDensity, method: str = "auto",
                     epsilon: float = 3e-4, max_iter: int = 20000,
                     tol: float = 1e-8) -> TransportSolution:
    """Squared 2-Wasserstein distance between two grid measures on the same
    domain, with full-grid dual potentials.

    ``method="lp"`` solves the support-reduced exact LP (guarded by the
    combined-support limit); ``"sinkhorn"`` runs the separable entropic
    solver; ``"auto"`` picks the LP whenever it fits the guard.
    """
    if a.domain != b.domain:
        raise ValueError("grid measures must share a domain")
    dom = a.domain
    ia = np.flatnonzero(a.mass > 0)
    ib = np.flatnonzero(b.mass > 0)
    if method == "auto":
        method = "lp" if len(ia) + len(ib) <= LP_GUARD else "sinkhorn"
    if method == "sinkhorn":
        return _w2_grid_sinkhorn(a, b, epsilon, max_iter, tol)
    if method != "lp":
        raise ValueError(f"unknown method {method!r}")

    centers = dom.cell_centers()
    mu = DiscreteMeasure(centers[ia], a.mass[ia] / a.mass[ia].sum())
    nu = DiscreteMeasure(centers[ib], b.mass[ib] / b.mass[ib].sum())
    sol = ot_lp(mu, nu, "quadratic")
    phi = _ctransform(centers, centers[ib], sol.dual_target)
    psi = _ctransform(centers, centers[ia], sol.dual_source)
    shift = float(phi[ia].mean())
    return TransportSolution(
        cost=sol.cost,
        plan_src=ia[sol.plan_src],
        plan_dst=ib[sol.plan_dst],
        plan_mass=sol.plan_mass,
        dual_source=phi - shift,
        dual_target=psi + shift,
        method="lp",
        marginal_error=sol.marginal_error,
    )


# -- semi-discrete transport ----------------------------------------------------

def semidiscrete_cost(sites, weights: np.ndarray, mu_star: GridDensity,
                      f_kind: str = "quadratic", tol: float | None = None,
                      max_iter: int = 2000):
    """Transport cost from a grid measure onto weighted sites, solved through
    the capacity-constrained partition dual.

    Returns ``(cost, potential_grid, capacity)`` where ``potential_grid`` is
    the mean-zero Kantorovich potential ``min_i f(|x - x_i|) - omega_i`` at
    cell centers and ``capacity`` holds the solved weights.
    """
    from .partition import solve_capacity_weights

    cap = solve_capacity_weights(sites, mu_star, f_kind, weights,
                                 tol=tol, max_iter=max_iter)
    dom = mu_star.domain
    pos = sites.positions if hasattr(sites, "positions") else np.atleast_2d(sites)
    scores = ground_cost(f_kind, dom.cell_centers(), pos) - cap.omega[None, :]
    potential = scores.min(axis=1)
    potential -= potential.mean()
    return cap.cost, potential, cap


# -- cyclical monotonicity ------------------------------------------------------

def cyclically_monotone(xs: np.ndarray, ys: np.ndarray,
                        mode: str = "auto", rel_tol: float = 1e-9) -> bool:
    """Whether the pairing ``(xs[i], ys[i])`` has squared-distance cost no
    greater than any permuted pairing.

    ``mode="brute"`` enumerates permutations (N <= 8); ``"assignment"``
    checks that the identity attains the assignment-LP optimum (N <= 64).
    """
    X = np.atleast_2d(np.asarray(xs, dtype=float))
    Y = np.atleast_2d(np.asarray(ys, dtype=float))
    if X.shape != Y.shape:
        raise ValueError("point lists must have equal shapes")
    n = X.shape[0]
    if mode == "auto":
        mode = "brute" if n <= MONOTONE_BRUTE_GUARD else "assignment"
    C = ground_cost("quadratic", X, Y)
    identity_cost = float(np.trace(C))
    tol = rel_tol * (1.0 + identity_cost)
    if mode == "brute":
        if n > MONOTONE_BRUTE_GUARD:
            raise TooLarge(f"brute-force mode is guarded at N <= {MONOTONE_BRUTE_GUARD}")
        best = min(
            float(C[np.arange(n), perm].sum())
            for perm in map(list, itertools.permutations(range(n)))
        )
        return identity_cost <= best + tol
    if mode == "assignment":
        if n > MONOTONE_LP_GUARD:
            raise TooLarge(f"assignment mode is guarded at N <= {MONOTONE_LP_GUARD}")
        rows, cols = linear_sum_assignment(C)
        return identity_cost <= float(C[rows, cols].sum()) + tol
    raise ValueError(f"unknown mode {mode!r}")


def w2_kernel_mixtures(x_config, y_config, spec: KernelSpec, domain,
                       method: str = "auto", **kwargs) -> float:
    """Squared 2-Wasserstein distance between the rasterized kernel mixtures
    of two agent configurations."""
    mx = mixture_density(x_config, spec, domain)
    my = mixture_density(y_config, spec, domain)
    return w2_between_grids(mx, my, method=method, **kwargs).cost

"""Voronoi and capacity-constrained (generalized) partitions of the grid.

The capacity solver runs damped ascent with backtracking on the concave dual

    Phi(omega) = sum_i omega_i * target_i
                 + sum_cells mu_c * min_i (f(|c - x_i|) - omega_i),

whose supergradient is ``target - cell_masses(omega)``.  Grid cells are
atomic, so pure ascent stalls once the residual reaches single-cell mass
granularity; a final repair step splits near-tied boundary cells fractionally
(a small feasibility LP), which is exactly the structure of the optimal
semi-discrete plan and brings residuals down to solver precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .domain import GridDensity, ParticleConfig
from .errors import CapacityUnreachable, MaxIterExceeded
from .transport import ground_cost

_TIE_TOL = 1e-12


@dataclass(frozen=True)
class Partition:
    """Hard per-cell assignment to sites, with per-site masses and centroids."""

    sites: ParticleConfig
    assign: np.ndarray
    mass: np.ndarray
    centroid: np.ndarray
    boundary_cells: np.ndarray

    @property
    def n_sites(self) -> int:
        return self.sites.n


@dataclass(frozen=True)
class CapacityWeights:
    """Solved additive weights and the capacity-matched transport stats.

    ``masses`` and ``centroids`` account for the fractional split of tied
    boundary cells; ``residual = masses - targets``.  ``omega`` is stored
    mean-zero (weights matter only up to a common shift).
    """

    omega: np.ndarray
    residual: np.ndarray
    masses: np.ndarray
    centroids: np.ndarray
    cost: float
    dual_value: float
    iterations: int
    tie_mass: float


def _site_positions(sites) -> np.ndarray:
    if isinstance(sites, ParticleConfig):
        return sites.positions
    return np.atleast_2d(np.asarray(sites, dtype=float))


def _partition_from_scores(sites: ParticleConfig, mu_star: GridDensity,
                           scores: np.ndarray) -> Partition:
    assign = scores.argmin(axis=1)
    n = scores.shape[1]
    best = scores[np.arange(scores.shape[0]), assign]
    if n > 1:
        two = np.partition(scores, 1, axis=1)
        ties = (two[:, 1] - two[:, 0]) <= _TIE_TOL * (1.0 + np.abs(best))
    else:
        ties = np.zeros(scores.shape[0], dtype=bool)
    mass = np.bincount(assign, weights=mu_star.mass, minlength=n)
    centers = mu_star.domain.cell_centers()
    mx = np.bincount(assign, weights=mu_star.mass * centers[:, 0], minlength=n)
    my = np.bincount(assign, weights=mu_star.mass * centers[:, 1], minlength=n)
    pos = sites.positions
    centroid = pos.copy()
    nz = mass > 0
    centroid[nz, 0] = mx[nz] / mass[nz]
    centroid[nz, 1] = my[nz] / mass[nz]
    return Partition(sites, assign, mass, centroid, np.flatnonzero(ties))


def voronoi(sites: ParticleConfig, mu_star: GridDensity) -> Partition:
    """Nearest-site partition of the grid cells, ties to the lowest index."""
    d = ground_cost("quadratic", mu_star.domain.cell_centers(), sites.positions)
    return _partition_from_scores(sites, mu_star, d)


def weighted_voronoi(sites: ParticleConfig, mu_star: GridDensity,
                     f_kind: str, omega: np.ndarray) -> Partition:
    """Generalized partition by ``f(|c - x_i|) - omega_i`` (a power diagram
    for quadratic f), ties to the lowest index."""
    omega = np.asarray(omega, dtype=float).ravel()
    if omega.shape[0] != sites.n:
        raise ValueError("one weight per site required")
    scores = ground_cost(f_kind, mu_star.domain.cell_centers(), sites.positions)
    return _partition_from_scores(sites, mu_star, scores - omega[None, :])


def centroids(partition: Partition, mu_star: GridDensity) -> np.ndarray:
    """Mass-weighted cell centroids per site; empty sites keep their position."""
    n = partition.n_sites
    mass = np.bincount(partition.assign, weights=mu_star.mass, minlength=n)
    centers = mu_star.domain.cell_centers()
    mx = np.bincount(partition.assign, weights=mu_star.mass * centers[:, 0], minlength=n)
    my = np.bincount(partition.assign, weights=mu_star.mass * centers[:, 1], minlength=n)
    out = partition.sites.positions.copy()
    nz = mass > 0
    out[nz, 0] = mx[nz] / mass[nz]
    out[nz, 1] = my[nz] / mass[nz]
    return out


def _dual_value(scores: np.ndarray, mu_mass: np.ndarray, omega: np.ndarray,
                targets: np.ndarray) -> float:
    return float(omega @ targets + mu_mass @ (scores - omega[None, :]).min(axis=1))


def _cell_masses(scores: np.ndarray, mu_mass: np.ndarray, omega: np.ndarray,
                 n: int) -> tuple[np.ndarray, np.ndarray]:
    assign = (scores - omega[None, :]).argmin(axis=1)
    return assign, np.bincount(assign, weights=mu_mass, minlength=n)


def solve_capacity_weights(sites, mu_star: GridDensity, f_kind: str,
                           target_masses, tol: float | None = None,
                           max_iter: int = 2000,
                           omega0: np.ndarray | None = None) -> CapacityWeights:
    """Find weights so each site's generalized cell carries its target mass.

    Damped dual ascent (initial step N/2, halved whenever the dual would
    decrease) followed by fractional splitting of near-tied cells.  Raises
    :class:`MaxIterExceeded` with the best iterate attached if the residual
    tolerance cannot be met, and :class:`CapacityUnreachable` if some site
    cannot be given positive mass by any weight.
    """
    pos = _site_positions(sites)
    n = pos.shape[0]
    targets = np.asarray(target_masses, dtype=float).ravel()
    if targets.shape[0] != n:
        raise ValueError("one target mass per site required")
    if np.any(targets <= 0):
        raise ValueError("target masses must be positive")
    if abs(targets.sum() - 1.0) > 1e-12:
        raise ValueError("target masses must sum to 1")
    if tol is None:
        tol = 1e-4 / n

    dom = mu_star.domain
    scores = ground_cost(f_kind, dom.cell_centers(), pos)
    mu_mass = mu_star.mass
    omega = np.zeros(n) if omega0 is None else np.asarray(omega0, dtype=float).copy()

    # grid cells are atomic, so ascent cannot do better than single-cell mass
    # granularity; stop once it stalls near that floor and let the tie split
    # finish the job
    coarse = max(tol, 2.0 * float(mu_mass.max()))
    eta0 = n / 2.0
    eta = eta0
    phi = _dual_value(scores, mu_mass, omega, targets)
    best_omega, best_resid = omega.copy(), np.inf
    iterations = 0
    stall = 0
    deadline = coarse
    while iterations < max_iter:
        iterations += 1
        assign, masses = _cell_masses(scores, mu_mass, omega, n)
        grad = targets - masses
        resid = float(np.abs(grad).max())
        if resid < 0.9 * best_resid:
            stall = 0
        else:
            stall += 1
        if resid < best_resid:
            best_resid, best_omega = resid, omega.copy()
        if resid <= tol:
            break
        if best_resid <= deadline or stall >= 60:
            if deadline == tol:
                break
            split = _split_ties(scores, mu_mass, best_omega, targets, tol)
            if split is not None:
                assign, _ = _cell_masses(scores, mu_mass, best_omega, n)
                return _finalize(pos, dom, scores, mu_mass, best_omega,
                                 targets, assign, split, iterations)
            deadline, stall = tol, 0  # split failed; refine the dual further
        if np.any(masses == 0) and iterations % 5 == 1:
            omega, phi = _rescue_empty_sites(scores, mu_mass, omega, targets,
                                             masses, phi)
            continue
        # backtracking restarts from a healthy step each iteration: near kinks
        # of the piecewise-linear dual a shrunk step must not stick forever
        eta = min(eta * 4.0, eta0)
        stepped = False
        while eta > 1e-14:
            trial = omega + eta * grad
            phi_trial = _dual_value(scores, mu_mass, trial, targets)
            if phi_trial >= phi - 1e-15 * (1 + abs(phi)):
                omega, phi, stepped = trial, phi_trial, True
                break
            eta /= 2.0
        if not stepped:
            break

    omega = best_omega
    assign, _ = _cell_masses(scores, mu_mass, omega, n)
    split = _split_ties(scores, mu_mass, omega, targets, tol)
    cw = _finalize(pos, dom, scores, mu_mass, omega, targets, assign, split,
                   iterations)
    if np.abs(cw.residual).max() > tol:
        raise MaxIterExceeded(
            f"capacity residual {np.abs(cw.residual).max():.3e} > tol {tol:.3e}",
            best=cw)
    return cw


def _rescue_empty_sites(scores, mu_mass, omega, targets, masses, phi):
    """Give zero-mass sites a weight that strictly wins one positive-mass
    cell; keep the move only if the dual does not decrease."""
    n = len(omega)
    for i in np.flatnonzero(masses == 0):
        others = np.delete(np.arange(n), i)
        other_best = (scores[:, others] - omega[others][None, :]).min(axis=1)
        needed = scores[:, i] - other_best
        candidates = np.flatnonzero(mu_mass > 0)
        if candidates.size == 0:
            raise CapacityUnreachable(i, "target measure has no mass")
        c = candidates[np.argmin(needed[candidates])]
        margin = 1e-9 * (1.0 + abs(float(needed[c])))
        trial = omega.copy()
        trial[i] = needed[c] + margin
        _, m_trial = _cell_masses(scores, mu_mass, trial, n)
        if m_trial[i] <= 0:
            raise CapacityUnreachable(i)
        phi_trial = _dual_value(scores, mu_mass, trial, targets)
        if phi_trial >= phi - 1e-15 * (1 + abs(phi)):
            omega, phi = trial, phi_trial
    return omega, phi


def _split_ties(scores, mu_mass, omega, targets, tol):
    """Fractionally assign near-tied cells so the masses match the targets.

    Returns ``(cells, cand_sites, fractions)`` arrays of aligned length, or
    None when no candidate gap yields a feasible split within tolerance."""
    n = len(omega)
    eff = scores - omega[None, :]
    order = np.partition(eff, 0, axis=1)
    best = order[:, 0]
    for gap in (1e-11, 1e-9, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0):
        margin = gap * (1.0 + np.abs(best))
        cand = eff <= (best + margin)[:, None]
        multi = (cand.sum(axis=1) > 1) & (mu_mass > 0)
        tied_cells = np.flatnonzero(multi)
        hard = ~multi & (mu_mass > 0)
        hard_assign = eff[hard].argmin(axis=1) if np.any(hard) else np.array([], int)
        fixed = np.bincount(hard_assign, weights=mu_mass[hard], minlength=n)
        need = targets - fixed
        if np.any(need < -1e-12):
            continue
        if tied_cells.size == 0:
            if np.abs(need).max() <= tol:
                return (np.array([], int), np.array([], int), np.array([]))
            continue
        cc, ss = np.nonzero(cand[tied_cells])
        nv = len(cc)
        rows = np.concatenate([cc, tied_cells.shape[0] + ss])
        cols = np.concatenate([np.arange(nv), np.arange(nv)])
        data = np.concatenate([np.ones(nv), mu_mass[tied_cells][cc]])
        A = sparse.csr_matrix((data, (rows, cols)),
                              shape=(tied_cells.shape[0] + n, nv))
        b = np.concatenate([np.ones(tied_cells.shape[0]), np.maximum(need, 0.0)])
        obj = mu_mass[tied_cells][cc] * scores[tied_cells[cc], ss]
        res = linprog(obj, A_eq=A, b_eq=b, bounds=(0, 1), method="highs")
        if res.status == 0:
            return tied_cells[cc], ss, res.x
    return None


def _finalize(pos, dom, scores, mu_mass, omega, targets, assign, split,
              iterations) -> CapacityWeights:
    n = pos.shape[0]
    centers = dom.cell_centers()
    if split is None:
        w_cells, w_sites, w_frac = np.array([], int), np.array([], int), np.array([])
        hard_mask = np.ones(len(mu_mass), dtype=bool)
    else:
        w_cells, w_sites, w_frac = split
        hard_mask = np.ones(len(mu_mass), dtype=bool)
        hard_mask[w_cells] = False
    hard_cells = np.flatnonzero(hard_mask)
    hard_assign = assign[hard_cells]
    hm = mu_mass[hard_cells]
    masses = np.bincount(hard_assign, weights=hm, minlength=n)
    sx = np.bincount(hard_assign, weights=hm * centers[hard_cells, 0], minlength=n)
    sy = np.bincount(hard_assign, weights=hm * centers[hard_cells, 1], minlength=n)
    cost = float((hm * scores[hard_cells, hard_assign]).sum())
    tie_mass = 0.0
    if len(w_cells):
        wm = mu_mass[w_cells] * w_frac
        masses += np.bincount(w_sites, weights=wm, minlength=n)
        sx += np.bincount(w_sites, weights=wm * centers[w_cells, 0], minlength=n)
        sy += np.bincount(w_sites, weights=wm * centers[w_cells, 1], minlength=n)
        cost += float((wm * scores[w_cells, w_sites]).sum())
        tie_mass = float(wm.sum())
    cent = pos.copy()
    nz = masses > 0
    cent[nz, 0] = sx[nz] / masses[nz]
    cent[nz, 1] = sy[nz] / masses[nz]
    omega0 = omega - omega.mean()
    return CapacityWeights(
        omega=omega0,
        residual=masses - targets,
        masses=masses,
        centroids=cent,
        cost=cost,
        dual_value=_dual_value(scores, mu_mass, omega, targets),
        iterations=iterations,
        tie_mass=tie_mass,
    )

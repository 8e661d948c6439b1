"""Rectangular domain with a regular grid, and probability measures on it.

Grid cells are indexed flat as ``index = iy * nx + ix`` (x varies fastest),
which is also the row-major order used by the CSV serialization.  All grid
integrals in this repository use the midpoint rule: a function is sampled at
cell centers and weighted by cell masses or cell area.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import AllZeroDensity, NegativeDensity


@dataclass(frozen=True)
class Domain:
    """Axis-aligned rectangle ``[lo, hi]`` with an ``nx`` by ``ny`` cell grid."""

    lo: tuple[float, float]
    hi: tuple[float, float]
    nx: int
    ny: int

    def __post_init__(self):
        lo = (float(self.lo[0]), float(self.lo[1]))
        hi = (float(self.hi[0]), float(self.hi[1]))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if not (lo[0] < hi[0] and lo[1] < hi[1]):
            raise ValueError("domain requires lo < hi componentwise")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("cell counts must be positive")

    @property
    def dx(self) -> float:
        return (self.hi[0] - self.lo[0]) / self.nx

    @property
    def dy(self) -> float:
        return (self.hi[1] - self.lo[1]) / self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def cell_centers(self) -> np.ndarray:
        """Centers of all cells, shape ``(nx*ny, 2)``, flat index ``iy*nx+ix``."""
        xs = self.lo[0] + (np.arange(self.nx) + 0.5) * self.dx
        ys = self.lo[1] + (np.arange(self.ny) + 0.5) * self.dy
        gx, gy = np.meshgrid(xs, ys)  # shape (ny, nx)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def axis_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.lo[0] + (np.arange(self.nx) + 0.5) * self.dx
        ys = self.lo[1] + (np.arange(self.ny) + 0.5) * self.dy
        return xs, ys

    def cell_index(self, points: np.ndarray) -> np.ndarray:
        """Flat cell index for each point; points on the upper boundary are
        assigned to the last cell along that axis."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ix = np.floor((pts[:, 0] - self.lo[0]) / self.dx).astype(int)
        iy = np.floor((pts[:, 1] - self.lo[1]) / self.dy).astype(int)
        ix = np.clip(ix, 0, self.nx - 1)
        iy = np.clip(iy, 0, self.ny - 1)
        return iy * self.nx + ix

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (
            (pts[:, 0] >= self.lo[0])
            & (pts[:, 0] <= self.hi[0])
            & (pts[:, 1] >= self.lo[1])
            & (pts[:, 1] <= self.hi[1])
        )


def _normalized(values: np.ndarray) -> np.ndarray:
    mass = values / values.sum()
    # second pass tightens the sum to 1 up to a few ulps even on large grids
    return mass / mass.sum()


@dataclass(frozen=True)
class GridDensity:
    """Probability masses per grid cell (flat, ``iy*nx+ix`` order)."""

    domain: Domain
    mass: np.ndarray

    def __post_init__(self):
        mass = np.ascontiguousarray(self.mass, dtype=float).ravel()
        object.__setattr__(self, "mass", mass)
        if mass.shape != (self.domain.n_cells,):
            raise ValueError(
                f"mass must have {self.domain.n_cells} entries, got {mass.shape}"
            )
        if np.any(mass < 0):
            raise ValueError("cell masses must be nonnegative")
        if abs(mass.sum() - 1.0) > 1e-12:
            raise ValueError(f"cell masses must sum to 1, got {mass.sum()!r}")
        mass.setflags(write=False)

    def as_array(self) -> np.ndarray:
        """Masses reshaped to ``(ny, nx)``."""
        return self.mass.reshape(self.domain.ny, self.domain.nx)


@dataclass(frozen=True)
class ParticleConfig:
    """Positions of N agents, shape ``(N, 2)``."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.ascontiguousarray(np.atleast_2d(self.positions), dtype=float)
        object.__setattr__(self, "positions", pos)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise ValueError("positions must be an (N, 2) array with N >= 1")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        pos.setflags(write=False)

    @property
    def n(self) -> int:
        return self.positions.shape[0]


def make_grid(domain: Domain, density_fn) -> GridDensity:
    """Rasterize a nonnegative scalar field into a normalized grid measure.

    ``density_fn`` receives an ``(M, 2)`` array of cell centers and must
    return ``(M,)`` nonnegative values.
    """
    values = np.asarray(density_fn(domain.cell_centers()), dtype=float).ravel()
    if values.shape != (domain.n_cells,):
        raise ValueError("density_fn must return one value per cell")
    if np.any(values < 0):
        raise NegativeDensity("density_fn returned negative values")
    if not np.any(values > 0):
        raise AllZeroDensity("density_fn is zero at every cell center")
    return GridDensity(domain, _normalized(values))


def sample(density: GridDensity, n: int, seed) -> ParticleConfig:
    """Draw ``n`` points: a categorical draw over cells, then uniform jitter
    within the chosen cell.  Pure function of ``(density, n, seed)``."""
    if n < 1:
        raise ValueError("need n >= 1 samples")
    dom = density.domain
    rng = np.random.default_rng(seed)
    cells = rng.choice(dom.n_cells, size=n, p=density.mass)
    jitter = rng.random((n, 2))
    ix = cells % dom.nx
    iy = cells // dom.nx
    x = dom.lo[0] + (ix + jitter[:, 0]) * dom.dx
    y = dom.lo[1] + (iy + jitter[:, 1]) * dom.dy
    return ParticleConfig(np.column_stack([x, y]))


def histogram(config: ParticleConfig, domain: Domain) -> GridDensity:
    """Normalized per-cell counts of the particle positions."""
    if not np.all(domain.contains(config.positions)):
        raise ValueError("all positions must lie inside the domain")
    counts = np.bincount(domain.cell_index(config.positions), minlength=domain.n_cells)
    return GridDensity(domain, counts / config.n)


def total_variation(a: GridDensity, b: GridDensity) -> float:
    """Total-variation distance between two grid measures on the same domain."""
    if a.domain != b.domain:
        raise ValueError("grid measures live on different domains")
    return 0.5 * float(np.abs(a.mass - b.mass).sum())


def coarsen(density: GridDensity, factor: int) -> GridDensity:
    """Aggregate blocks of ``factor`` x ``factor`` cells into one."""
    dom = density.domain
    if dom.nx % factor or dom.ny % factor:
        raise ValueError("cell counts must be divisible by the factor")
    coarse = Domain(dom.lo, dom.hi, dom.nx // factor, dom.ny // factor)
    blocks = density.as_array().reshape(
        coarse.ny, factor, coarse.nx, factor
    ).sum(axis=(1, 3))
    return GridDensity(coarse, _normalized(blocks.ravel()))


# -- CSV serialization --------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def grid_to_csv(density: GridDensity, path_or_buf) -> None:
    """Write a grid measure: a geometry header row, then one mass per row
    in flat (row-major) order."""
    dom = density.domain
    buf = io.StringIO()
    buf.write("nx,ny,lo_x,lo_y,hi_x,hi_y\n")
    buf.write(
        f"{dom.nx},{dom.ny},{_fmt(dom.lo[0])},{_fmt(dom.lo[1])},"
        f"{_fmt(dom.hi[0])},{_fmt(dom.hi[1])}\n"
    )
    buf.write("mass\n")
    for m in density.mass:
        buf.write(_fmt(m) + "\n")
    _write_text(path_or_buf, buf.getvalue())


def grid_from_csv(path_or_buf) -> GridDensity:
    lines = _read_text(path_or_buf).splitlines()
    if len(lines) < 3 or lines[0] != "nx,ny,lo_x,lo_y,hi_x,hi_y":
        raise ValueError("not a grid-density CSV")
    nx, ny, lox, loy, hix, hiy = lines[1].split(",")
    dom = Domain((float(lox), float(loy)), (float(hix), float(hiy)), int(nx), int(ny))
    mass = np.array([float(v) for v in lines[3:] if v], dtype=float)
    return GridDensity(dom, _normalized(mass))


def particles_to_csv(config: ParticleConfig, path_or_buf) -> None:
    buf = io.StringIO()
    buf.write("id,x,y\n")
    for i, (x, y) in enumerate(config.positions):
        buf.write(f"{i},{_fmt(x)},{_fmt(y)}\n")
    _write_text(path_or_buf, buf.getvalue())


def particles_from_csv(path_or_buf) -> ParticleConfig:
    lines = _read_text(path_or_buf).splitlines()
    if not lines or lines[0] != "id,x,y":
        raise ValueError("not a particle CSV")
    rows = [line.split(",") for line in lines[1:] if line]
    return ParticleConfig(np.array([[float(r[1]), float(r[2])] for r in rows]))


def _write_text(path_or_buf, text: str) -> None:
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _read_text(path_or_buf) -> str:
    if hasattr(path_or_buf, "read"):
        return path_or_buf.read()
    with open(path_or_buf, "r", encoding="utf-8") as fh:
        return fh.read()

"""Experiment orchestration: config parsing, seeded runs, artifacts, and the
cross-module validation suites.

The config file is a flat ``key = value`` format: one assignment per line,
``#`` comments, values in JSON syntax (numbers, booleans, strings, lists);
bare words are read as strings.  ``default_config_text()`` documents every
key.  All randomness flows from ``seed`` through per-run substreams, so a
(config, seed) pair reproduces artifacts byte for byte.
"""

from __future__ import annotations

import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .descent import DescentConfig, agent_limit_step, run
from .domain import (Domain, GridDensity, ParticleConfig, _fmt, grid_to_csv,
                     histogram, make_grid, particles_to_csv, sample,
                     total_variation)
from .errors import ConfigError
from .kernels import KernelSpec, ShrunkenDomain, min_separation
from .objectives import (ObjectiveSpec, balanced_grad, balanced_value,
                         distortion_transport_report, kernel_grad,
                         kernel_value)
from .transport import cyclically_monotone, w2_kernel_mixtures

_DEFAULTS = dict(
    domain_lo=[0.0, 0.0],
    domain_hi=[1.0, 1.0],
    grid_nx=64,
    grid_ny=64,
    target_means=[[0.3, 0.3], [0.72, 0.4], [0.5, 0.78]],
    target_sigmas=[0.08, 0.1, 0.09],
    target_weights=[0.4, 0.3, 0.3],
    target_truncate=3.0,
    target_mode="histogram",
    target_samples=20000,
    scheme="lloyd",
    agent_counts=[10, 25, 50, 100],
    kernel_h=0.05,
    f_kind="quadratic",
    tau=0.25,
    max_steps=500,
    step_tol=1e-6,
    inner_tol=1e-9,
    inner_max_iter=30,
    guard="strict",
    ot_method="auto",
    sinkhorn_eps=1e-3,
    capacity_tol_scale=1e-4,
    seed=0,
    out_dir="runs/demo",
    threads=1,
    timings=False,
)

_COMMENTS = {
    "domain_lo": "rectangle corners",
    "grid_nx": "grid resolution used to quantize the target",
    "target_means": "Gaussian mixture defining the target density",
    "target_truncate": "Mahalanobis truncation radius; 0 keeps full tails",
    "target_mode": "histogram: sample + normalize counts; analytic: rasterize the density",
    "scheme": "lloyd | agent_prox | flow | macro",
    "agent_counts": "one run per swarm size",
    "kernel_h": "kernel bandwidth for the smoothed objective",
    "tau": "proximal step size",
    "guard": "strict: enforce the step-size bound; backtracking: halve tau on increases",
    "ot_method": "auto | lp | sinkhorn for grid transport solves",
    "capacity_tol_scale": "capacity residual tolerance = scale / N",
    "timings": "write wall-clock times into trace CSVs (breaks byte determinism)",
}


@dataclass
class ExperimentConfig:
    domain_lo: list = field(default_factory=lambda: list(_DEFAULTS["domain_lo"]))
    domain_hi: list = field(default_factory=lambda: list(_DEFAULTS["domain_hi"]))
    grid_nx: int = _DEFAULTS["grid_nx"]
    grid_ny: int = _DEFAULTS["grid_ny"]
    target_means: list = field(default_factory=lambda: [list(m) for m in _DEFAULTS["target_means"]])
    target_sigmas: list = field(default_factory=lambda: list(_DEFAULTS["target_sigmas"]))
    target_weights: list = field(default_factory=lambda: list(_DEFAULTS["target_weights"]))
    target_truncate: float = _DEFAULTS["target_truncate"]
    target_mode: str = _DEFAULTS["target_mode"]
    target_samples: int = _DEFAULTS["target_samples"]
    scheme: str = _DEFAULTS["scheme"]
    agent_counts: list = field(default_factory=lambda: list(_DEFAULTS["agent_counts"]))
    kernel_h: float = _DEFAULTS["kernel_h"]
    f_kind: str = _DEFAULTS["f_kind"]
    tau: float = _DEFAULTS["tau"]
    max_steps: int = _DEFAULTS["max_steps"]
    step_tol: float = _DEFAULTS["step_tol"]
    inner_tol: float = _DEFAULTS["inner_tol"]
    inner_max_iter: int = _DEFAULTS["inner_max_iter"]
    guard: str = _DEFAULTS["guard"]
    ot_method: str = _DEFAULTS["ot_method"]
    sinkhorn_eps: float = _DEFAULTS["sinkhorn_eps"]
    capacity_tol_scale: float = _DEFAULTS["capacity_tol_scale"]
    seed: int = _DEFAULTS["seed"]
    out_dir: str = _DEFAULTS["out_dir"]
    threads: int = _DEFAULTS["threads"]
    timings: bool = _DEFAULTS["timings"]

    def validate(self) -> None:
        if self.scheme not in ("lloyd", "agent_prox", "flow", "macro"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if not self.agent_counts or any(int(n) < 1 for n in self.agent_counts):
            raise ConfigError("agent_counts must be a non-empty list of N >= 1")
        if len(self.target_means) != len(self.target_weights) or \
                len(self.target_means) != len(self.target_sigmas):
            raise ConfigError("target mixture lists must have equal lengths")
        if abs(sum(self.target_weights) - 1.0) > 1e-9:
            raise ConfigError("target mixture weights must sum to 1")
        if self.target_mode not in ("histogram", "analytic"):
            raise ConfigError(f"unknown target_mode {self.target_mode!r}")
        if self.guard not in ("strict", "backtracking"):
            raise ConfigError(f"unknown guard {self.guard!r}")
        if self.f_kind not in ("quadratic", "linear"):
            raise ConfigError(f"unknown f_kind {self.f_kind!r}")
        if not (self.domain_lo[0] < self.domain_hi[0]
                and self.domain_lo[1] < self.domain_hi[1]):
            raise ConfigError("domain_lo must be below domain_hi componentwise")
        if self.tau <= 0 or self.kernel_h <= 0:
            raise ConfigError("tau and kernel_h must be positive")

    def domain(self) -> Domain:
        return Domain(tuple(self.domain_lo), tuple(self.domain_hi),
                      int(self.grid_nx), int(self.grid_ny))


def parse_config_text(text: str) -> dict:
    """Parse the flat key = value format; raises ConfigError with the line."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, _, rhs = line.partition("=")
        key = key.strip()
        rhs = rhs.strip()
        if not key or not rhs:
            raise ConfigError("empty key or value", line=lineno)
        try:
            out[key] = json.loads(rhs)
        except json.JSONDecodeError:
            if any(ch in rhs for ch in "[]{}\","):
                raise ConfigError(f"malformed value {rhs!r}", line=lineno)
            out[key] = rhs  # bare word
    return out


def config_from_dict(values: dict) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(parse_config_text(fh.read()))


def default_config_text() -> str:
    buf = io.StringIO()
    buf.write("# experiment configuration (flat key = value, JSON values)\n")
    for key, val in _DEFAULTS.items():
        if key in _COMMENTS:
            buf.write(f"# {_COMMENTS[key]}\n")
        buf.write(f"{key} = {json.dumps(val)}\n")
    return buf.getvalue()


# -- target construction -----------------------------------------------------

def mixture_density_fn(cfg: ExperimentConfig):
    means = np.asarray(cfg.target_means, dtype=float)
    sigmas = np.asarray(cfg.target_sigmas, dtype=float)
    weights = np.asarray(cfg.target_weights, dtype=float)
    cut = float(cfg.target_truncate)

    def fn(points: np.ndarray) -> np.ndarray:
        out = np.zeros(points.shape[0])
        for m, s, w in zip(means, sigmas, weights):
            r2 = ((points - m) ** 2).sum(axis=1) / (s * s)
            val = w / (2 * np.pi * s * s) * np.exp(-r2 / 2.0)
            if cut > 0:
                val = np.where(r2 < cut * cut, val, 0.0)
            out += val
        return out

    return fn


def sample_target_mixture(cfg: ExperimentConfig, n: int, rng) -> np.ndarray:
    """i.i.d. draws from the (truncated) mixture, rejected onto the domain."""
    means = np.asarray(cfg.target_means, dtype=float)
    sigmas = np.asarray(cfg.target_sigmas, dtype=float)
    weights = np.asarray(cfg.target_weights, dtype=float)
    cut = float(cfg.target_truncate)
    dom = cfg.domain()
    out = np.empty((n, 2))
    got = 0
    while got < n:
        todo = n - got
        comp = rng.choice(len(weights), size=todo, p=weights)
        pts = means[comp] + sigmas[comp][:, None] * rng.standard_normal((todo, 2))
        ok = dom.contains(pts)
        if cut > 0:
            r2 = ((pts - means[comp]) ** 2).sum(axis=1) / sigmas[comp] ** 2
            ok &= r2 < cut * cut
        pts = pts[ok]
        out[got:got + len(pts)] = pts
        got += len(pts)
    return out


def build_target(cfg: ExperimentConfig) -> GridDensity:
    dom = cfg.domain()
    if cfg.target_mode == "analytic":
        return make_grid(dom, mixture_density_fn(cfg))
    rng = np.random.default_rng([int(cfg.seed), 777])
    pts = sample_target_mixture(cfg, int(cfg.target_samples), rng)
    return histogram(ParticleConfig(pts), dom)


# -- experiment runs -----------------------------------------------------------

def _objective_for(cfg: ExperimentConfig, target: GridDensity) -> ObjectiveSpec:
    if cfg.scheme == "lloyd":
        return ObjectiveSpec("balanced", target, cfg.f_kind)
    return ObjectiveSpec("kernel", target, "quadratic", KernelSpec(cfg.kernel_h))


def _initial_positions(cfg: ExperimentConfig, target: GridDensity,
                       n: int) -> ParticleConfig:
    rng = np.random.default_rng([int(cfg.seed), int(n)])
    dom = cfg.domain()
    if cfg.scheme in ("agent_prox", "flow"):
        shr = ShrunkenDomain(dom, cfg.kernel_h)
        lo, hi = shr.lo, shr.hi
    else:
        lo, hi = dom.lo, dom.hi
    pts = rng.random((n, 2))
    pts[:, 0] = lo[0] + pts[:, 0] * (hi[0] - lo[0])
    pts[:, 1] = lo[1] + pts[:, 1] * (hi[1] - lo[1])
    return ParticleConfig(pts)


def _descent_config(cfg: ExperimentConfig, n: int) -> DescentConfig:
    # quadratic transport costs are 2-smooth, and the per-agent objective
    # inherits a 2/N curvature bound
    alpha = 2.0 / n if cfg.guard == "strict" else None
    return DescentConfig(tau=cfg.tau, max_steps=int(cfg.max_steps),
                         step_tol=cfg.step_tol, inner_tol=cfg.inner_tol,
                         inner_max_iter=int(cfg.inner_max_iter),
                         seed=int(cfg.seed), guard=cfg.guard,
                         alpha_estimate=alpha)


def trace_to_csv(trace, path, timings_ms=None) -> None:
    rows = []
    for k, row in enumerate(trace.steps):
        wall = 0.0 if timings_ms is None else timings_ms[k]
        rows.append(f"{k},{_fmt(row.value)},{_fmt(row.step_norm)},"
                    f"{row.inner_iters},{_fmt(wall)}")
    text = "step,value,step_norm,inner_iters,wall_ms\n" + "\n".join(rows) + "\n"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run the configured scheme for every swarm size and write artifacts.

    Returns the summary dictionary (also written as ``summary.json``).
    """
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = build_target(cfg)
    grid_to_csv(target, out / "target_density.csv")
    (out / "config_resolved.txt").write_text(
        "".join(f"{f.name} = {json.dumps(getattr(cfg, f.name))}\n"
                for f in fields(ExperimentConfig)), encoding="utf-8")

    if cfg.scheme == "macro":
        return _run_macro_experiment(cfg, target, out)

    objective = _objective_for(cfg, target)

    def one(n: int):
        t0 = time.perf_counter()
        trace = run(cfg.scheme, _initial_positions(cfg, target, n), objective,
                    _descent_config(cfg, n), ot_method=cfg.ot_method,
                    epsilon=cfg.sinkhorn_eps,
                    capacity_tol=cfg.capacity_tol_scale / n)
        return n, trace, time.perf_counter() - t0

    counts = [int(n) for n in cfg.agent_counts]
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=int(cfg.threads)) as pool:
            results = dict((n, (tr, dt)) for n, tr, dt in pool.map(one, counts))
    else:
        results = dict((n, (tr, dt)) for n, tr, dt in map(one, counts))

    summary = {"scheme": cfg.scheme, "seed": int(cfg.seed),
               "steady_state": {}, "terminated": {}, "steps": {}}
    for n in counts:
        trace, dt = results[n]
        timings = [dt * 1000.0 / max(1, len(trace.steps))] * len(trace.steps) \
            if cfg.timings else None
        trace_to_csv(trace, out / f"trace_N{n}.csv", timings)
        particles_to_csv(trace.steps[-1].state, out / f"final_positions_N{n}.csv")
        summary["steady_state"][str(n)] = trace.steps[-1].value
        summary["terminated"][str(n)] = trace.terminated
        summary["steps"][str(n)] = len(trace.steps) - 1
    _write_json(out / "summary.json", summary)
    return summary


def _run_macro_experiment(cfg: ExperimentConfig, target: GridDensity,
                          out: Path) -> dict:
    dom = cfg.domain()
    init = make_grid(dom, lambda p: np.ones(p.shape[0]))
    trace = run("macro", init, target, _descent_config(cfg, 1),
                ot_method=cfg.ot_method, epsilon=cfg.sinkhorn_eps)
    trace_to_csv(trace, out / "trace_macro.csv")
    grid_to_csv(trace.steps[-1].state, out / "final_density.csv")
    summary = {"scheme": "macro", "seed": int(cfg.seed),
               "steady_state": {"macro": trace.steps[-1].value},
               "terminated": {"macro": trace.terminated},
               "steps": {"macro": len(trace.steps) - 1}}
    _write_json(out / "summary.json", summary)
    return summary


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

# -- validation suites -----------------------------------------------------------

def _entry(name: str, value: float, threshold: float) -> dict:
    return {"name": name, "value": float(value), "threshold": float(threshold),
            "passed": bool(value <= threshold)}


def compact_bimodal_fn(r: float = 0.3):
    """Two truncated Gaussian bumps with compact support (keeps the exact
    transport solves on reduced supports fast)."""
    def fn(pts: np.ndarray) -> np.ndarray:
        d1 = ((pts - [0.3, 0.35]) ** 2).sum(axis=1)
        d2 = ((pts - [0.7, 0.7]) ** 2).sum(axis=1)
        v = np.exp(-d1 / 0.024) + 0.8 * np.exp(-d2 / 0.04)
        return np.where(np.minimum(d1, d2) < r * r, v, 0.0)
    return fn


def separated_config(rng, n: int, delta: float, lo: float, hi: float) -> ParticleConfig:
    """Rejection-sample an interior configuration with pairwise separation
    strictly above ``delta``."""
    while True:
        pts = lo + (hi - lo) * rng.random((n, 2))
        if n == 1 or min_separation(ParticleConfig(pts)) > delta:
            return ParticleConfig(pts)


def suite_prop4(seed: int = 0, instances: int = 20) -> dict:
    """Distortion equals the free-weight transport cost; minimizing weights
    equal the nearest-site cell masses up to tie-broken boundary mass."""
    t0 = time.perf_counter()
    dom = Domain((0, 0), (1, 1), 32, 32)
    uniform = make_grid(dom, lambda p: np.ones(p.shape[0]))
    bimodal = make_grid(dom, compact_bimodal_fn())
    rng = np.random.default_rng([seed, 4])
    checks = []
    for k in range(instances):
        target = uniform if k % 2 == 0 else bimodal
        n = int(rng.integers(1, 7))
        cfg = ParticleConfig(0.05 + 0.9 * rng.random((n, 2)))
        spec = ObjectiveSpec("distortion", target, "quadratic")
        rep = distortion_transport_report(cfg, spec)
        checks.append(_entry(f"gap_{k}", rep.gap,
                             1e-9 * (1.0 + rep.distortion)))
        checks.append(_entry(f"weight_dev_{k}", rep.weight_deviation,
                             rep.boundary_mass + 1e-9))
    return _suite_result("prop4", checks, time.perf_counter() - t0)


def suite_monotone(seed: int = 0, steps: int = 200) -> dict:
    """Zero objective increases for the Lloyd and per-agent proximal runs
    under the strict step-size guard."""
    t0 = time.perf_counter()
    checks = []
    dom32 = Domain((0, 0), (1, 1), 32, 32)
    target32 = make_grid(dom32, compact_bimodal_fn())
    rng = np.random.default_rng([seed, 5])
    init = ParticleConfig(rng.random((25, 2)))
    dc = DescentConfig(tau=0.25, max_steps=steps, step_tol=1e-9,
                       guard="strict", alpha_estimate=2.0 / 25)
    tr = run("lloyd", init, ObjectiveSpec("balanced", target32, "quadratic"),
             dc, capacity_tol=1e-4 / 25)
    vals = np.array([r.value for r in tr.steps])
    checks.append(_entry("lloyd_increases",
                         int((np.diff(vals) > 2e-9).sum()), 0))

    dom16 = Domain((0, 0), (1, 1), 16, 16)
    target16 = make_grid(dom16, compact_bimodal_fn())
    spec = ObjectiveSpec("kernel", target16, "quadratic", KernelSpec(0.1))
    init2 = ParticleConfig(0.12 + 0.76 * np.random.default_rng([seed, 6]).random((25, 2)))
    tr2 = run("agent_prox", init2, spec, dc, ot_method="lp")
    vals2 = np.array([r.value for r in tr2.steps])
    checks.append(_entry("agent_prox_increases",
                         int((np.diff(vals2) > 2e-9).sum()), 0))
    return _suite_result("monotone", checks, time.perf_counter() - t0)


def suite_w2corollary(seed: int = 0, cases: int = 10) -> dict:
    """Transport between kernel mixtures of separated configurations matched
    with cyclically monotone displacements equals the mean squared agent
    displacement, to 5% at 64x64."""
    t0 = time.perf_counter()
    dom = Domain((0, 0), (1, 1), 64, 64)
    h, delta, n = 0.1, 0.25, 4
    spec = KernelSpec(h)
    rng = np.random.default_rng([seed, 7])
    checks = []
    for k in range(cases):
        x = separated_config(rng, n, delta, 0.15, 0.85)
        if k % 2 == 0:
            disp = np.tile(0.03 + 0.04 * rng.random(2), (n, 1))
        else:
            disp = rng.normal(size=(n, 2))
            disp *= (0.2 + 0.7 * rng.random((n, 1))) * (delta / 2 * 0.45) \
                / np.linalg.norm(disp, axis=1, keepdims=True)
        y = ParticleConfig(np.clip(x.positions + disp, h, 1 - h))
        if not cyclically_monotone(x.positions, y.positions):
            continue
        got = w2_kernel_mixtures(x, y, spec, dom, method="lp")
        ref = float(((y.positions - x.positions) ** 2).sum()) / n
        checks.append(_entry(f"rel_err_{k}", abs(got - ref) / ref, 0.05))
    return _suite_result("w2corollary", checks, time.perf_counter() - t0)


def suite_gradients(seed: int = 0, cases: int = 10) -> dict:
    """Transport-dual gradients against central finite differences of the
    evaluation path (step 1e-3)."""
    t0 = time.perf_counter()
    checks = []
    dom = Domain((0, 0), (1, 1), 32, 32)
    target = make_grid(dom, compact_bimodal_fn(0.2))
    kspec = ObjectiveSpec("kernel", target, "quadratic", KernelSpec(0.1))
    rng = np.random.default_rng([seed, 8])
    for k in range(cases):
        n = int(rng.integers(3, 9))
        cfg = ParticleConfig(0.15 + 0.7 * rng.random((n, 2)))
        g = kernel_grad(cfg, kspec, method="lp")
        fd = _central_fd(lambda c: kernel_value(c, kspec, method="lp"),
                         cfg.positions)
        rel = np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-12)
        checks.append(_entry(f"kernel_fd_{k}", rel, 1e-2))

    dom64 = Domain((0, 0), (1, 1), 64, 64)
    target64 = make_grid(dom64, compact_bimodal_fn())
    bspec = ObjectiveSpec("balanced", target64, "quadratic")
    for k in range(cases):
        n = int(rng.integers(3, 9))
        cfg = ParticleConfig(0.1 + 0.8 * rng.random((n, 2)))
        _, cap = balanced_value(cfg, bspec, tol=1e-6 / n)
        g = balanced_grad(cfg, bspec, capacity=cap)

        def value(c, _n=n, _cap=cap):
            v, _ = balanced_value(c, bspec, tol=1e-6 / _n, omega0=_cap.omega)
            return v

        fd = _central_fd(value, cfg.positions)
        rel = np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-12)
        checks.append(_entry(f"balanced_fd_{k}", rel, 2e-2))
    return _suite_result("gradients", checks, time.perf_counter() - t0)


def _central_fd(value_fn, positions: np.ndarray, step: float = 1e-3) -> np.ndarray:
    fd = np.zeros_like(positions)
    for i in range(positions.shape[0]):
        for k in (0, 1):
            pp = positions.copy()
            pp[i, k] += step
            pm = positions.copy()
            pm[i, k] -= step
            fd[i, k] = (value_fn(ParticleConfig(pp))
                        - value_fn(ParticleConfig(pm))) / (2 * step)
    return fd


def suite_consistency(seed: int = 0, n_particles: int = 2000,
                      steps: int = 10) -> dict:
    """Particle cloud under the pointwise proximal map against the grid
    pushforward from the same initial density: total variation of the final
    histogram within the frozen 0.08 threshold at 32x32."""
    t0 = time.perf_counter()
    from .descent import macro_prox_step

    dom = Domain((0, 0), (1, 1), 32, 32)
    target = make_grid(dom, compact_bimodal_fn())
    init = make_grid(dom, lambda p: np.where(
        ((p - [0.5, 0.45]) ** 2).sum(axis=1) < 0.12, 1.0, 0.0))
    particles = sample(init, n_particles, [seed, 9])
    mu = init
    for _ in range(steps):
        particles = agent_limit_step(particles, target, tau=0.25, method="lp")
        mu, _ = macro_prox_step(mu, target, tau=0.25, method="lp")
    tv = total_variation(histogram(particles, dom), mu)
    checks = [_entry("macro_micro_tv", tv, 0.08)]
    return _suite_result("consistency", checks, time.perf_counter() - t0)


SUITES = {
    "prop4": suite_prop4,
    "monotone": suite_monotone,
    "w2corollary": suite_w2corollary,
    "gradients": suite_gradients,
    "consistency": suite_consistency,
}


def _suite_result(name: str, checks: list, elapsed: float) -> dict:
    return {"suite": name, "passed": all(c["passed"] for c in checks),
            "elapsed_s": elapsed, "checks": checks}


def run_suite(name: str, seed: int = 0) -> dict:
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name](seed=seed)


# -- plots -------------------------------------------------------------------------

def render_plots(run_dir) -> list:
    """Render final-position scatters over the grayscale target plus the
    objective-vs-step curves; also emit the plotted series as CSV so the
    figures can be rebuilt without a renderer.  Returns written paths."""
    from .domain import grid_from_csv, particles_from_csv
    from .errors import MissingArtifacts

    run_dir = Path(run_dir)
    target_path = run_dir / "target_density.csv"
    traces = sorted(run_dir.glob("trace_N*.csv"),
                    key=lambda p: int(p.stem.split("N")[1]))
    if not target_path.exists() or not traces:
        raise MissingArtifacts(f"no target/trace artifacts under {run_dir}")

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    target = grid_from_csv(target_path)
    dom = target.domain
    written = []
    curves = {}
    for trace_path in traces:
        n = int(trace_path.stem.split("N")[1])
        rows = trace_path.read_text(encoding="utf-8").splitlines()[1:]
        data = np.array([[float(v) for v in r.split(",")] for r in rows if r])
        curves[n] = data[:, :2]
        curve_path = run_dir / f"curves_N{n}.csv"
        with open(curve_path, "w", encoding="utf-8", newline="") as fh:
            fh.write("step,value\n")
            for srow in data:
                fh.write(f"{int(srow[0])},{_fmt(srow[1])}\n")
        written.append(curve_path)

        pos_path = run_dir / f"final_positions_N{n}.csv"
        if not pos_path.exists():
            raise MissingArtifacts(f"missing {pos_path}")
        pts = particles_from_csv(pos_path)
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.imshow(target.as_array(), origin="lower", cmap="gray_r",
                  extent=(dom.lo[0], dom.hi[0], dom.lo[1], dom.hi[1]))
        ax.plot(pts.positions[:, 0], pts.positions[:, 1], "o",
                color="tab:red", ms=4)
        ax.set_title(f"final agents, N={n}")
        ax.set_xlim(dom.lo[0], dom.hi[0])
        ax.set_ylim(dom.lo[1], dom.hi[1])
        scatter_path = run_dir / f"scatter_N{n}.png"
        fig.savefig(scatter_path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(scatter_path)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for n, data in sorted(curves.items()):
        ax.plot(data[:, 0], data[:, 1], label=f"N={n}")
    ax.set_xlabel("step")
    ax.set_ylabel("objective")
    ax.set_yscale("log")
    ax.legend()
    curve_png = run_dir / "objective_curves.png"
    fig.savefig(curve_png, dpi=120, bbox_inches="tight")
    plt.close(fig)
    written.append(curve_png)
    return written

"""Desk-scale experiments: vortex ablation, cattle skirmish detection, model refinement.

Every scenario is a frozen dataclass of settings. Nested dataclasses become
config sections (``[kernel]``, ``[solver]``, ...) and plain fields live in
``[scenario]``; see :mod:`ergoflow.config`.

A seed fixes the random instance (sample sets, herd, utility blobs), so the
two planners always face the same instance for the same seed. Seeds are
independent and may run in worker processes; results are collected in seed
order.
"""

from __future__ import annotations

import math
import time
import timeit
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import InfoMaxConfig, infomax_plan
from .core import EmpiricalMeasure, Trajectory
from .dynamics import DynamicsModel
from .errors import SettingError, ValidationError
from .flows import (
    AttractorField,
    AttractorFlow,
    DiscreteFlow,
    VortexField,
    calibrate_vortex,
    flow_from_field,
    load_gridded_field,
    sample_paths,
)
from .kernels import KernelParams, median_heuristic_bandwidth
from .metric import MODES
from .planner import ErgodicProblem, PlanSolution, optimize_continuation

PLANNERS = ("ergodic", "infomax")
KNOT_TO_MPS = 1852.0 / 3600.0


# ---------------------------------------------------------------------------
# Settings
# ---------------------------------------------------------------------------


def _check(cond: bool, key: str, msg: str):
    if not cond:
        raise SettingError(key, msg)


@dataclass(frozen=True)
class KernelSettings:
    # None means the median heuristic over the metric target.
    bandwidth: float | None = None
    # Continuation: solve at bandwidth * f for each f in turn.
    schedule: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.bandwidth is not None:
            _check(math.isfinite(self.bandwidth) and self.bandwidth > 0, "bandwidth", "must be positive")
        _check(len(self.schedule) > 0, "schedule", "must have at least one entry")
        _check(all(math.isfinite(f) and f > 0 for f in self.schedule), "schedule", "entries must be positive")


@dataclass(frozen=True)
class SolverSettings:
    planner: str = "ergodic"
    mode: str = "backward"
    max_iters: int = 500
    step0: float = 1.0
    tol: float = 1e-6
    n_starts: int = 1
    control_reg: float = 0.0

    def __post_init__(self):
        _check(self.planner in PLANNERS, "planner", f"must be one of {PLANNERS}")
        _check(self.mode in MODES, "mode", f"must be one of {MODES}")
        _check(self.max_iters >= 0, "max_iters", "must be nonnegative")
        _check(self.step0 > 0, "step0", "must be positive")
        _check(self.tol >= 0, "tol", "must be nonnegative")
        _check(self.n_starts >= 1, "n_starts", "must be at least 1")
        _check(self.control_reg >= 0, "control_reg", "must be nonnegative")


@dataclass(frozen=True)
class InfoMaxSettings:
    revisit_discount: float = 0.1
    greedy_horizon: int = 5

    def __post_init__(self):
        _check(0.0 <= self.revisit_discount <= 1.0, "revisit_discount", "must lie in [0, 1]")
        _check(self.greedy_horizon >= 1, "greedy_horizon", "must be at least 1")

    def build(self, radius: float) -> InfoMaxConfig:
        return InfoMaxConfig(radius, self.revisit_discount, self.greedy_horizon)


@dataclass(frozen=True)
class VortexFlowSettings:
    profile: str = "rigid"
    peak_speed: float = 3.46
    mean_speed: float = 2.56

    def __post_init__(self):
        _check(self.profile in ("rigid", "lamb_oseen"), "profile", "must be rigid or lamb_oseen")
        _check(self.peak_speed > 0, "peak_speed", "must be positive")
        _check(self.mean_speed > 0, "mean_speed", "must be positive")


@dataclass(frozen=True)
class DriftDynamicsSettings:
    family: str = "single_integrator"
    dt: float = 0.05
    drift_integrator: str = "flow"

    def __post_init__(self):
        _check(self.dt > 0, "dt", "must be positive")
        _check(self.drift_integrator in ("euler", "flow"), "drift_integrator", "must be euler or flow")


@dataclass(frozen=True)
class VortexScenario:
    box_half_width: float = 0.25
    sample_count: int = 75
    horizon: float = 10.0
    bounds: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    # Visitation radius as a fraction of the domain diagonal.
    visit_radius_fraction: float = 0.02
    seeds: int = 30
    start: tuple[float, ...] = (0.0, 0.0)
    flow: VortexFlowSettings = field(default_factory=VortexFlowSettings)
    dynamics: DriftDynamicsSettings = field(default_factory=DriftDynamicsSettings)
    kernel: KernelSettings = field(default_factory=lambda: KernelSettings(None, (1.0, 0.5, 0.25, 0.12, 0.08, 0.06)))
    solver: SolverSettings = field(default_factory=lambda: SolverSettings(max_iters=600))
    infomax: InfoMaxSettings = field(default_factory=InfoMaxSettings)

    kind = "vortex_ablation"

    def __post_init__(self):
        _check(self.box_half_width > 0, "box_half_width", "must be positive")
        _check(self.sample_count >= 2, "sample_count", "must be at least 2")
        _check(self.horizon > 0, "horizon", "must be positive")
        _check(len(self.bounds) > 0, "bounds", "must not be empty")
        _check(all(b >= 0 for b in self.bounds), "bounds", "must be nonnegative")
        _check(list(self.bounds) == sorted(self.bounds), "bounds", "must be sorted ascending")
        _check(self.visit_radius_fraction >= 0, "visit_radius_fraction", "must be nonnegative")
        _check(self.seeds >= 1, "seeds", "must be at least 1")
        _check(len(self.start) == 2, "start", "must be a 2-D point")

    @property
    def box(self) -> np.ndarray:
        a = self.box_half_width
        return np.array([[-a, a], [-a, a]])

    @property
    def steps(self) -> int:
        return _steps(self.horizon, self.dynamics.dt)

    @property
    def visit_radius(self) -> float:
        return self.visit_radius_fraction * 2.0 * self.box_half_width * math.sqrt(2.0)


@dataclass(frozen=True)
class CattleFlowSettings:
    cow_speed: float = 0.15
    stop_radius: float = 0.5

    def __post_init__(self):
        _check(self.cow_speed >= 0, "cow_speed", "must be nonnegative")
        _check(self.stop_radius >= 0, "stop_radius", "must be nonnegative")


@dataclass(frozen=True)
class DroneDynamicsSettings:
    family: str = "single_integrator"
    dt: float = 1.0
    bound: float = 1.0

    def __post_init__(self):
        _check(self.dt > 0, "dt", "must be positive")
        _check(self.bound >= 0, "bound", "must be nonnegative")


@dataclass(frozen=True)
class CattleScenario:
    ranch_size: float = 30.0
    cows: int = 30
    troughs: int = 3
    trough_margin: float = 3.0
    aggressive: int = 2
    sensing_radius: float = 8.0
    horizon: float = 90.0
    proximity: float = 1.5
    dwell_steps: int = 3
    seeds: int = 30
    start: tuple[float, ...] = (15.0, 15.0)
    flow: CattleFlowSettings = field(default_factory=CattleFlowSettings)
    dynamics: DroneDynamicsSettings = field(default_factory=DroneDynamicsSettings)
    kernel: KernelSettings = field(default_factory=lambda: KernelSettings(None, (1.0, 0.5, 0.25)))
    solver: SolverSettings = field(default_factory=lambda: SolverSettings(mode="forward", max_iters=300))
    infomax: InfoMaxSettings = field(default_factory=InfoMaxSettings)

    kind = "cattle"

    def __post_init__(self):
        _check(self.ranch_size > 0, "ranch_size", "must be positive")
        _check(self.cows >= 2, "cows", "must be at least 2")
        _check(self.troughs >= 1, "troughs", "must be at least 1")
        _check(0 <= self.trough_margin < self.ranch_size / 2, "trough_margin", "must leave room inside the ranch")
        _check(0 <= self.aggressive <= self.cows, "aggressive", "must be between 0 and cows")
        _check(self.sensing_radius > 0, "sensing_radius", "must be positive")
        _check(self.horizon > 0, "horizon", "must be positive")
        _check(self.proximity >= 0, "proximity", "must be nonnegative")
        _check(self.dwell_steps >= 1, "dwell_steps", "must be at least 1")
        _check(self.seeds >= 1, "seeds", "must be at least 1")
        _check(len(self.start) == 2, "start", "must be a 2-D point")
        _check(self.solver.mode != "backward", "solver.mode",
               "must be forward or static because the trough flow is not invertible")

    @property
    def steps(self) -> int:
        return _steps(self.horizon, self.dynamics.dt)


@dataclass(frozen=True)
class GyreSettings:
    # rigid | lamb_oseen | gridded
    profile: str = "rigid"
    peak_speed: float = 3.6
    core_radius: float = 40.0
    grid_file: str = ""

    def __post_init__(self):
        _check(self.profile in ("rigid", "lamb_oseen", "gridded"), "profile", "must be rigid, lamb_oseen or gridded")
        _check(self.peak_speed >= 0, "peak_speed", "must be nonnegative")
        _check(self.core_radius > 0, "core_radius", "must be positive")
        _check(self.profile != "gridded" or bool(self.grid_file), "grid_file", "must be set for the gridded profile")


@dataclass(frozen=True)
class RobotDynamicsSettings:
    family: str = "single_integrator"
    dt: float = 6.0
    bound_knots: float = 1.74
    drift_integrator: str = "flow"

    def __post_init__(self):
        _check(self.dt > 0, "dt", "must be positive")
        _check(self.bound_knots >= 0, "bound_knots", "must be nonnegative")
        _check(self.drift_integrator in ("euler", "flow"), "drift_integrator", "must be euler or flow")


@dataclass(frozen=True)
class RefinementScenario:
    # Lengths in km, times in hours.
    domain_size: float = 200.0
    grid_cells: int = 20
    blobs: int = 3
    blob_sigma: tuple[float, ...] = (0.06, 0.15)
    horizon: float = 720.0
    clearing_radius: float = 10.0
    clearing_gain: float = 0.9
    seeds: int = 30
    start: tuple[float, ...] = (0.0, 0.0)
    flow: GyreSettings = field(default_factory=GyreSettings)
    dynamics: RobotDynamicsSettings = field(default_factory=RobotDynamicsSettings)
    kernel: KernelSettings = field(default_factory=lambda: KernelSettings(None, (1.0, 0.5, 0.25, 0.12)))
    solver: SolverSettings = field(default_factory=lambda: SolverSettings(max_iters=300))
    infomax: InfoMaxSettings = field(default_factory=InfoMaxSettings)

    kind = "model_refinement"

    def __post_init__(self):
        _check(self.domain_size > 0, "domain_size", "must be positive")
        _check(self.grid_cells >= 2, "grid_cells", "must be at least 2")
        _check(self.blobs >= 1, "blobs", "must be at least 1")
        _check(len(self.blob_sigma) == 2 and 0 < self.blob_sigma[0] <= self.blob_sigma[1],
               "blob_sigma", "must be [lo, hi] fractions of the domain with 0 < lo <= hi")
        _check(self.horizon > 0, "horizon", "must be positive")
        _check(self.clearing_radius >= 0, "clearing_radius", "must be nonnegative")
        _check(0 <= self.clearing_gain <= 1, "clearing_gain", "must lie in [0, 1]")
        _check(self.seeds >= 1, "seeds", "must be at least 1")
        _check(len(self.start) == 2, "start", "must be a 2-D point")

    @property
    def steps(self) -> int:
        return _steps(self.horizon, self.dynamics.dt)

    @property
    def bound(self) -> float:
        """Control bound in km/h."""
        return self.dynamics.bound_knots * KNOT_TO_MPS * 3.6


SCENARIOS = {c.kind: c for c in (VortexScenario, CattleScenario, RefinementScenario)}


def _steps(horizon: float, dt: float) -> int:
    """Number of states covering ``[0, horizon]`` at spacing ``dt``."""
    n = int(round(horizon / dt))
    _check(n >= 1, "horizon", "must span at least one step")
    return n + 1


@dataclass
class ScenarioReport:
    """Per-seed values and their aggregates.

    ``per_seed`` maps a metric name to an array whose first axis is the
    seed; ``aggregates`` holds mean and (population) std over that axis,
    ignoring NaN entries. ``sweep`` carries the swept parameter, if any.
    ``runtime`` is wall-clock seconds and is kept out of the deterministic
    outputs.
    """

    scenario: str
    planner: str
    seeds: list[int]
    per_seed: dict[str, np.ndarray]
    config: dict
    sweep: dict[str, list[float]] = field(default_factory=dict)
    summary: dict[str, float] = field(default_factory=dict)
    runtime: float = 0.0
    trajectories: dict | None = None

    @property
    def aggregates(self) -> dict[str, dict[str, np.ndarray]]:
        out = {}
        for name, vals in self.per_seed.items():
            v = np.asarray(vals, dtype=np.float64)
            ok = ~np.isnan(v)
            n = ok.sum(axis=0)
            with np.errstate(invalid="ignore", divide="ignore"):
                mean = np.where(ok, v, 0.0).sum(axis=0) / n
                std = np.sqrt(np.where(ok, (v - mean) ** 2, 0.0).sum(axis=0) / n)
            out[name] = {"mean": mean, "std": std}
        return out


# ---------------------------------------------------------------------------
# Evaluation helpers
# ---------------------------------------------------------------------------


def coverage_fraction(traj, mu0: EmpiricalMeasure, flow: DiscreteFlow, radius: float) -> float:
    """Share of samples that some ``g(x_t)`` comes within ``radius`` of at step ``t``."""
    G = np.asarray(traj.projected if isinstance(traj, Trajectory) else traj, dtype=np.float64)
    if isinstance(traj, Trajectory) and abs(traj.dt - flow.dt) > 1e-12 * flow.dt:
        raise ValidationError("trajectory and flow disagree on dt")
    if radius <= 0:
        return 0.0
    S = sample_paths(flow, mu0.points, G.shape[0])
    d2 = np.sum((S - G[:, None, :]) ** 2, axis=-1)
    return float(np.mean(np.any(d2 <= radius * radius, axis=0)))


@dataclass(frozen=True)
class Skirmish:
    cow: int
    start: int
    end: int  # exclusive


def find_skirmishes(paths: np.ndarray, aggressive, proximity: float, dwell: int) -> list[Skirmish]:
    """Runs of at least ``dwell`` consecutive steps with an aggressive cow within
    ``proximity`` of any other cow."""
    T, M, _ = paths.shape
    out = []
    for a in aggressive:
        d = np.linalg.norm(paths - paths[:, a : a + 1, :], axis=2)
        d[:, a] = np.inf
        near = np.concatenate([[False], d.min(axis=1) <= proximity, [False]])
        edges = np.flatnonzero(near[1:] != near[:-1])
        for s, e in zip(edges[::2], edges[1::2]):
            if e - s >= dwell:
                out.append(Skirmish(int(a), int(s), int(e)))
    out.sort(key=lambda k: (k.start, k.cow))
    return out


def skirmish_detected(G: np.ndarray, paths: np.ndarray, sk: Skirmish, radius: float) -> bool:
    d = np.linalg.norm(G[sk.start : sk.end] - paths[sk.start : sk.end, sk.cow], axis=1)
    return bool(np.any(d <= radius))


def utility_reduction(G: np.ndarray, cell_paths: np.ndarray, weights: np.ndarray,
                      radius: float, gain: float) -> float:
    """Fraction of utility mass cleared along the projected path ``G``.

    At step ``t`` each cell within ``radius`` of ``G[t]`` keeps
    ``1 - gain * exp(-d^2 / (2 radius^2))`` of its weight.
    """
    w = np.array(weights, dtype=np.float64)
    total = w.sum()
    if radius <= 0 or gain == 0 or total == 0:
        return 0.0
    for t in range(G.shape[0]):
        d2 = np.sum((cell_paths[t] - G[t]) ** 2, axis=1)
        m = d2 <= radius * radius
        w[m] *= 1.0 - gain * np.exp(-d2[m] / (2.0 * radius * radius))
    return float(1.0 - w.sum() / total)


# ---------------------------------------------------------------------------
# Planning glue
# ---------------------------------------------------------------------------


def _plan(prob: ErgodicProblem, planner: str, kernel: KernelSettings, solver: SolverSettings,
          infomax: InfoMaxSettings, radius: float, seed: int) -> PlanSolution:
    if planner == "infomax":
        return infomax_plan(prob, infomax.build(radius))
    h = prob.kernel.bandwidth
    return optimize_continuation(
        prob, [h * f for f in kernel.schedule], seed=seed, n_starts=solver.n_starts,
        max_iters=solver.max_iters, step0=solver.step0, tol=solver.tol,
    )


def _problem(dyn, flow, mu, T, start, kernel: KernelSettings, solver: SolverSettings) -> ErgodicProblem:
    # Bandwidth placeholder first so the metric target can be built once.
    prob = ErgodicProblem(dyn, flow, mu, KernelParams(1.0), T, start, mode=solver.mode,
                          control_reg=solver.control_reg)
    h = kernel.bandwidth
    if h is None:
        h = median_heuristic_bandwidth(prob.metric_target().points)
    return ErgodicProblem(dyn, flow, mu, KernelParams(h), T, start, mode=solver.mode,
                          control_reg=solver.control_reg)


def _pick(planner: str | None, cfg) -> str:
    p = cfg.solver.planner if planner is None else planner
    _check(p in PLANNERS, "planner", f"must be one of {PLANNERS}")
    return p


def _map_seeds(fn, args: list, jobs: int) -> list:
    if jobs <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as pool:
        return list(pool.map(fn, *zip(*args)))


def _seed_list(base: int, count: int) -> list[int]:
    return [base + i for i in range(count)]


# ---------------------------------------------------------------------------
# Vortex ablation
# ---------------------------------------------------------------------------


def vortex_instance(cfg: VortexScenario, seed: int):
    """``(flow, mu0)`` for one seed: calibrated vortex and uniform samples."""
    f = cfg.flow
    field = calibrate_vortex(cfg.box, f.peak_speed, f.mean_speed if f.profile == "lamb_oseen" else None,
                             profile=f.profile)
    flow = flow_from_field(field, cfg.dynamics.dt)
    rng = np.random.default_rng(seed)
    a = cfg.box_half_width
    mu0 = EmpiricalMeasure.uniform(rng.uniform(-a, a, size=(cfg.sample_count, 2)))
    return field, flow, mu0


def vortex_problem(cfg: VortexScenario, seed: int, bound: float) -> ErgodicProblem:
    field, flow, mu0 = vortex_instance(cfg, seed)
    d = cfg.dynamics
    kw = {"drift_flow": flow} if d.drift_integrator == "flow" else {"drift_field": field}
    dyn = DynamicsModel.box(d.family, d.dt, bound, drift_coupled=True, drift_integrator=d.drift_integrator, **kw)
    return _problem(dyn, flow, mu0, cfg.steps, cfg.start, cfg.kernel, cfg.solver)


def _vortex_seed(cfg: VortexScenario, planner: str, seed: int):
    cov, sols = [], []
    for b in cfg.bounds:
        prob = vortex_problem(cfg, seed, b)
        sol = _plan(prob, planner, cfg.kernel, cfg.solver, cfg.infomax, cfg.visit_radius, seed)
        cov.append(coverage_fraction(sol.trajectory, prob.target, prob.flow, cfg.visit_radius))
        sols.append(sol)
    return cov, sols


def run_vortex_ablation(cfg: VortexScenario, planner: str | None = None, seed: int = 0,
                        jobs: int = 1, keep_trajectories: bool = False) -> ScenarioReport:
    """Coverage per seed and per control bound."""
    planner = _pick(planner, cfg)
    seeds = _seed_list(seed, cfg.seeds)
    t0 = time.perf_counter()
    res = _map_seeds(_vortex_seed, [(cfg, planner, s) for s in seeds], jobs)
    cov = np.array([r[0] for r in res])
    rep = ScenarioReport(cfg.kind, planner, seeds, {"coverage": cov}, asdict(cfg),
                         sweep={"bound": list(cfg.bounds)})
    rep.summary = {"visit_radius": cfg.visit_radius,
                   "coverage_at_max_bound": float(cov[:, -1].mean()),
                   "spearman_bound_vs_mean_coverage": spearman(cfg.bounds, cov.mean(axis=0))}
    rep.runtime = time.perf_counter() - t0
    if keep_trajectories:
        rep.trajectories = {s: r[1] for s, r in zip(seeds, res)}
    return rep


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties; NaN if a side is constant."""
    from scipy.stats import spearmanr

    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.all(x == x[0]) or np.all(y == y[0]):
        return float("nan")
    return float(spearmanr(x, y).statistic)


# ---------------------------------------------------------------------------
# Cattle skirmish detection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Herd:
    cows: np.ndarray
    troughs: np.ndarray
    aggressive: np.ndarray
    paths: np.ndarray


def cattle_instance(cfg: CattleScenario, seed: int):
    rng = np.random.default_rng(seed)
    L = cfg.ranch_size
    cows = rng.uniform(0.0, L, size=(cfg.cows, 2))
    troughs = rng.uniform(cfg.trough_margin, L - cfg.trough_margin, size=(cfg.troughs, 2))
    aggressive = np.sort(rng.choice(cfg.cows, size=cfg.aggressive, replace=False))
    field = AttractorField(troughs, cfg.flow.cow_speed, stop_radius=cfg.flow.stop_radius)
    flow = AttractorFlow(field, cfg.dynamics.dt)
    # Troughs lie inside the convex ranch, so straight-line moves toward
    # them stay inside; the clip only guards round-off at the fence.
    paths = np.clip(sample_paths(flow, cows, cfg.steps), 0.0, L)
    return flow, Herd(cows, troughs, aggressive, paths)


def cattle_problem(cfg: CattleScenario, seed: int):
    flow, herd = cattle_instance(cfg, seed)
    d = cfg.dynamics
    dyn = DynamicsModel.box(d.family, d.dt, d.bound)
    mu0 = EmpiricalMeasure.uniform(herd.cows)
    return _problem(dyn, flow, mu0, cfg.steps, cfg.start, cfg.kernel, cfg.solver), herd


def _cattle_seed(cfg: CattleScenario, planner: str, seed: int):
    prob, herd = cattle_problem(cfg, seed)
    sks = find_skirmishes(herd.paths, herd.aggressive, cfg.proximity, cfg.dwell_steps)
    sol = _plan(prob, planner, cfg.kernel, cfg.solver, cfg.infomax, cfg.sensing_radius, seed)
    G = sol.trajectory.projected
    seen = sum(skirmish_detected(G, herd.paths, s, cfg.sensing_radius) for s in sks)
    return len(sks), seen, sol


def run_cattle(cfg: CattleScenario, planner: str | None = None, seed: int = 0,
               jobs: int = 1, keep_trajectories: bool = False) -> ScenarioReport:
    """Skirmishes and detections per seed.

    Seeds without skirmishes get a NaN success rate and are left out of
    both the mean rate and the pooled rate.
    """
    planner = _pick(planner, cfg)
    seeds = _seed_list(seed, cfg.seeds)
    t0 = time.perf_counter()
    res = _map_seeds(_cattle_seed, [(cfg, planner, s) for s in seeds], jobs)
    n = np.array([r[0] for r in res], dtype=np.float64)
    seen = np.array([r[1] for r in res], dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = np.where(n > 0, seen / n, np.nan)
    rep = ScenarioReport(cfg.kind, planner, seeds, {"skirmishes": n, "detected": seen, "success": rate},
                         asdict(cfg))
    total = n.sum()
    rep.summary = {
        "total_skirmishes": float(total),
        "total_detected": float(seen.sum()),
        "detection_rate": float(seen.sum() / total) if total > 0 else float("nan"),
        "seeds_without_skirmish": float(np.sum(n == 0)),
    }
    rep.runtime = time.perf_counter() - t0
    if keep_trajectories:
        rep.trajectories = {s: [r[2]] for s, r in zip(seeds, res)}
    return rep


# ---------------------------------------------------------------------------
# Model refinement
# ---------------------------------------------------------------------------


def gyre_field(cfg: RefinementScenario):
    f = cfg.flow
    if f.profile == "gridded":
        return load_gridded_field(f.grid_file)
    a = cfg.domain_size / 2.0
    box = [[-a, a], [-a, a]]
    if f.profile == "rigid":
        return calibrate_vortex(box, f.peak_speed, profile="rigid", center=(0.0, 0.0))
    unit = VortexField(1.0, (0.0, 0.0), "lamb_oseen", f.core_radius)
    peak = unit.speed(np.linspace(0.0, a * math.sqrt(2.0), 4001)).max()
    return VortexField(f.peak_speed / peak, (0.0, 0.0), "lamb_oseen", f.core_radius)


def refinement_instance(cfg: RefinementScenario, seed: int):
    """Gyre flow and the utility measure on cell centres."""
    field = gyre_field(cfg)
    flow = flow_from_field(field, cfg.dynamics.dt)
    L = cfg.domain_size
    n = cfg.grid_cells
    xs = (np.arange(n) + 0.5) / n * L - L / 2
    X, Y = np.meshgrid(xs, xs)
    cells = np.stack([X.ravel(), Y.ravel()], axis=1)
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-0.4 * L, 0.4 * L, size=(cfg.blobs, 2))
    sig = rng.uniform(cfg.blob_sigma[0], cfg.blob_sigma[1], size=cfg.blobs) * L
    amp = rng.uniform(0.5, 1.0, size=cfg.blobs)
    d2 = np.sum((cells[:, None, :] - centers[None]) ** 2, axis=2)
    w = np.sum(amp * np.exp(-d2 / (2.0 * sig**2)), axis=1)
    return field, flow, EmpiricalMeasure.weighted(cells, w)


def refinement_problem(cfg: RefinementScenario, seed: int) -> ErgodicProblem:
    field, flow, mu = refinement_instance(cfg, seed)
    d = cfg.dynamics
    kw = {"drift_flow": flow} if d.drift_integrator == "flow" else {"drift_field": field}
    dyn = DynamicsModel.box(d.family, d.dt, cfg.bound, drift_coupled=True, drift_integrator=d.drift_integrator, **kw)
    return _problem(dyn, flow, mu, cfg.steps, cfg.start, cfg.kernel, cfg.solver)


def _refinement_seed(cfg: RefinementScenario, planner: str, seed: int):
    prob = refinement_problem(cfg, seed)
    sol = _plan(prob, planner, cfg.kernel, cfg.solver, cfg.infomax, cfg.clearing_radius, seed)
    cells = sample_paths(prob.flow, prob.target.points, prob.horizon)
    red = utility_reduction(sol.trajectory.projected, cells, prob.target.weights,
                            cfg.clearing_radius, cfg.clearing_gain)
    return red, sol


def run_model_refinement(cfg: RefinementScenario, planner: str | None = None, seed: int = 0,
                         jobs: int = 1, keep_trajectories: bool = False) -> ScenarioReport:
    """Percentage of utility mass cleared per seed."""
    planner = _pick(planner, cfg)
    seeds = _seed_list(seed, cfg.seeds)
    t0 = time.perf_counter()
    res = _map_seeds(_refinement_seed, [(cfg, planner, s) for s in seeds], jobs)
    red = 100.0 * np.array([r[0] for r in res])
    rep = ScenarioReport(cfg.kind, planner, seeds, {"reduction_percent": red}, asdict(cfg))
    rep.summary = {"bound_km_per_h": cfg.bound}
    rep.runtime = time.perf_counter() - t0
    if keep_trajectories:
        rep.trajectories = {s: [r[1]] for s, r in zip(seeds, res)}
    return rep


RUNNERS = {
    VortexScenario.kind: run_vortex_ablation,
    CattleScenario.kind: run_cattle,
    RefinementScenario.kind: run_model_refinement,
}


def scenario_problem(cfg, seed: int) -> ErgodicProblem:
    """The single planning problem a scenario poses for ``seed``.

    For the vortex ablation this is the largest bound of the sweep.
    """
    if isinstance(cfg, VortexScenario):
        return vortex_problem(cfg, seed, cfg.bounds[-1])
    if isinstance(cfg, CattleScenario):
        return cattle_problem(cfg, seed)[0]
    return refinement_problem(cfg, seed)


def plan_scenario(cfg, seed: int, planner: str | None = None) -> tuple[ErgodicProblem, PlanSolution, dict]:
    """Solve one seed's problem; returns the problem, solution and scenario metrics."""
    planner = _pick(planner, cfg)
    if isinstance(cfg, VortexScenario):
        prob = vortex_problem(cfg, seed, cfg.bounds[-1])
        sol = _plan(prob, planner, cfg.kernel, cfg.solver, cfg.infomax, cfg.visit_radius, seed)
        extra = {"coverage": coverage_fraction(sol.trajectory, prob.target, prob.flow, cfg.visit_radius),
                 "bound": cfg.bounds[-1]}
    elif isinstance(cfg, CattleScenario):
        n, seen, sol = _cattle_seed(cfg, planner, seed)
        prob = cattle_problem(cfg, seed)[0]
        extra = {"skirmishes": float(n), "detected": float(seen)}
    else:
        red, sol = _refinement_seed(cfg, planner, seed)
        prob = refinement_problem(cfg, seed)
        extra = {"reduction_percent": 100.0 * red}
    return prob, sol, extra


def bench_metric(horizons, sample_counts, repeats: int = 5, seed: int = 0, mode: str = "backward",
                 drop_constant: bool = True) -> dict:
    """Per-evaluation wall time of the metric for every ``(T, M)`` pair.

    Each timing sample runs a loop long enough for a stable reading
    (``timeit`` autorange). The pairs are timed round-robin, ``repeats``
    rounds in all, so slow drift in machine speed hits every size alike;
    the fastest sample per pair is reported.

    Uses an exact rigid rotation so the flow maps cost O(T) and the kernel
    sums dominate.
    """
    from .flows import RotationFlow
    from .metric import ergodic_metric

    rng = np.random.default_rng(seed)
    flow = RotationFlow(1.0, 0.05)
    res = {"mode": mode, "drop_constant": drop_constant, "repeats": repeats, "T": [], "M": [], "seconds": []}
    timers = []
    for M in sample_counts:
        mu = EmpiricalMeasure.uniform(rng.uniform(-1.0, 1.0, size=(M, 2)))
        k = KernelParams(median_heuristic_bandwidth(mu.points))
        for T in horizons:
            G = rng.uniform(-1.0, 1.0, size=(T, 2))
            timer = timeit.Timer(lambda G=G, mu=mu, k=k: ergodic_metric(G, flow, mu, k, mode, drop_constant))
            timers.append((timer, timer.autorange()[0]))
            res["T"].append(int(T))
            res["M"].append(int(M))
    best = [math.inf] * len(timers)
    for _ in range(repeats):
        for i, (timer, number) in enumerate(timers):
            best[i] = min(best[i], timer.timeit(number) / number)
    res["seconds"] = best
    return res

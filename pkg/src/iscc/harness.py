"""Experiment orchestration: sweeps, convergence traces and the validation suite.

Every CSV written here starts with ``#`` lines holding the resolved config,
the solver options and the seed, so a file can be regenerated from its own
header.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import waveform
from .aircomp import DesignVariables, optimal_aggregation, per_subcarrier_objective
from .channel import draw_comm_channel, draw_sensing_channels
from .config import (ConfigError, InfeasibleBudgetError, SensingBudget, SystemConfig,
                     dbm_to_linear, derive_sensing_budget, rng_substream)
from .optimizer import SolveReport, SolverOptions, solve, solve_epa, solve_opas, write_trace_csv
from .sensing import SensingParams, crlb_distance, crlb_from_fisher, crlb_velocity, numerical_fisher

logger = logging.getLogger(__name__)

EXPERIMENTS = ("convergence", "power_sweep", "threshold_sweep", "subcarrier_sweep", "validate")
METHODS = ("proposed", "sca", "opas", "epa")
DEFAULT_GRIDS = {
    "power_sweep": (0.0, 5.0, 10.0, 15.0, 20.0),  # dBm
    # common factor applied to both distance and velocity thresholds
    "threshold_sweep": (7e-5, 1e-4, 2e-4, 5e-4, 1e-3, 1e-2, 1.0),
    "subcarrier_sweep": (16, 32, 64, 128),
}
FEAS_TOL = 1e-4


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: str
    grid: tuple[float, ...] = ()
    n_channel_draws: int = 200
    methods: tuple[str, ...] = METHODS
    output: str | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        grid = tuple(self.grid) or DEFAULT_GRIDS.get(self.experiment, ())
        if self.experiment in DEFAULT_GRIDS and not grid:
            raise ValueError("grid must be nonempty")
        object.__setattr__(self, "grid", tuple(float(v) for v in grid))
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
        if self.n_channel_draws < 1:
            raise ValueError("need at least one channel draw")


def grid_config(experiment: str, cfg: SystemConfig, value: float) -> SystemConfig:
    if experiment == "power_sweep":
        return cfg.with_(tx_power=dbm_to_linear(value))
    if experiment == "threshold_sweep":
        return cfg.with_(eta=tuple(e * value for e in cfg.eta), xi=tuple(x * value for x in cfg.xi))
    if experiment == "subcarrier_sweep":
        return cfg.with_(n_subcarriers=int(value))
    raise ValueError(f"{experiment} has no parameter grid")


@dataclass
class ResultRow:
    method: str
    grid_value: float
    mean_mse_bar: float
    std_err: float
    mean_mse: float
    mean_runtime_ms: float
    feasibility_rate: float
    n_draws: int
    n_excluded: int
    status: str  # "ok" or "infeasible"


@dataclass
class ResultTable:
    experiment: str
    rows: list[ResultRow] = field(default_factory=list)
    samples: dict = field(default_factory=dict)  # (method, grid value) -> per-draw MSE-bar

    def row(self, method: str, grid_value: float) -> ResultRow:
        for r in self.rows:
            if r.method == method and r.grid_value == grid_value:
                return r
        raise KeyError((method, grid_value))

    def series(self, method: str) -> np.ndarray:
        return np.array([r.mean_mse_bar for r in self.rows if r.method == method])

    def write_csv(self, path, header_lines=(), timing: bool = False) -> None:
        cols = ["method", "grid_value", "mean_mse_bar", "std_err", "mean_mse"]
        if timing:
            cols.append("mean_runtime_ms")
        cols += ["feasibility_rate", "n_draws", "n_excluded", "status"]
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                rec = asdict(r)
                w.writerow([_fmt(rec[c]) for c in cols])


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def metadata_lines(cfg: SystemConfig, seed: int, **extra) -> list[str]:
    lines = [f"seed={seed}", "config=" + json.dumps(cfg.to_dict(), sort_keys=True)]
    for key, value in extra.items():
        lines.append(f"{key}=" + json.dumps(value, sort_keys=True, default=str))
    return lines


def _feasible(b, budget: SensingBudget, cfg: SystemConfig, tol: float = FEAS_TOL) -> bool:
    S = np.sum(np.asarray(b) ** 2, axis=1)
    return bool(np.all(S <= cfg.tx_power * (1 + tol)) and np.all(S >= budget.power_floor * (1 - tol)))


def solve_methods(H, cfg: SystemConfig, budget: SensingBudget, methods, options: SolverOptions):
    """MSE-bar, amplitudes and runtime (s) per method for one channel."""
    out = {}
    if "proposed" in methods or "sca" in methods:
        t0 = time.perf_counter()
        rep = solve(H, cfg, budget, options)
        dt = time.perf_counter() - t0
        if "proposed" in methods:
            out["proposed"] = (rep.mse_bar, rep.amplitudes, dt)
        if "sca" in methods:
            out["sca"] = (rep.sca_mse.mse_bar, rep.sca_amplitudes, rep.ao_seconds)
    if "opas" in methods:
        t0 = time.perf_counter()
        b, _, m = solve_opas(H, cfg, budget)
        out["opas"] = (m.mse_bar, b, time.perf_counter() - t0)
    if "epa" in methods:
        t0 = time.perf_counter()
        b, _, m = solve_epa(H, cfg, budget, printed_variant=options.epa_printed_variant)
        out["epa"] = (m.mse_bar, b, time.perf_counter() - t0)
    return out


def run_experiment(spec: ExperimentSpec, cfg: SystemConfig,
                   options: SolverOptions = SolverOptions(), seed: int | None = None) -> ResultTable:
    """Solve every (grid value, channel draw) with every method and aggregate.

    Draw d uses the channel stream labelled by the experiment, d and N, so
    all methods and all grid values with the same N see the same channel
    (paired comparison). Infeasible grid points produce flagged rows.
    """
    if spec.experiment not in DEFAULT_GRIDS:
        raise ValueError(f"{spec.experiment} is not a sweep")
    seed = cfg.rng_seed if seed is None else seed
    table = ResultTable(spec.experiment)
    methods = [m for m in METHODS if m in spec.methods]
    for value in spec.grid:
        gcfg = grid_config(spec.experiment, cfg, value)
        try:
            budget = derive_sensing_budget(gcfg)
        except InfeasibleBudgetError as exc:
            logger.warning("grid value %g infeasible: %s", value, exc)
            for m in methods:
                table.rows.append(ResultRow(m, value, math.nan, math.nan, math.nan, math.nan,
                                            0.0, 0, spec.n_channel_draws, "infeasible"))
            continue
        vals = {m: [] for m in methods}
        times = {m: [] for m in methods}
        bad = {m: 0 for m in methods}
        for d in range(spec.n_channel_draws):
            rng = rng_substream(seed, f"{spec.experiment}/channel/N={gcfg.n_subcarriers}/draw={d}")
            H = draw_comm_channel(gcfg, rng).response
            for m, (mse_bar, b, dt) in solve_methods(H, gcfg, budget, methods, options).items():
                if _feasible(b, budget, gcfg):
                    vals[m].append(mse_bar)
                    times[m].append(dt)
                else:
                    bad[m] += 1
        K, N = gcfg.n_devices, gcfg.n_subcarriers
        for m in methods:
            v = np.array(vals[m])
            table.samples[(m, value)] = v
            se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
            mean = float(v.mean()) if v.size else math.nan
            table.rows.append(ResultRow(
                m, value, mean, se, mean / (N * K**2),
                1e3 * float(np.mean(times[m])) if times[m] else math.nan,
                1.0 if v.size else 0.0, int(v.size), bad[m], "ok" if v.size else "infeasible",
            ))
    return table


def run_convergence_trace(cfg: SystemConfig, options: SolverOptions = SolverOptions(),
                          seed: int | None = None, out=None) -> SolveReport:
    """Solve one channel draw and optionally write the two-phase trace CSV."""
    seed = cfg.rng_seed if seed is None else seed
    budget = derive_sensing_budget(cfg)
    H = draw_comm_channel(cfg, rng_substream(seed, "convergence/channel")).response
    report = solve(H, cfg, budget, options)
    if out is not None:
        ao_rows = sum(1 for r in report.trace if r.phase == "ao")
        header = metadata_lines(cfg, seed, options=asdict(options))
        header.append(f"phase_boundary={ao_rows}")
        write_trace_csv(out, report, header)
    return report


# --- oracles shared by the validation suite and the tests -------------------

def aggregation_perturbation_gain(rng: np.random.Generator, n_instances: int, *,
                                  step: float = 1e-4, aggregator=optimal_aggregation,
                                  max_devices: int = 6) -> float:
    """Largest objective decrease from nudging W off ``aggregator``'s output.

    Each instance is one subcarrier with random K, complex gains and noise
    power; the nudges are +-step on the real and imaginary parts of W.
    """
    worst = -math.inf
    for _ in range(n_instances):
        K = int(rng.integers(1, max_devices + 1))
        H = (rng.standard_normal((K, 1)) + 1j * rng.standard_normal((K, 1))) / math.sqrt(2)
        B = rng.exponential(1.0, (K, 1)) * np.exp(2j * np.pi * rng.random((K, 1)))
        sigma2 = float(10 ** rng.uniform(-3, 1))
        w = aggregator(B, H, sigma2)
        g = H * B
        base = per_subcarrier_objective(w, g, sigma2)[0]
        for d in (step, -step, 1j * step, -1j * step):
            worst = max(worst, base - per_subcarrier_objective(w + d, g, sigma2)[0])
    return worst


def corrupted_aggregation(B, H, noise_power):
    """Negative control: the aggregator with the noise term dropped."""
    return optimal_aggregation(B, H, 0.0)


def grid_oracle(H, tx_power: float, power_floor, noise_power: float, step: float = 0.01):
    """Brute-force minimum of MSE-bar over the amplitude grid, W optimal per point.

    For fixed amplitudes the best aggregator is closed form, leaving
    MSE-bar(b) = sum_n [K - (sum_k c)^2 / (sum_k c^2 + sigma^2)] with c = |H| b.
    Returns (minimum, argmin, resolution) where resolution is the largest
    objective change to a one-step grid neighbour of the argmin.
    """
    H = np.asarray(H)
    K, N = H.shape
    floor = np.broadcast_to(np.asarray(power_floor, dtype=float), (K,))
    axis = np.arange(0.0, math.sqrt(tx_power) + 0.5 * step, step)
    pts = np.array(list(itertools.product(axis, repeat=N)))
    S = np.sum(pts**2, axis=1)
    per_dev = [pts[(S <= tx_power * (1 + 1e-12)) & (S >= floor[k] * (1 - 1e-12))] for k in range(K)]
    if any(p.size == 0 for p in per_dev):
        raise ValueError("grid contains no feasible point")
    absH = np.abs(H)

    def objective(b):  # b: (..., K, N)
        c = absH * b
        return np.sum(K - np.sum(c, axis=-2) ** 2 / (np.sum(c**2, axis=-2) + noise_power), axis=-1)

    best, arg = math.inf, None
    sizes = [len(p) for p in per_dev]
    # enumerate device 0 in chunks against the product of the rest
    rest = [np.arange(s) for s in sizes[1:]]
    rest_idx = np.array(list(itertools.product(*rest))) if rest else np.zeros((1, 0), int)
    chunk = max(1, 2_000_000 // max(1, len(rest_idx)))
    for start in range(0, sizes[0], chunk):
        i0 = np.arange(start, min(sizes[0], start + chunk))
        grid = np.empty((len(i0), len(rest_idx), K, N))
        grid[:, :, 0, :] = per_dev[0][i0][:, None, :]
        for k in range(1, K):
            grid[:, :, k, :] = per_dev[k][rest_idx[:, k - 1]][None, :, :]
        f = objective(grid)
        j = np.unravel_index(np.argmin(f), f.shape)
        if f[j] < best:
            best, arg = float(f[j]), grid[j].copy()
    base = objective(arg)
    res = 0.0
    for k in range(K):
        for n in range(N):
            for d in (step, -step):
                nb = arg.copy()
                nb[k, n] = max(0.0, nb[k, n] + d)
                res = max(res, abs(float(objective(nb)) - base))
    return best, arg, res


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@dataclass(frozen=True)
class CrlbScaling:
    slope_n: float
    expected_slope_n: float
    slope_m: float
    expected_slope_m: float
    ratio_delay: np.ndarray  # closed form / numerical, per N
    ratio_doppler: np.ndarray  # per M

    @property
    def rel_err_n(self) -> float:
        return abs(self.slope_n / self.expected_slope_n - 1)

    @property
    def rel_err_m(self) -> float:
        return abs(self.slope_m / self.expected_slope_m - 1)


def crlb_scaling(cfg: SystemConfig, n_grid=(16, 32, 64), m_grid=(10, 20, 50),
                 amplitude: float = 0.5, params: SensingParams | None = None) -> CrlbScaling:
    """Compare closed-form bounds with the inverse of the full Fisher matrix.

    The per-subcarrier amplitude is held fixed, so the closed form is
    evaluated at power ``amplitude**2``; the ratio is reported per grid point.
    """
    params = params or SensingParams(taubar=0.3, vbar=0.02, alpha=cfg.attenuation, psi=0.4)
    p = amplitude**2
    num_n, cf_n = [], []
    for N in n_grid:
        c = cfg.with_(n_subcarriers=int(N))
        F = numerical_fisher(params.theta, np.full(N, amplitude), c.sensing_noise_power, c.n_symbols)
        num_n.append(crlb_from_fisher(F, "delay", c))
        cf_n.append(crlb_distance(p, params.alpha, c.sensing_noise_power, c.n_symbols, N,
                                  c.subcarrier_spacing, c.light_speed))
    num_m, cf_m = [], []
    for M in m_grid:
        c = cfg.with_(n_symbols=int(M))
        F = numerical_fisher(params.theta, np.full(c.n_subcarriers, amplitude),
                             c.sensing_noise_power, M)
        num_m.append(crlb_from_fisher(F, "doppler", c))
        cf_m.append(crlb_velocity(p, params.alpha, c.sensing_noise_power, M, c.n_subcarriers,
                                  c.symbol_duration, c.carrier_frequency, c.light_speed))
    n = np.asarray(n_grid, dtype=float)
    m = np.asarray(m_grid, dtype=float)
    return CrlbScaling(
        slope_n=loglog_slope(n, num_n),
        expected_slope_n=loglog_slope(n, 1.0 / (n * (n**2 - 1))),
        slope_m=loglog_slope(m, num_m),
        expected_slope_m=loglog_slope(m, 1.0 / (m * (m**2 - 1))),
        ratio_delay=np.array(cf_n) / np.array(num_n),
        ratio_doppler=np.array(cf_m) / np.array(num_m),
    )


def decoupling_study(cfg: SystemConfig, seed: int, m_grid=(10, 50, 200), n_draws: int = 20,
                     velocity: float = 0.5, tx=None):
    """Pooled median and norm residuals of the decoupled echo model per M.

    Noiseless, interference-free, single-path target; the ensemble median is
    taken over every (draw, device, subcarrier) element.
    """
    c = cfg.with_(interference_power=0.0)
    if tx is None:
        tx = np.full((c.n_devices, c.n_subcarriers), math.sqrt(c.tx_power / c.n_subcarriers))
    doppler = 2.0 * velocity * c.carrier_frequency / c.light_speed
    medians, norms = [], []
    for M in m_grid:
        rel, nrm = [], []
        for d in range(n_draws):
            rng = rng_substream(seed, f"decoupling/M={M}/draw={d}")
            sens = draw_sensing_channels(c, rng)
            psi = float(2 * math.pi * rng.random())
            A_hat, A = waveform.decoupling_trial(tx, sens, c, int(M), rng, doppler_hz=doppler,
                                                 psi=psi, include_interference=False)
            rel.append(np.abs(A_hat - A) / np.abs(A))
            nrm.append(np.linalg.norm(A_hat - A) / np.linalg.norm(A))
        medians.append(float(np.median(np.concatenate([r.ravel() for r in rel]))))
        norms.append(float(np.median(nrm)))
    return np.array(medians), np.array(norms)


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def write_csv(self, path, header_lines=()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["check", "passed", "measured", "threshold", "detail"])
            for c in self.checks:
                w.writerow([c.name, int(c.passed), repr(float(c.measured)),
                            repr(float(c.threshold)), c.detail])


def run_validation_suite(cfg: SystemConfig, seed: int | None = None, *, n_trials: int = 10_000,
                         corrupt_aggregation: bool = False,
                         options: SolverOptions = SolverOptions()) -> ValidationReport:
    """Oracle checks of the analytic models against independent computations."""
    seed = cfg.rng_seed if seed is None else seed
    report = ValidationReport()

    # 1. analytic MSE against waveform Monte Carlo
    budget = derive_sensing_budget(cfg)
    comm = draw_comm_channel(cfg, rng_substream(seed, "validate/channel"))
    sol = solve(comm, cfg, budget, options)
    design = DesignVariables.aligned(sol.amplitudes, comm.response, sol.aggregation)
    emp = waveform.empirical_aircomp_mse(design, comm, cfg, n_trials,
                                         rng_substream(seed, "validate/montecarlo"))
    z = abs(emp.mean - sol.mse) / emp.stderr
    report.checks.append(CheckResult("analytic_vs_empirical_mse", z < 3.0, z, 3.0,
                                     f"empirical={emp.mean:.6g} analytic={sol.mse:.6g}"))

    # 2. aggregator optimality under perturbation
    agg = corrupted_aggregation if corrupt_aggregation else optimal_aggregation
    gain = aggregation_perturbation_gain(rng_substream(seed, "validate/perturb"), 1000,
                                         aggregator=agg)
    report.checks.append(CheckResult("aggregation_perturbation", gain <= 1e-12, gain, 1e-12,
                                     "corrupted" if corrupt_aggregation else ""))

    # 3. CRLB scaling laws
    sc = crlb_scaling(cfg)
    err = max(sc.rel_err_n, sc.rel_err_m)
    report.checks.append(CheckResult(
        "crlb_scaling", err < 0.03, err, 0.03,
        f"slope_N={sc.slope_n:.5g}/{sc.expected_slope_n:.5g} "
        f"slope_M={sc.slope_m:.5g}/{sc.expected_slope_m:.5g} "
        f"ratio={float(np.mean(sc.ratio_delay)):.5g}"))

    # 4. decoupled echo model
    med, norms = decoupling_study(cfg, seed, n_draws=10)
    mono = bool(np.all(np.diff(med) < 0) and np.all(np.diff(norms) < 0))
    report.checks.append(CheckResult("decoupling_residual", bool(med[-1] < 0.05 and mono),
                                     med[-1], 0.05, f"medians={med.round(5).tolist()}"))

    # 5. grid-oracle dominance on a tiny instance
    small = cfg.with_(n_devices=2, n_subcarriers=2, tx_power=1.0)
    H = draw_comm_channel(small, rng_substream(seed, "validate/oracle")).response
    floor = SensingBudget.from_floor([0.3, 0.6])
    g_min, _, g_res = grid_oracle(H, small.tx_power, floor.power_floor, small.ap_noise_power)
    s = solve(H, small, floor, options)
    report.checks.append(CheckResult("grid_oracle_dominance", s.mse_bar <= g_min + g_res,
                                     s.mse_bar - g_min, g_res))
    return report


def write_table(spec: ExperimentSpec, table: ResultTable, cfg: SystemConfig, seed: int,
                options: SolverOptions, out_dir, timing: bool = False) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{spec.experiment}.csv"
    header = metadata_lines(cfg, seed, options=asdict(options),
                            experiment={"experiment": spec.experiment, "grid": list(spec.grid),
                                        "draws": spec.n_channel_draws,
                                        "methods": list(spec.methods)})
    table.write_csv(path, header, timing=timing)
    return path


__all__ = [
    "CheckResult", "ConfigError", "CrlbScaling", "EXPERIMENTS", "ExperimentSpec", "METHODS",
    "ResultRow", "ResultTable", "ValidationReport", "aggregation_perturbation_gain",
    "corrupted_aggregation", "crlb_scaling", "decoupling_study", "grid_config", "grid_oracle",
    "loglog_slope", "metadata_lines", "run_convergence_trace", "run_experiment",
    "run_validation_suite", "solve_methods", "write_table",
]

"""Two-phase amplitude/aggregator design: SCA-based AO, then per-device ADMM refinement."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, fields

import numpy as np

from ..aircomp import MseBreakdown, align_phase, aligned_mse
from ..channel import CommChannel
from ..config import SensingBudget, SystemConfig, derive_sensing_budget
from .admm import (AdmmState, DeviceResult, admm_dual_update, admm_penalty_update,
                   admm_primal_step, admm_primal_update, augmented_lagrangian, refine_device)
from .baselines import baseline_epa, baseline_opas, solve_epa, solve_opas
from .sca import AoState, SCAStepError, floor_init, run_ao_phase, solve_p11, solve_p12_sca

__all__ = [
    "AdmmState", "AoState", "DeviceResult", "SCAStepError", "SolveReport", "SolverOptions",
    "TraceRow", "admm_dual_update", "admm_penalty_update", "admm_primal_step",
    "admm_primal_update", "augmented_lagrangian", "baseline_epa", "baseline_opas",
    "floor_init", "refine_device", "run_admm_phase", "run_ao_phase", "solve", "solve_epa",
    "solve_opas", "solve_p11", "solve_p12_sca", "write_trace_csv",
]


@dataclass(frozen=True)
class SolverOptions:
    eps_mse: float = 1e-6
    eps_pc: float = 1e-4
    eps_sc: float = 1e-4
    admm_growth: float = 2.0
    admm_decay: float = 0.5
    admm_max_iter: int = 10_000
    ao_max_iter: int = 20_000
    penalty_init: float = 1.0
    admm_primal: str = "exact"  # or "jacobi"
    printed_update: bool = False
    epa_printed_variant: bool = False
    refine: bool = True

    @classmethod
    def from_mapping(cls, data) -> "SolverOptions":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in dict(data).items() if k in names})


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    phase: str  # "ao" or "admm"
    device: int  # -1 during AO
    mse_bar: float
    gamma_pv: float = 0.0
    gamma_sv: float = 0.0
    lam: float = 0.0
    mu: float = 0.0
    delta: float = 0.0
    beta: float = 0.0


TRACE_COLUMNS = ("iteration", "phase", "device", "mse_bar", "gamma_pv", "gamma_sv",
                 "lambda", "mu", "delta", "beta")


@dataclass
class SolveReport:
    amplitudes: np.ndarray
    aggregation: np.ndarray
    mse_breakdown: MseBreakdown
    sca_amplitudes: np.ndarray
    sca_mse: MseBreakdown
    ao_iterations: int
    ao_converged: bool
    devices: list[DeviceResult] = field(default_factory=list)
    trace: list[TraceRow] = field(default_factory=list)
    segments: list[tuple[int, int, int]] = field(default_factory=list)  # (device, first, last row)
    ao_seconds: float = 0.0
    admm_seconds: float = 0.0
    warnings: list[str] = field(default_factory=list)

    @property
    def mse_bar(self) -> float:
        return self.mse_breakdown.mse_bar

    @property
    def mse(self) -> float:
        return self.mse_breakdown.mse

    @property
    def converged(self) -> bool:
        return self.ao_converged and all(d.converged for d in self.devices)

    def complex_tx(self, H) -> np.ndarray:
        return align_phase(self.amplitudes, H, self.aggregation)

    def powers(self) -> np.ndarray:
        return np.sum(self.amplitudes**2, axis=1)


def _response(H):
    return H.response if isinstance(H, CommChannel) else np.asarray(H)


def run_admm_phase(ao: AoState, H, cfg: SystemConfig, budget: SensingBudget,
                   options: SolverOptions = SolverOptions()) -> SolveReport:
    """Refine each device's amplitudes in index order with W frozen at the AO output."""
    H = _response(H)
    W = ao.aggregation
    sigma2 = cfg.ap_noise_power
    a_all = np.abs(W)[None, :] * np.abs(H)
    b = ao.amplitudes.copy()
    report = SolveReport(b, W, ao.mse, ao.amplitudes.copy(), ao.mse, ao.iteration, ao.converged)
    report.trace = [TraceRow(i, "ao", -1, m.mse_bar) for i, m in enumerate(ao.mse_trace)]
    noise_term = float(np.sum(np.abs(W) ** 2) * sigma2)
    row_obj = np.sum((a_all * b - 1.0) ** 2, axis=1)
    t0 = time.perf_counter()
    it = len(report.trace)
    for k in range(cfg.n_devices):
        state = AdmmState(delta=options.penalty_init, beta=options.penalty_init,
                          growth=options.admm_growth, decay=options.admm_decay,
                          eps_mse=options.eps_mse, eps_pc=options.eps_pc, eps_sc=options.eps_sc)
        res = refine_device(a_all[k], b[k], cfg.tx_power, float(budget.power_floor[k]),
                            state=state, max_iter=options.admm_max_iter,
                            primal=options.admm_primal, printed=options.printed_update)
        first = it
        others = float(np.sum(row_obj)) - row_obj[k] + noise_term
        for obj, _S, st in res.history:
            report.trace.append(TraceRow(it, "admm", k, others + obj, st.gamma_pv, st.gamma_sv,
                                         st.lam, st.mu, st.delta, st.beta))
            it += 1
        report.segments.append((k, first, it - 1))
        if not res.converged:
            report.warnings.append(f"device {k}: refinement did not converge in "
                                   f"{options.admm_max_iter} iterations")
        b[k] = res.amplitudes
        row_obj[k] = res.objective
        report.devices.append(res)
    report.admm_seconds = time.perf_counter() - t0
    report.amplitudes = b
    report.mse_breakdown = aligned_mse(b, W, H, sigma2)
    return report


def solve(H, cfg: SystemConfig, budget: SensingBudget | None = None,
          options: SolverOptions | None = None, **overrides) -> SolveReport:
    """Full two-phase design for one channel realisation.

    ``H`` is a (K, N) response or a CommChannel. Without ``budget`` the
    sensing floor is derived from the config thresholds. Keyword overrides
    replace individual SolverOptions fields.
    """
    options = options or SolverOptions()
    if overrides:
        options = SolverOptions(**{**options.__dict__, **overrides})
    H = _response(H)
    if budget is None:
        budget = derive_sensing_budget(cfg)
    if H.shape != (cfg.n_devices, cfg.n_subcarriers):
        raise ValueError(f"channel shape {H.shape} does not match config "
                         f"({cfg.n_devices}, {cfg.n_subcarriers})")
    t0 = time.perf_counter()
    ao = run_ao_phase(H, cfg.tx_power, budget.power_floor, cfg.ap_noise_power,
                      eps_mse=options.eps_mse, max_iter=options.ao_max_iter)
    ao_seconds = time.perf_counter() - t0
    if options.refine:
        report = run_admm_phase(ao, H, cfg, budget, options)
    else:
        report = SolveReport(ao.amplitudes, ao.aggregation, ao.mse, ao.amplitudes.copy(),
                             ao.mse, ao.iteration, ao.converged)
        report.trace = [TraceRow(i, "ao", -1, m.mse_bar) for i, m in enumerate(ao.mse_trace)]
    report.ao_seconds = ao_seconds
    if not ao.converged:
        report.warnings.append(f"AO phase hit ao_max_iter={options.ao_max_iter}")
    return report


def write_trace_csv(path, report: SolveReport, header_lines=()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        for k, first, last in report.segments:
            fh.write(f"# segment device={k} first={first} last={last}\n")
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in report.trace:
            w.writerow([r.iteration, r.phase, r.device, repr(r.mse_bar), repr(r.gamma_pv),
                        repr(r.gamma_sv), repr(r.lam), repr(r.mu), repr(r.delta), repr(r.beta)])

"""Reference power allocations: equal power and per-subcarrier clamped inversion."""

from __future__ import annotations

import math

import numpy as np

from ..aircomp import align_phase, aligned_mse, optimal_aggregation
from ..config import SensingBudget, SystemConfig


def baseline_epa(cfg: SystemConfig, budget: SensingBudget | None = None, *,
                 printed_variant: bool = False) -> np.ndarray:
    """Uniform amplitudes spending the whole budget, independent of channels and thresholds.

    ``printed_variant`` uses sqrt(P)/N instead, which only spends P/N.
    """
    K, N = cfg.n_devices, cfg.n_subcarriers
    P = cfg.tx_power
    value = math.sqrt(P) / N if printed_variant else math.sqrt(P / N)
    return np.full((K, N), value)


def baseline_opas(W, H, cfg: SystemConfig, budget: SensingBudget) -> np.ndarray:
    """Channel inversion 1/|W H| clamped to [sqrt(rho'/N), sqrt(P/N)] per subcarrier."""
    H = np.asarray(H)
    N = H.shape[1]
    g = np.abs(np.asarray(W)[None, :] * H)
    lo = np.sqrt(np.asarray(budget.power_floor, dtype=float) / N)[:, None]
    hi = math.sqrt(cfg.tx_power / N)
    with np.errstate(divide="ignore"):
        inv = np.where(g > 0, 1.0 / np.where(g > 0, g, 1.0), np.inf)
    return np.maximum(lo, np.minimum(hi, inv))


def _aggregate(b, H, noise_power, W_prev=None):
    W_prev = np.ones(H.shape[1], dtype=complex) if W_prev is None else W_prev
    return optimal_aggregation(align_phase(b, H, W_prev), H, noise_power)


def solve_epa(H, cfg: SystemConfig, budget: SensingBudget | None = None, *,
              printed_variant: bool = False):
    """EPA amplitudes with their MMSE aggregator. Returns (b, W, MseBreakdown)."""
    H = np.asarray(H)
    b = baseline_epa(cfg, budget, printed_variant=printed_variant)
    W = _aggregate(b, H, cfg.ap_noise_power)
    return b, W, aligned_mse(b, W, H, cfg.ap_noise_power)


def solve_opas(H, cfg: SystemConfig, budget: SensingBudget, *, rounds: int = 2):
    """OPAS via a short fixed point: W from EPA, clamp, re-aggregate, repeat.

    The reported aggregator is the MMSE one for the final amplitudes.
    """
    H = np.asarray(H)
    b = baseline_epa(cfg, budget)
    W = _aggregate(b, H, cfg.ap_noise_power)
    for _ in range(rounds):
        b = baseline_opas(W, H, cfg, budget)
        W = _aggregate(b, H, cfg.ap_noise_power, W)
    return b, W, aligned_mse(b, W, H, cfg.ap_noise_power)

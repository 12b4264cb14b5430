"""Augmented-Lagrangian refinement of the per-device amplitudes.

With the aggregator frozen, each device solves

    min  sum_n (a_n b_n - 1)^2   s.t.  rho' <= |b|^2 <= P

through the method of multipliers on the two power constraints, with
adaptive penalties. The primal step minimises the augmented Lagrangian,
whose stationarity condition is b_n = a_n / (a_n^2 + c(S)) with S = |b|^2 and

    c(S) = [lam + delta (S - P)]_+  -  [mu + beta (1/S - 1/rho')]_+ / S^2.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

logger = logging.getLogger(__name__)

PENALTY_MIN = 1e-8
PENALTY_MAX = 1e8
DENOM_FLOOR = 1e-10


@dataclass(frozen=True)
class AdmmState:
    lam: float = 0.0
    mu: float = 0.0
    delta: float = 1.0
    beta: float = 1.0
    growth: float = 2.0
    decay: float = 0.5
    gamma_pv: float = 0.0
    gamma_sv: float = 0.0
    eps_mse: float = 1e-6
    eps_pc: float = 1e-4
    eps_sc: float = 1e-4
    iteration: int = 0

    def __post_init__(self):
        if self.lam < 0 or self.mu < 0:
            raise ValueError("dual variables must be nonnegative")
        if not (self.delta > 0 and self.beta > 0):
            raise ValueError("penalties must be positive")
        if not (self.growth > 1 > self.decay > 0):
            raise ValueError("need growth > 1 > decay > 0")


def _multiplier_terms(S, state: AdmmState, tx_power: float, inv_floor: float, printed: bool):
    p = max(0.0, state.lam + state.delta * (S - tx_power))
    q = max(0.0, state.mu + state.beta * (1.0 / S - inv_floor))
    if printed:
        return 2.0 * state.delta * p - 2.0 * state.beta * q / S**2
    return p - q / S**2


def augmented_lagrangian(b, a, state: AdmmState, tx_power: float, inv_floor: float) -> float:
    b = np.asarray(b, dtype=float)
    S = float(np.sum(b**2))
    p = max(0.0, state.lam + state.delta * (S - tx_power))
    q = max(0.0, state.mu + state.beta * (1.0 / S - inv_floor))
    return float(np.sum((a * b - 1.0) ** 2)
                 + (p**2 - state.lam**2) / (2.0 * state.delta)
                 + (q**2 - state.mu**2) / (2.0 * state.beta))


def admm_primal_step(b, a, state: AdmmState, tx_power: float, inv_floor: float, *,
                     printed: bool = False) -> tuple[np.ndarray, bool]:
    """One Jacobi fixed-point step with S taken from the current iterate.

    Returns the new amplitudes and whether the denominator had to be clamped
    (a penalty overshoot).
    """
    a = np.asarray(a, dtype=float)
    S = float(np.sum(np.asarray(b, dtype=float) ** 2))
    den = a**2 + _multiplier_terms(S, state, tx_power, inv_floor, printed)
    overshoot = bool(np.any(den <= 0))
    return a / np.maximum(den, DENOM_FLOOR), overshoot


def admm_primal_update(a, state: AdmmState, tx_power: float, inv_floor: float, *,
                       printed: bool = False) -> np.ndarray:
    """Exact minimiser of the augmented Lagrangian over the amplitudes.

    The stationarity condition couples all subcarriers only through S, and
    G(S) = sum a^2 / (a^2 + c(S))^2 - S is strictly decreasing wherever the
    denominators are positive, so the self-consistent S is unique and found
    by bisection on log S.
    """
    a = np.asarray(a, dtype=float)
    a2 = a**2
    pos = a2 > 0
    if not np.any(pos):
        return np.zeros_like(a)
    amin2 = float(a2[pos].min())

    def G(S):
        c = _multiplier_terms(S, state, tx_power, inv_floor, printed)
        if amin2 + c <= 0:
            return math.inf
        return float(np.sum(a2[pos] / (a2[pos] + c) ** 2)) - S

    hi = max(tx_power, 1.0 / inv_floor, float(np.sum(1.0 / a2[pos])), 1e-300)
    while G(hi) > 0:
        hi *= 2.0
    lo = hi
    while G(lo) <= 0 and lo > 1e-300:
        lo *= 0.5
    llo, lhi = math.log(lo), math.log(hi)
    for _ in range(200):
        mid = 0.5 * (llo + lhi)
        if G(math.exp(mid)) > 0:
            llo = mid
        else:
            lhi = mid
        if lhi - llo < 1e-15:
            break
    S = math.exp(0.5 * (llo + lhi))
    c = _multiplier_terms(S, state, tx_power, inv_floor, printed)
    return np.where(pos, a / np.where(pos, a2 + c, 1.0), 0.0)


def admm_dual_update(state: AdmmState, S: float, tx_power: float, inv_floor: float) -> AdmmState:
    lam = max(0.0, state.lam + state.delta * (S - tx_power))
    mu = max(0.0, state.mu + state.beta * (1.0 / S - inv_floor))
    gpv = max(0.0, S - tx_power) / tx_power
    gsv = max(0.0, 1.0 / S - inv_floor) / inv_floor
    return replace(state, lam=lam, mu=mu, gamma_pv=gpv, gamma_sv=gsv)


def admm_penalty_update(state: AdmmState) -> AdmmState:
    """Grow a penalty while its constraint is violated beyond tolerance, else decay it."""
    delta = state.delta * (state.growth if state.gamma_pv > state.eps_pc else state.decay)
    beta = state.beta * (state.growth if state.gamma_sv > state.eps_sc else state.decay)
    return replace(
        state,
        delta=min(max(delta, PENALTY_MIN), PENALTY_MAX),
        beta=min(max(beta, PENALTY_MIN), PENALTY_MAX),
        iteration=state.iteration + 1,
    )


@dataclass
class DeviceResult:
    amplitudes: np.ndarray
    objective: float
    iterations: int
    converged: bool
    improved: bool
    history: list  # (objective, S, state) per iteration


def _project_annulus(b, floor: float, tx_power: float) -> np.ndarray:
    S = float(np.sum(b**2))
    if S <= 0:
        return b
    target = min(max(S, floor), tx_power)
    return b if target == S else b * math.sqrt(target / S)


def refine_device(a, warm, tx_power: float, floor: float, *, state: AdmmState | None = None,
                  max_iter: int = 10_000, primal: str = "exact",
                  printed: bool = False) -> DeviceResult:
    """Run the multiplier iteration for one device from a feasible warm start.

    Every iterate is pulled radially onto the annulus and scored; the best
    such point (the warm start included) is returned, so the result is
    feasible and never worse than the warm start.
    """
    a = np.asarray(a, dtype=float)
    b = np.array(warm, dtype=float)
    inv_floor = 1.0 / floor
    state = state or AdmmState()
    best = b.copy()
    best_obj = float(np.sum((a * best - 1.0) ** 2))
    start_obj = best_obj
    prev_obj = best_obj
    prev_S = float(np.sum(b**2))
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if primal == "exact":
            b_new = admm_primal_update(a, state, tx_power, inv_floor, printed=printed)
        elif primal == "jacobi":
            b_new, overshoot = admm_primal_step(b, a, state, tx_power, inv_floor, printed=printed)
            if overshoot:
                logger.debug("penalty overshoot at iteration %d; decaying and retrying", it)
                state = replace(state, delta=max(state.delta * state.decay, PENALTY_MIN),
                                beta=max(state.beta * state.decay, PENALTY_MIN))
                b_new, _ = admm_primal_step(b, a, state, tx_power, inv_floor, printed=printed)
            S_new = float(np.sum(b_new**2))
            if abs(S_new - prev_S) > 0.1 * prev_S:
                b_new = 0.5 * (b + b_new)
        else:
            raise ValueError(f"unknown primal mode {primal!r}")
        b = b_new
        S = float(np.sum(b**2))
        obj = float(np.sum((a * b - 1.0) ** 2))
        state = admm_dual_update(state, S, tx_power, inv_floor)
        history.append((obj, S, state))
        proj = _project_annulus(b, floor, tx_power)
        pobj = float(np.sum((a * proj - 1.0) ** 2))
        if pobj < best_obj:
            best, best_obj = proj, pobj
        done = (abs(prev_obj - obj) < state.eps_mse and state.gamma_pv <= state.eps_pc
                and state.gamma_sv <= state.eps_sc)
        state = admm_penalty_update(state)
        prev_obj, prev_S = obj, S
        if done:
            converged = True
            break
    if not converged:
        logger.warning("multiplier iteration hit max_iter=%d; returning best feasible iterate", max_iter)
    return DeviceResult(best, best_obj, it, converged, best_obj < start_obj, history)

"""Delay/Doppler Cramer-Rao bounds for the OFDM echo model.

Two independent routes are kept side by side: the closed-form bounds used as
optimizer constraints, and a Fisher-information computation over the
matched-filtered echo model

    A[m, n] = alpha * B[n] * exp(j (m * vbar - n * taubar + psi))

with parameter vector theta = (taubar, vbar, alpha, psi), where
taubar = 2 pi df tau and vbar = 2 pi T_o f_d.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import SensingBudget, SystemConfig

logger = logging.getLogger(__name__)

THETA_NAMES = ("taubar", "vbar", "alpha", "psi")
DELAY_BLOCK = (0, 2, 3)
DOPPLER_BLOCK = (1, 2, 3)


class RankDeficientFisher(np.linalg.LinAlgError):
    """A reduced Fisher block carries no information about its parameter."""


def crlb_distance(power, alpha, noise_power, n_symbols, n_subcarriers,
                  subcarrier_spacing, light_speed):
    """Distance-estimate CRLB in m^2 for total transmit power ``power`` (mW)."""
    N, M = n_subcarriers, n_symbols
    if N < 2:
        raise ValueError("delay bound needs N >= 2")
    num = 3.0 * noise_power * light_speed**2
    den = 8.0 * math.pi**2 * subcarrier_spacing**2 * np.asarray(power) * alpha**2 * M * N * (N**2 - 1)
    return num / den


def crlb_velocity(power, alpha, noise_power, n_symbols, n_subcarriers,
                  symbol_duration, carrier_frequency, light_speed):
    """Velocity-estimate CRLB in (m/s)^2."""
    N, M = n_subcarriers, n_symbols
    if M < 2:
        raise ValueError("velocity bound needs M >= 2")
    num = 3.0 * noise_power * light_speed**2
    den = (8.0 * math.pi**2 * symbol_duration**2 * carrier_frequency**2
           * np.asarray(power) * alpha**2 * M * N * (M**2 - 1))
    return num / den


def crlb_pair(cfg: SystemConfig, power, alpha: float | None = None):
    alpha = cfg.attenuation if alpha is None else alpha
    d = crlb_distance(power, alpha, cfg.sensing_noise_power, cfg.n_symbols,
                      cfg.n_subcarriers, cfg.subcarrier_spacing, cfg.light_speed)
    v = crlb_velocity(power, alpha, cfg.sensing_noise_power, cfg.n_symbols,
                      cfg.n_subcarriers, cfg.symbol_duration, cfg.carrier_frequency,
                      cfg.light_speed)
    return d, v


@dataclass(frozen=True)
class SensingParams:
    taubar: float
    vbar: float
    alpha: float
    psi: float = 0.0
    mf_length: int = 0  # known phase offset, not estimated

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.taubar, self.vbar, self.alpha, self.psi])

    @classmethod
    def from_physical(cls, distance: float, velocity: float, alpha: float, psi: float,
                      cfg: SystemConfig, mf_length: int = 0) -> "SensingParams":
        doppler = 2.0 * velocity * cfg.carrier_frequency / cfg.light_speed
        if abs(doppler) > 0.05 * cfg.subcarrier_spacing:
            warnings.warn(
                f"Doppler {doppler:.4g} Hz is not small against the subcarrier "
                f"spacing {cfg.subcarrier_spacing:.4g} Hz; decoupled model is inaccurate",
                stacklevel=2,
            )
        taubar = distance * 4.0 * math.pi * cfg.subcarrier_spacing / cfg.light_speed
        vbar = 2.0 * math.pi * cfg.symbol_duration * doppler
        return cls(taubar, vbar, alpha, psi, mf_length)

    def distance(self, cfg: SystemConfig) -> float:
        return cfg.light_speed / (4.0 * math.pi * cfg.subcarrier_spacing) * self.taubar

    def doppler(self, cfg: SystemConfig) -> float:
        return self.vbar / (2.0 * math.pi * cfg.symbol_duration)

    def velocity(self, cfg: SystemConfig) -> float:
        return self.doppler(cfg) * cfg.light_speed / (2.0 * cfg.carrier_frequency)


def echo_mean(theta, amplitudes, n_symbols: int, mf_length: int = 0) -> np.ndarray:
    """Noise-free decoupled echo A[m, n] for one device."""
    taubar, vbar, alpha, psi = theta
    b = np.asarray(amplitudes, dtype=complex)
    N = b.size
    m = np.arange(n_symbols)[:, None]
    n = np.arange(N)[None, :]
    offset = 2.0 * math.pi * n * mf_length / N
    return alpha * b[None, :] * np.exp(1j * (m * vbar - n * taubar - offset + psi))


def echo_mean_jacobian(theta, amplitudes, n_symbols: int, mf_length: int = 0) -> np.ndarray:
    """Analytic d A[m, n] / d theta_i, shape (4, M, N)."""
    alpha = theta[2]
    A = echo_mean(theta, amplitudes, n_symbols, mf_length)
    M, N = A.shape
    m = np.arange(M)[:, None]
    n = np.arange(N)[None, :]
    jac = np.empty((4, M, N), dtype=complex)
    jac[0] = -1j * n * A
    jac[1] = 1j * m * A
    if alpha != 0:
        jac[2] = A / alpha
    else:
        jac[2] = echo_mean((theta[0], theta[1], 1.0, theta[3]), amplitudes, M, mf_length)
    jac[3] = 1j * A
    return jac


def finite_difference_jacobian(signal_mean: Callable[[np.ndarray], np.ndarray],
                               theta0, rel_step: float = 1e-5) -> np.ndarray:
    theta0 = np.asarray(theta0, dtype=float)
    cols = []
    for i in range(theta0.size):
        h = rel_step * max(1.0, abs(theta0[i]))
        up, dn = theta0.copy(), theta0.copy()
        up[i] += h
        dn[i] -= h
        cols.append((signal_mean(up) - signal_mean(dn)) / (2.0 * h))
    return np.stack(cols)


def _fisher_from_jacobian(jac: np.ndarray, noise_power: float) -> np.ndarray:
    # J_ij = (1/sigma^2) sum Re(conj(dA_i) dA_j); every axis past the first is summed
    flat = jac.reshape(jac.shape[0], -1)
    J = np.real(flat.conj() @ flat.T) / noise_power
    return 0.5 * (J + J.T)


@dataclass(frozen=True)
class FisherMatrix:
    full: np.ndarray  # 4x4 over all (m, n)
    delay_block: np.ndarray  # 3x3 over (taubar, alpha, psi), one symbol's sum over n
    doppler_block: np.ndarray  # 3x3 over (vbar, alpha, psi), one subcarrier's sum over m
    n_symbols: int
    n_subcarriers: int


def numerical_fisher(theta0, amplitudes, noise_power: float, n_symbols: int, *,
                     mf_length: int = 0, method: str = "analytic",
                     signal_mean: Callable | None = None) -> FisherMatrix:
    """Fisher information of the decoupled echo model around ``theta0``.

    ``method="analytic"`` differentiates the exponential model in closed
    form; ``"fd"`` uses central differences with step 1e-5 * max(1, |theta|)
    on ``signal_mean`` (default: the same model). The reduced blocks follow
    the per-symbol (delay) and per-subcarrier (Doppler) sums.
    """
    theta0 = np.asarray(theta0, dtype=float)
    b = np.asarray(amplitudes)
    if method == "analytic":
        jac = echo_mean_jacobian(theta0, b, n_symbols, mf_length)
    elif method == "fd":
        fn = signal_mean or (lambda th: echo_mean(th, b, n_symbols, mf_length))
        jac = finite_difference_jacobian(fn, theta0)
    else:
        raise ValueError(f"unknown method {method!r}")
    full = _fisher_from_jacobian(jac, noise_power)
    # per-symbol block (sum over n), averaged over the M symbols
    d_idx = list(DELAY_BLOCK)
    delay = _fisher_from_jacobian(jac[d_idx], noise_power) / n_symbols
    # per-subcarrier block (sum over m), averaged over the N subcarriers
    v_idx = list(DOPPLER_BLOCK)
    doppler = _fisher_from_jacobian(jac[v_idx], noise_power) / b.size
    return FisherMatrix(full, delay, doppler, n_symbols, b.size)


def _checked_inverse(block: np.ndarray, what: str) -> np.ndarray:
    scale = np.abs(np.diag(block)).max()
    if scale == 0 or not np.all(np.isfinite(block)):
        raise RankDeficientFisher(f"{what} Fisher block carries no information")
    cond = np.linalg.cond(block)
    if not np.isfinite(cond) or cond > 1e14:
        raise RankDeficientFisher(f"{what} Fisher block is singular (cond={cond:.3g})")
    return np.linalg.inv(block)


def averaged_crlb_from_fisher(F: FisherMatrix, which: str, cfg: SystemConfig | None = None):
    """Averaged bound (1/(MN)) [J_block^-1]_00 on taubar or vbar.

    With ``cfg`` the result is converted to distance (m^2) or velocity
    ((m/s)^2) variance.
    """
    M, N = F.n_symbols, F.n_subcarriers
    if which == "delay":
        var = _checked_inverse(F.delay_block, "delay")[0, 0] / (M * N)
    elif which == "doppler":
        var = _checked_inverse(F.doppler_block, "Doppler")[0, 0] / (M * N)
    else:
        raise ValueError("which must be 'delay' or 'doppler'")
    return _to_physical(var, which, cfg)


def crlb_from_fisher(F: FisherMatrix, which: str, cfg: SystemConfig | None = None):
    """Bound [J^-1]_ii from the full Fisher matrix over every (m, n)."""
    inv = _checked_inverse(F.full, "full")
    i = 0 if which == "delay" else 1 if which == "doppler" else None
    if i is None:
        raise ValueError("which must be 'delay' or 'doppler'")
    return _to_physical(inv[i, i], which, cfg)


def _to_physical(var: float, which: str, cfg: SystemConfig | None) -> float:
    if cfg is None:
        return float(var)
    if which == "delay":
        scale = cfg.light_speed / (4.0 * math.pi * cfg.subcarrier_spacing)
    else:
        scale = cfg.light_speed / (4.0 * math.pi * cfg.symbol_duration * cfg.carrier_frequency)
    return float(var * scale**2)


def meets_thresholds(cfg: SystemConfig, budget: SensingBudget, powers,
                     alpha: float | None = None, rtol: float = 1e-10) -> np.ndarray:
    """Per-device check that both CRLBs are within their thresholds."""
    d, v = crlb_pair(cfg, np.asarray(powers, dtype=float), alpha)
    return (d <= budget.eta * (1 + rtol)) & (v <= budget.xi * (1 + rtol))


def write_crlb_table(path, cfg: SystemConfig, budget: SensingBudget, powers,
                     alpha: float | None = None) -> None:
    powers = np.asarray(powers, dtype=float)
    d, v = crlb_pair(cfg, powers, alpha)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["device", "power", "crlb_distance_m2", "crlb_velocity_m2s2", "rho_prime_mw"])
        for k in range(powers.size):
            w.writerow([k, repr(float(powers[k])), repr(float(d[k])), repr(float(v[k])),
                        repr(float(budget.power_floor[k]))])

"""Over-the-air computation MSE, phase alignment and the MMSE aggregator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DeadSubcarrierError(ValueError):
    """Positive amplitude on a subcarrier whose effective channel W*H is zero."""


@dataclass(frozen=True)
class MseBreakdown:
    misalignment: float
    noise: float
    n_devices: int
    n_subcarriers: int

    @property
    def mse_bar(self) -> float:
        return self.misalignment + self.noise

    @property
    def mse(self) -> float:
        return self.mse_bar / (self.n_subcarriers * self.n_devices**2)

    def as_row(self) -> dict[str, float]:
        return {
            "misalignment": self.misalignment,
            "noise": self.noise,
            "mse_bar": self.mse_bar,
            "mse": self.mse,
        }


@dataclass(frozen=True)
class DesignVariables:
    amplitudes: np.ndarray  # (K, N) nonnegative
    aggregation: np.ndarray  # (N,) complex
    complex_tx: np.ndarray  # (K, N) aligned B

    @classmethod
    def aligned(cls, amplitudes, channel, aggregation) -> "DesignVariables":
        amplitudes = np.asarray(amplitudes, dtype=float)
        W = np.asarray(aggregation, dtype=complex)
        return cls(amplitudes, W, align_phase(amplitudes, channel, W))

    def powers(self) -> np.ndarray:
        return np.sum(self.amplitudes**2, axis=1)


def align_phase(amplitudes, channel, aggregation) -> np.ndarray:
    """Complex transmit coefficients making W[n] H[k, n] B[k, n] real and >= 0.

    Uses u = conj(W H) / |W H|, the only unit-modulus factor that rotates the
    product onto the positive real axis.
    """
    b = np.asarray(amplitudes, dtype=float)
    g = np.asarray(aggregation)[None, :] * np.asarray(channel)
    mag = np.abs(g)
    dead = (mag == 0) & (b > 0)
    if np.any(dead):
        k, n = np.argwhere(dead)[0]
        raise DeadSubcarrierError(f"device {k}, subcarrier {n}: W*H = 0 with positive amplitude")
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(mag > 0, np.conj(g) / mag, 1.0)
    return b * u


def mse_objective(B, W, H, noise_power: float) -> MseBreakdown:
    """Misalignment and noise terms of the AirComp MSE for complex B."""
    B = np.asarray(B)
    H = np.asarray(H)
    W = np.asarray(W)
    if B.shape != H.shape or W.shape != (H.shape[1],):
        raise ValueError(f"shape mismatch: B{B.shape} H{H.shape} W{W.shape}")
    gain = W[None, :] * H * B
    mis = float(np.sum(np.abs(gain - 1.0) ** 2))
    noise = float(np.sum(np.abs(W) ** 2) * noise_power)
    K, N = H.shape
    return MseBreakdown(mis, noise, K, N)


def aligned_mse(amplitudes, W, H, noise_power: float) -> MseBreakdown:
    """Same objective under alignment: sum (|W H| b - 1)^2 + sum |W|^2 sigma^2."""
    b = np.asarray(amplitudes, dtype=float)
    a = np.abs(np.asarray(W)[None, :] * np.asarray(H))
    mis = float(np.sum((a * b - 1.0) ** 2))
    noise = float(np.sum(np.abs(W) ** 2) * noise_power)
    K, N = b.shape
    return MseBreakdown(mis, noise, K, N)


def optimal_aggregation(B, H, noise_power: float) -> np.ndarray:
    """Per-subcarrier MMSE aggregator.

    W[n] = sum_k conj(H B) / (sum_k |B|^2 |H|^2 + sigma^2). The conjugate is
    a no-op once B is phase aligned (H B real) and makes the update correct
    for arbitrary complex B.
    """
    HB = np.asarray(H) * np.asarray(B)
    den = np.sum(np.abs(HB) ** 2, axis=0) + noise_power
    return np.sum(np.conj(HB), axis=0) / den


def aligned_aggregation(amplitudes, H, noise_power: float) -> np.ndarray:
    """Real aggregator for amplitudes aligned to a real positive W."""
    c = np.abs(np.asarray(H)) * np.asarray(amplitudes)
    return np.sum(c, axis=0) / (np.sum(c**2, axis=0) + noise_power)


def per_subcarrier_objective(w, gains, noise_power: float) -> np.ndarray:
    """sum_k |w g_k - 1|^2 + |w|^2 sigma^2 for each subcarrier; gains = H B, shape (K, N)."""
    w = np.asarray(w)
    return np.sum(np.abs(w * gains - 1.0) ** 2, axis=0) + np.abs(w) ** 2 * noise_power


@dataclass(frozen=True)
class AsymptoticTrace:
    tx_power: np.ndarray
    mse_bar: np.ndarray
    max_abs_w: np.ndarray
    abs_w: np.ndarray  # (len(grid), N)

    @property
    def decreasing(self) -> bool:
        return bool(np.all(np.diff(self.mse_bar) < 0))


def asymptotic_mse_check(H, cfg, power_grid, budget=None, **solver_opts) -> AsymptoticTrace:
    """Re-solve one channel for increasing power budgets (mW)."""
    from .optimizer import solve  # local: optimizer depends on this module

    grid = np.asarray(power_grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("power grid must be increasing")
    mse, wmax, wabs = [], [], []
    for p in grid:
        res = solve(H, cfg.with_(tx_power=float(p)), budget=budget, **solver_opts)
        mse.append(res.mse_bar)
        wabs.append(np.abs(res.aggregation))
        wmax.append(float(np.max(np.abs(res.aggregation))))
    return AsymptoticTrace(grid, np.array(mse), np.array(wmax), np.array(wabs))

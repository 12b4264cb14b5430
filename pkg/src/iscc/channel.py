"""Tapped-delay-line channels and their subcarrier responses.

Communication link (device -> AP), the target reflection, and the
inter-device interference/direct paths used by the echo simulator. Taps sit
at integer sample lags; fractional delays are not modelled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, SystemConfig


def frequency_response(taps: np.ndarray, delays: np.ndarray, n_subcarriers: int,
                       normalize: bool = True) -> np.ndarray:
    """H[k, n] = (1/sqrt(L)) sum_l h[k, l] exp(-j 2 pi delays[k, l] n / N)."""
    taps = np.atleast_2d(taps)
    delays = np.broadcast_to(np.atleast_2d(delays), taps.shape)
    n = np.arange(n_subcarriers)
    phase = np.exp(-2j * np.pi * delays[..., None] * n / n_subcarriers)
    H = np.einsum("kl,kln->kn", taps, phase)
    if normalize:
        H = H / math.sqrt(taps.shape[1])
    return H


@dataclass(frozen=True)
class CommChannel:
    taps: np.ndarray  # (K, L)
    delays: np.ndarray  # (K, L) integer sample lags
    response: np.ndarray  # (K, N)
    normalized: bool = True

    @property
    def memory(self) -> int:
        return int(self.delays.max()) + 1

    @property
    def n_devices(self) -> int:
        return self.response.shape[0]

    @property
    def n_subcarriers(self) -> int:
        return self.response.shape[1]

    def impulse_response(self) -> np.ndarray:
        """Time-domain taps as seen by the waveform, scale folded in."""
        K = self.taps.shape[0]
        out = np.zeros((K, self.memory), dtype=complex)
        scale = 1.0 / math.sqrt(self.taps.shape[1]) if self.normalized else 1.0
        for k in range(K):
            np.add.at(out[k], self.delays[k], self.taps[k] * scale)
        return out

    @classmethod
    def from_taps(cls, taps, n_subcarriers: int, delays=None,
                  normalize: bool = True) -> "CommChannel":
        taps = np.atleast_2d(np.asarray(taps, dtype=complex))
        if delays is None:
            delays = np.broadcast_to(np.arange(taps.shape[1]), taps.shape)
        delays = np.array(np.broadcast_to(delays, taps.shape), dtype=int)
        H = frequency_response(taps, delays, n_subcarriers, normalize)
        return cls(taps=taps, delays=delays, response=H, normalized=normalize)

    @classmethod
    def from_response(cls, response) -> "CommChannel":
        """Channel known only through its subcarrier response (e.g. imported)."""
        H = np.atleast_2d(np.asarray(response, dtype=complex))
        N = H.shape[1]
        # length-N impulse response that reproduces H exactly with the 1/sqrt(N) scale
        taps = np.fft.ifft(H, axis=1) * math.sqrt(N)
        delays = np.broadcast_to(np.arange(N), H.shape).copy()
        return cls(taps=taps, delays=delays, response=H, normalized=True)


def _power_profile(memory: int, profile: str, decay: float) -> np.ndarray:
    if profile == "uniform":
        p = np.ones(memory)
    elif profile == "exponential":
        p = np.exp(-np.arange(memory) / decay)
    else:
        raise ValueError(f"unknown power-delay profile {profile!r}")
    return p / p.sum()


def cscg(rng: np.random.Generator, shape, variance=1.0) -> np.ndarray:
    """Circularly symmetric complex Gaussian samples."""
    scale = np.sqrt(np.asarray(variance) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_comm_channel(cfg: SystemConfig, rng: np.random.Generator, *,
                      memory: int | None = None, profile: str = "uniform",
                      decay: float = 2.0, normalize: bool = True) -> CommChannel:
    """Rayleigh taps with unit average subcarrier gain.

    Tap variances follow the power-delay profile scaled so that
    E|H[k, n]|^2 = 1 with or without the 1/sqrt(L) normalisation.
    """
    L = cfg.comm_memory if memory is None else memory
    if L < 1:
        raise ConfigError("channel memory must be >= 1")
    if L > max(cfg.cp_length, 1):
        raise ConfigError(f"channel memory {L} exceeds CP length {cfg.cp_length}")
    K, N = cfg.n_devices, cfg.n_subcarriers
    var = _power_profile(L, profile, decay)
    if normalize:
        var = var * L
    taps = cscg(rng, (K, L), var)
    return CommChannel.from_taps(taps, N, normalize=normalize)


def attenuation_constant(distance: float, rcs: float, carrier_frequency: float,
                         light_speed: float) -> float:
    """Point-target radar attenuation sqrt(c^2 sigma / ((4 pi)^3 d^4 f_c^2))."""
    if not distance > 0:
        raise ValueError("target distance must be positive")
    if not rcs > 0:
        raise ValueError("radar cross section must be positive")
    return math.sqrt(
        light_speed**2 * rcs / ((4 * math.pi) ** 3 * distance**4 * carrier_frequency**2)
    )


@dataclass(frozen=True)
class SensingChannels:
    target_taps: np.ndarray  # (K, L_trc) complex
    target_delays: np.ndarray  # (K, L_trc) integer lags
    # interference[k, i, l]: path from device i into device k's receiver
    interference_taps: np.ndarray  # (K, K, L_ic)
    direct_taps: np.ndarray  # (K, K, L_ddc)
    roundtrip_delay: np.ndarray  # (K,)
    attenuation: float
    assumption1: bool = True

    @property
    def n_devices(self) -> int:
        return self.target_taps.shape[0]

    def target_impulse(self, k: int, length: int) -> np.ndarray:
        out = np.zeros(length, dtype=complex)
        np.add.at(out, self.target_delays[k], self.target_taps[k])
        return out


def draw_sensing_channels(cfg: SystemConfig, rng: np.random.Generator, *,
                          assumption1: bool = True, attenuation: float | None = None,
                          interference_power: float | None = None,
                          roundtrip_delay=None) -> SensingChannels:
    """Target, interference and direct device-to-device channels.

    In assumption-1 mode the target response collapses to one complex gain
    ``alpha * exp(j phi)`` at the round-trip lag. Otherwise ``L_trc`` taps
    with a common magnitude but independent phases sit at consecutive lags
    after it.
    """
    K = cfg.n_devices
    alpha = cfg.attenuation if attenuation is None else float(attenuation)
    p_int = cfg.interference_power if interference_power is None else interference_power
    if alpha < 0:
        raise ValueError("attenuation must be nonnegative")
    L_trc = 1 if assumption1 else cfg.target_memory
    L_ic, L_ddc = cfg.interference_memory, cfg.direct_memory
    cp = cfg.cp_length
    if max(L_ic, L_ddc) > max(cp, 1):
        raise ConfigError("interference/direct memory exceeds CP length")
    if roundtrip_delay is None:
        hi = cp - L_trc
        if hi < 0:
            raise ConfigError("target memory exceeds CP length")
        roundtrip_delay = rng.integers(0, hi + 1, size=K)
    tau = np.broadcast_to(np.asarray(roundtrip_delay, dtype=int), (K,)).copy()
    if np.any(tau < 0) or np.any(tau + L_trc > max(cp, 1)):
        raise ConfigError("echo lag plus target memory must fit in the CP")

    phases = np.exp(2j * np.pi * rng.random((K, L_trc)))
    if assumption1:
        taps = alpha * phases[:, :1]
    else:
        taps = alpha * phases / math.sqrt(L_trc)
    delays = tau[:, None] + np.arange(L_trc)[None, :]

    g_ic = cscg(rng, (K, K, L_ic), p_int / L_ic)
    g_dd = cscg(rng, (K, K, L_ddc), p_int / L_ddc)
    own = np.arange(K)
    g_ic[own, own] = 0.0
    g_dd[own, own] = 0.0
    return SensingChannels(
        target_taps=taps,
        target_delays=delays,
        interference_taps=g_ic,
        direct_taps=g_dd,
        roundtrip_delay=tau,
        attenuation=alpha,
        assumption1=assumption1,
    )


def save_response(path: str | Path, response: np.ndarray) -> None:
    """Write H as text: one row per device, re/im pairs at 17 significant digits."""
    H = np.atleast_2d(np.asarray(response, dtype=complex))
    K, N = H.shape
    with open(path, "w") as fh:
        fh.write(f"# channel response K={K} N={N} columns=re0 im0 re1 im1 ...\n")
        for row in H:
            vals = np.empty(2 * N)
            vals[0::2] = row.real
            vals[1::2] = row.imag
            fh.write(" ".join(f"{v:.17g}" for v in vals) + "\n")


def load_response(path: str | Path) -> np.ndarray:
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] % 2:
        raise ValueError(f"{path}: odd number of columns, expected re/im pairs")
    return data[:, 0::2] + 1j * data[:, 1::2]

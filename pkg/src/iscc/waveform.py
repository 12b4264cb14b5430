"""Time-domain OFDM Monte Carlo: uplink AirComp and device-side radar echoes.

All DFTs are unitary (``norm="ortho"``), so a sample-spaced channel with
taps h[l] multiplies subcarrier n by sum_l h[l] exp(-j 2 pi l n / N) after
CP removal.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .aircomp import DesignVariables
from .channel import CommChannel, SensingChannels, cscg
from .config import SystemConfig


class CyclicPrefixError(ValueError):
    """Channel memory (or echo lag plus memory) exceeds the cyclic prefix."""


def idft(X, axis=-1):
    return np.fft.ifft(X, axis=axis, norm="ortho")


def dft(x, axis=-1):
    return np.fft.fft(x, axis=axis, norm="ortho")


def draw_data(rng: np.random.Generator, shape, distribution: str = "cscg") -> np.ndarray:
    """Zero-mean unit-variance data symbols."""
    if distribution == "cscg":
        return cscg(rng, shape)
    if distribution == "unit_modulus":
        return np.exp(2j * np.pi * rng.random(shape))
    if distribution == "uniform_disk":
        # radius sqrt(2 U) keeps E|C|^2 = 1
        r = np.sqrt(2.0 * rng.random(shape))
        return r * np.exp(2j * np.pi * rng.random(shape))
    raise ValueError(f"unknown data distribution {distribution!r}")


@dataclass(frozen=True)
class OfdmFrame:
    data: np.ndarray  # (..., K, N) C
    freq_symbols: np.ndarray  # X = B C
    time_samples: np.ndarray  # IDFT of X
    cp_extended: np.ndarray  # (..., K, N + N_c)
    cp_length: int

    @classmethod
    def build(cls, tx, data, cp_length: int) -> "OfdmFrame":
        X = np.asarray(tx) * np.asarray(data)
        x = idft(X)
        N = x.shape[-1]
        if not 0 <= cp_length <= N:
            raise ValueError("CP length must lie in [0, N]")
        xcp = np.concatenate([x[..., N - cp_length:], x], axis=-1)
        return cls(np.asarray(data), X, x, xcp, cp_length)

    @property
    def n_subcarriers(self) -> int:
        return self.time_samples.shape[-1]


def _propagate(xcp, taps, delays, cp_length: int, N: int):
    """Linear convolution with sample-lag taps, then CP removal.

    ``xcp`` has shape (..., N + N_c); ``taps``/``delays`` are 1-D.
    """
    out = np.zeros(xcp.shape[:-1] + (N,), dtype=complex)
    for h, d in zip(np.ravel(taps), np.ravel(delays)):
        d = int(d)
        if d > cp_length:
            raise CyclicPrefixError(f"lag {d} exceeds CP length {cp_length}")
        out += h * xcp[..., cp_length - d: cp_length - d + N]
    return out


def simulate_uplink(frame: OfdmFrame, comm: CommChannel, noise_power: float,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Superposed received subcarriers Y[..., n] at the access point."""
    N = frame.n_subcarriers
    if comm.memory - 1 > frame.cp_length:
        raise CyclicPrefixError(f"channel memory {comm.memory} exceeds CP length {frame.cp_length}")
    h = comm.impulse_response()
    lags = np.arange(h.shape[1])
    y = np.zeros(frame.cp_extended.shape[:-2] + (N,), dtype=complex)
    for k in range(h.shape[0]):
        y += _propagate(frame.cp_extended[..., k, :], h[k], lags, frame.cp_length, N)
    if noise_power > 0:
        if rng is None:
            raise ValueError("noise requires an rng")
        y = y + cscg(rng, y.shape, noise_power)
    return dft(y)


@dataclass(frozen=True)
class EmpiricalMse:
    mean: float
    stderr: float
    n_trials: int
    per_trial: np.ndarray


def empirical_aircomp_mse(design: DesignVariables, comm: CommChannel, cfg: SystemConfig,
                          n_trials: int, rng: np.random.Generator, *, batch: int = 1000,
                          distribution: str = "cscg", noise_power: float | None = None,
                          keep: int = 0):
    """Monte Carlo estimate of (1/N) sum_n |F_hat - F|^2 with F = mean_k C.

    Returns an EmpiricalMse; with ``keep > 0`` also the first ``keep``
    trials' (F, F_hat) pairs for trace export.
    """
    sigma2 = cfg.ap_noise_power if noise_power is None else noise_power
    K, N = comm.n_devices, comm.n_subcarriers
    W = np.asarray(design.aggregation)
    errs = []
    kept = []
    done = 0
    while done < n_trials:
        T = min(batch, n_trials - done)
        C = draw_data(rng, (T, K, N), distribution)
        frame = OfdmFrame.build(design.complex_tx, C, cfg.cp_length)
        Y = simulate_uplink(frame, comm, sigma2, rng)
        F = C.mean(axis=1)
        F_hat = W * Y / K
        errs.append(np.mean(np.abs(F_hat - F) ** 2, axis=1))
        if len(kept) < keep:
            kept.extend(zip(F[: keep - len(kept)], F_hat[: keep - len(kept)]))
        done += T
    e = np.concatenate(errs)
    sd = float(np.std(e, ddof=1)) if e.size > 1 else 0.0
    res = EmpiricalMse(float(e.mean()), sd / math.sqrt(e.size), e.size, e)
    return (res, kept) if keep else res


@dataclass(frozen=True)
class MatchedFilterBank:
    sequences: np.ndarray  # (..., N) c = IDFT(C)
    filters: np.ndarray  # (..., P) H_s = conj(c_{(P - s) mod N})
    length: int

    @classmethod
    def from_data(cls, data, length: int | None = None) -> "MatchedFilterBank":
        C = np.asarray(data)
        N = C.shape[-1]
        P = N if length is None else int(length)
        if not 1 <= P <= N:
            raise ValueError("matched filter length must lie in [1, N]")
        c = idft(C)
        idx = (P - np.arange(P)) % N
        return cls(c, np.conj(c[..., idx]), P)

    def frequency_response(self) -> np.ndarray:
        """Unitary DFT of the zero-padded filters, length N."""
        N = self.sequences.shape[-1]
        pad = np.zeros(self.filters.shape[:-1] + (N,), dtype=complex)
        pad[..., : self.length] = self.filters
        return dft(pad)


def simulate_echo(tx, data, sensing: SensingChannels, cfg: SystemConfig, *,
                  doppler_hz: float = 0.0, psi: float = 0.0, noise_power: float | None = None,
                  rng: np.random.Generator | None = None,
                  include_interference: bool = True) -> np.ndarray:
    """Received echoes u[m, k, s] after CP removal for M symbols.

    ``tx`` is the (K, N) complex transmit coefficient matrix and ``data`` the
    (M, K, N) symbols. The target path of symbol m carries the Doppler phase
    exp(j 2 pi m T_o f_d) and the common phase exp(j psi). Other devices leak
    in through the interference and direct paths at lags 0..L-1.
    """
    sigma2 = cfg.sensing_noise_power if noise_power is None else noise_power
    data = np.asarray(data)
    M, K, N = data.shape
    frame = OfdmFrame.build(tx, data, cfg.cp_length)
    xcp = frame.cp_extended
    m = np.arange(M)
    rot = np.exp(1j * (2.0 * math.pi * m * cfg.symbol_duration * doppler_hz + psi))
    u = np.zeros((M, K, N), dtype=complex)
    for k in range(K):
        u[:, k] = _propagate(xcp[:, k], sensing.target_taps[k], sensing.target_delays[k],
                             cfg.cp_length, N) * rot[:, None]
        if include_interference and K > 1:
            for i in range(K):
                if i == k:
                    continue
                for g in (sensing.interference_taps[k, i], sensing.direct_taps[k, i]):
                    u[:, k] += _propagate(xcp[:, i], g, np.arange(g.size), cfg.cp_length, N)
    if sigma2 > 0:
        if rng is None:
            raise ValueError("noise requires an rng")
        u = u + cscg(rng, u.shape, sigma2)
    return u


def matched_filter_and_dft(echo, bank: MatchedFilterBank) -> np.ndarray:
    """Filter each symbol with its own data, average over symbols, then DFT.

    The circular convolution is scaled by 1/sqrt(N) so a full-length filter
    has unit average gain. Returns A_hat with the symbol axis removed.
    """
    u = np.asarray(echo)
    N = u.shape[-1]
    # unitary DFT of a circular convolution is sqrt(N) * U * Hf; the 1/sqrt(N) gain cancels it
    filtered = idft(dft(u) * bank.frequency_response())
    return dft(filtered.mean(axis=0))


def doppler_average(doppler_hz: float, n_symbols: int, symbol_duration: float) -> complex:
    m = np.arange(n_symbols)
    return complex(np.mean(np.exp(2j * math.pi * m * symbol_duration * doppler_hz)))


def decoupled_echo_model(tx, sensing: SensingChannels, cfg: SystemConfig, n_symbols: int, *,
                         doppler_hz: float = 0.0, psi: float = 0.0,
                         mf_length: int | None = None) -> np.ndarray:
    """Noise-free decoupled model, one row per device.

    A[k, n] = G[k, n] B[k, n] D exp(j psi) exp(-j 2 pi n P / N), where G is
    the target response on subcarrier n (alpha exp(j phi) exp(-j 2 pi n tau / N)
    under the single-path assumption) and D the symbol-averaged Doppler phase.
    """
    B = np.asarray(tx)
    K, N = B.shape
    P = N if mf_length is None else mf_length
    n = np.arange(N)
    G = np.einsum("kl,kln->kn", sensing.target_taps,
                  np.exp(-2j * math.pi * sensing.target_delays[..., None] * n / N))
    D = doppler_average(doppler_hz, n_symbols, cfg.symbol_duration)
    return G * B * D * np.exp(1j * psi) * np.exp(-2j * math.pi * n * P / N)[None, :]


@dataclass(frozen=True)
class DecouplingResidual:
    median_relative: float  # median over elements of |A_hat - A| / |A|
    norm_relative: float  # ||A_hat - A|| / ||A||


def decoupling_residual(A_hat, A_model) -> DecouplingResidual:
    A_hat = np.asarray(A_hat)
    A_model = np.asarray(A_model)
    mask = np.abs(A_model) > 0
    rel = np.abs(A_hat - A_model)[mask] / np.abs(A_model)[mask]
    norm = float(np.linalg.norm(A_hat - A_model) / np.linalg.norm(A_model))
    return DecouplingResidual(float(np.median(rel)), norm)


def decoupling_trial(tx, sensing: SensingChannels, cfg: SystemConfig, n_symbols: int,
                     rng: np.random.Generator, *, doppler_hz: float = 0.0, psi: float = 0.0,
                     noise_power: float = 0.0, mf_length: int | None = None,
                     distribution: str = "cscg", include_interference: bool = True):
    """One draw of data: returns (A_hat, A_model) for every device."""
    K, N = np.asarray(tx).shape
    C = draw_data(rng, (n_symbols, K, N), distribution)
    u = simulate_echo(tx, C, sensing, cfg, doppler_hz=doppler_hz, psi=psi,
                      noise_power=noise_power, rng=rng, include_interference=include_interference)
    bank = MatchedFilterBank.from_data(C, mf_length)
    A_hat = matched_filter_and_dft(u, bank)
    A_model = decoupled_echo_model(tx, sensing, cfg, n_symbols, doppler_hz=doppler_hz,
                                   psi=psi, mf_length=mf_length)
    return A_hat, A_model


def write_uplink_traces(path, pairs, header_lines=()) -> None:
    """Per-trial (F, F_hat) rows: trial, subcarrier, F re/im, F_hat re/im."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["trial", "subcarrier", "f_re", "f_im", "f_hat_re", "f_hat_im"])
        for t, (F, F_hat) in enumerate(pairs):
            for n in range(F.size):
                w.writerow([t, n, repr(float(F[n].real)), repr(float(F[n].imag)),
                            repr(float(F_hat[n].real)), repr(float(F_hat[n].imag))])


def write_echo_snapshot(path, echo, header_lines=()) -> None:
    """Per-symbol echo samples: symbol, device, sample, re, im."""
    u = np.asarray(echo)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["symbol", "device", "sample", "re", "im"])
        for idx in np.ndindex(u.shape):
            v = u[idx]
            w.writerow([*idx, repr(float(v.real)), repr(float(v.imag))])

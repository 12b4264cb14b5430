"""System parameters, unit conversion, sensing budgets and RNG streams.

All powers inside the package are linear milliwatts. dBm only appears at the
config-file boundary (keys ending in ``_dbm``).
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 2.998e8


class ConfigError(ValueError):
    """Invalid or inconsistent system parameters."""


class InfeasibleBudgetError(ConfigError):
    """A device's sensing power floor exceeds the transmit power budget."""

    def __init__(self, device: int, floor: float, budget: float):
        self.device = device
        self.floor = floor
        self.budget = budget
        super().__init__(
            f"device {device}: sensing power floor rho'={floor:.6g} mW exceeds "
            f"P_t={budget:.6g} mW (reciprocal rho={1.0 / floor:.6g} 1/mW; "
            f"rho <= P_t would read {'true' if 1.0 / floor <= budget else 'false'})"
        )


def dbm_to_linear(x: float) -> float:
    """dBm to milliwatts."""
    if not math.isfinite(x):
        raise ValueError(f"power in dBm must be finite, got {x!r}")
    return 10.0 ** (x / 10.0)


def linear_to_dbm(x: float) -> float:
    if not (math.isfinite(x) and x > 0):
        raise ValueError(f"linear power must be positive and finite, got {x!r}")
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class SystemConfig:
    """Scalar parameters of the uplink ISCC system.

    Defaults follow the reference simulation setup: K=5 devices, N=64
    subcarriers, M=50 sensing symbols, T_o=8 us, 156.25 kHz spacing,
    P_t=10 dBm and -20 dBm AP noise. Parameters the setup leaves open
    (carrier, sensing noise, CP and channel memories, attenuation) carry
    documented defaults.
    """

    n_devices: int = 5
    n_subcarriers: int = 64
    n_symbols: int = 50
    cp_length: int = 16
    subcarrier_spacing: float = 156.25e3
    symbol_duration: float = 8e-6
    carrier_frequency: float = 10e9
    light_speed: float = SPEED_OF_LIGHT
    tx_power: float = 10.0
    ap_noise_power: float = 0.01
    sensing_noise_power: float = 0.01
    rng_seed: int = 0
    # per-device thresholds; a scalar is broadcast to every device
    eta: tuple[float, ...] = (1.0,)
    xi: tuple[float, ...] = (1.0,)
    attenuation: float = 1.0
    comm_memory: int = 4
    target_memory: int = 1
    interference_memory: int = 2
    direct_memory: int = 2
    interference_power: float = 0.0

    def __post_init__(self):
        for name in ("eta", "xi"):
            value = getattr(self, name)
            if np.isscalar(value):
                value = (float(value),)
            value = tuple(float(v) for v in value)
            if len(value) == 1:
                value = value * self.n_devices
            object.__setattr__(self, name, value)
        self.validate()

    def validate(self) -> None:
        if self.n_devices < 1:
            raise ConfigError("K must be >= 1")
        if self.n_subcarriers < 2:
            raise ConfigError("N must be >= 2 (N^2 - 1 > 0 in the delay bound)")
        if self.n_symbols < 2:
            raise ConfigError("M must be >= 2 (M^2 - 1 > 0 in the velocity bound)")
        if self.cp_length < 0:
            raise ConfigError("CP length must be nonnegative")
        positive = (
            "subcarrier_spacing",
            "symbol_duration",
            "carrier_frequency",
            "light_speed",
            "tx_power",
            "ap_noise_power",
            "sensing_noise_power",
            "attenuation",
        )
        for name in positive:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be positive and finite, got {value!r}")
        if len(self.eta) != self.n_devices or len(self.xi) != self.n_devices:
            raise ConfigError("eta and xi need one entry per device (or a scalar)")
        if min(self.eta) <= 0 or min(self.xi) <= 0:
            raise ConfigError("sensing thresholds must be positive")
        max_memory = max(
            self.comm_memory,
            self.target_memory,
            self.interference_memory,
            self.direct_memory,
        )
        if min(self.comm_memory, self.target_memory) < 1:
            raise ConfigError("channel memories must be >= 1")
        if max_memory > max(self.cp_length, 1) and max_memory > 1:
            raise ConfigError(
                f"CP length {self.cp_length} cannot absorb channel memory {max_memory}"
            )
        if self.interference_power < 0:
            raise ConfigError("interference power scale must be nonnegative")
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigError("rng_seed must fit in an unsigned 64-bit integer")

    def with_(self, **changes: Any) -> "SystemConfig":
        """Copy with fields replaced; thresholds are re-broadcast if K changes."""
        if "n_devices" in changes:
            for name in ("eta", "xi"):
                if name not in changes and len(set(getattr(self, name))) == 1:
                    changes[name] = (getattr(self, name)[0],)
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["eta"] = list(self.eta)
        out["xi"] = list(self.xi)
        return out


# config-file key -> (field name, converter)
_FILE_KEYS: dict[str, tuple[str, Any]] = {
    "K": ("n_devices", int),
    "N": ("n_subcarriers", int),
    "M": ("n_symbols", int),
    "N_c": ("cp_length", int),
    "delta_f_hz": ("subcarrier_spacing", float),
    "T_o_s": ("symbol_duration", float),
    "f_c_hz": ("carrier_frequency", float),
    "c_0_mps": ("light_speed", float),
    "P_t_dbm": ("tx_power", dbm_to_linear),
    "sigma_w2_dbm": ("ap_noise_power", dbm_to_linear),
    "sigma_z2_dbm": ("sensing_noise_power", dbm_to_linear),
    "P_t_mw": ("tx_power", float),
    "sigma_w2_mw": ("ap_noise_power", float),
    "sigma_z2_mw": ("sensing_noise_power", float),
    "eta": ("eta", None),
    "xi": ("xi", None),
    "seed": ("rng_seed", int),
    "alpha": ("attenuation", float),
    "L_dA": ("comm_memory", int),
    "L_trc": ("target_memory", int),
    "L_ic": ("interference_memory", int),
    "L_ddc": ("direct_memory", int),
    "interference_power": ("interference_power", float),
}


def config_from_mapping(data: Mapping[str, Any]) -> tuple[SystemConfig, dict[str, Any]]:
    """Build a config from file keys.

    Returns the config and the leftover keys (solver options etc.) that the
    caller may interpret. Unknown keys are passed through, not rejected.
    """
    kwargs: dict[str, Any] = {}
    rest: dict[str, Any] = {}
    for key, value in data.items():
        if key not in _FILE_KEYS:
            rest[key] = value
            continue
        name, conv = _FILE_KEYS[key]
        if name in kwargs:
            raise ConfigError(f"power/parameter {name} given twice (check unit suffixes)")
        if conv is None:
            value = tuple(float(v) for v in np.atleast_1d(value))
        else:
            value = conv(value)
        kwargs[name] = value
    return SystemConfig(**kwargs), rest


def load_config(path: str | Path) -> tuple[SystemConfig, dict[str, Any]]:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping of keys to values")
    return config_from_mapping(data)


@dataclass(frozen=True)
class SensingBudget:
    """Per-device CRLB thresholds and the power floors they imply."""

    eta: np.ndarray
    xi: np.ndarray
    power_floor: np.ndarray
    inverse_floor: np.ndarray = field(init=False)

    def __post_init__(self):
        for name in ("eta", "xi", "power_floor"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.power_floor <= 0):
            raise ConfigError("power floors must be positive")
        inv = 1.0 / self.power_floor
        inv.setflags(write=False)
        object.__setattr__(self, "inverse_floor", inv)

    @classmethod
    def from_floor(cls, floor: Sequence[float] | float, n_devices: int | None = None,
                   tx_power: float | None = None) -> "SensingBudget":
        """Budget given directly by power floors (thresholds unknown -> nan)."""
        floor = np.atleast_1d(np.asarray(floor, dtype=float))
        if n_devices is not None and floor.size == 1:
            floor = np.full(n_devices, floor[0])
        if tx_power is not None:
            _check_feasible(floor, tx_power)
        nan = np.full(floor.shape, np.nan)
        return cls(eta=nan, xi=nan, power_floor=floor)

    @property
    def n_devices(self) -> int:
        return self.power_floor.size

    def distance_floor(self, cfg: SystemConfig, alpha: float) -> np.ndarray:
        return _distance_constant(cfg, alpha) / self.eta

    def velocity_floor(self, cfg: SystemConfig, alpha: float) -> np.ndarray:
        return _velocity_constant(cfg, alpha) / self.xi


def _distance_constant(cfg: SystemConfig, alpha: float) -> float:
    N, M = cfg.n_subcarriers, cfg.n_symbols
    num = 3.0 * cfg.sensing_noise_power * cfg.light_speed**2
    den = 8.0 * math.pi**2 * cfg.subcarrier_spacing**2 * alpha**2 * M * N * (N**2 - 1)
    return num / den


def _velocity_constant(cfg: SystemConfig, alpha: float) -> float:
    N, M = cfg.n_subcarriers, cfg.n_symbols
    num = 3.0 * cfg.sensing_noise_power * cfg.light_speed**2
    den = (
        8.0 * math.pi**2 * cfg.symbol_duration**2 * cfg.carrier_frequency**2
        * alpha**2 * M * N * (M**2 - 1)
    )
    return num / den


def _check_feasible(floor: np.ndarray, tx_power: float) -> None:
    bad = np.flatnonzero(floor > tx_power)
    if bad.size:
        k = int(bad[0])
        logger.warning(
            "infeasible sensing budget for device %d: rho'=%g mW > P_t=%g mW "
            "(reciprocal rho=%g 1/mW)", k, floor[k], tx_power, 1.0 / floor[k],
        )
        raise InfeasibleBudgetError(k, float(floor[k]), tx_power)


def derive_sensing_budget(
    cfg: SystemConfig,
    eta: Sequence[float] | float | None = None,
    xi: Sequence[float] | float | None = None,
    alpha: float | None = None,
    check: bool = True,
) -> SensingBudget:
    """Map distance/velocity MSE thresholds to per-device power floors.

    A device whose total transmit power equals its floor meets the binding
    CRLB threshold with equality. With ``check`` the floor is required not to
    exceed ``cfg.tx_power``.
    """
    K = cfg.n_devices
    eta = np.broadcast_to(np.asarray(cfg.eta if eta is None else eta, float), (K,)).copy()
    xi = np.broadcast_to(np.asarray(cfg.xi if xi is None else xi, float), (K,)).copy()
    alpha = cfg.attenuation if alpha is None else float(alpha)
    if np.any(eta <= 0) or np.any(xi <= 0):
        raise ValueError("sensing thresholds must be positive")
    if not alpha > 0:
        raise ValueError("attenuation must be positive")
    eta_floor = _distance_constant(cfg, alpha) / eta
    xi_floor = _velocity_constant(cfg, alpha) / xi
    floor = np.maximum(eta_floor, xi_floor)
    if check:
        _check_feasible(floor, cfg.tx_power)
    return SensingBudget(eta=eta, xi=xi, power_floor=floor)


def rng_substream(seed: int, label: str) -> np.random.Generator:
    """Independent, reproducible generator keyed by ``(seed, label)``.

    The label is hashed with BLAKE2b so streams do not depend on Python's
    per-process string hashing or on draw order elsewhere.
    """
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=16).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(seed) >> 32, *words])
    return np.random.Generator(np.random.PCG64(seq))


def config_fields() -> list[str]:
    return [f.name for f in fields(SystemConfig)]

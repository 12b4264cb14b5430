import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iscc.config import (ConfigError, InfeasibleBudgetError, SensingBudget, SystemConfig,
                         config_from_mapping, dbm_to_linear, derive_sensing_budget,
                         linear_to_dbm, load_config, rng_substream)
from iscc.sensing import crlb_pair


class TestUnits:
    @pytest.mark.parametrize("dbm, mw", [(10.0, 10.0), (0.0, 1.0), (-20.0, 0.01)])
    def test_dbm_to_linear(self, dbm, mw):
        assert dbm_to_linear(dbm) == pytest.approx(mw, rel=1e-15)

    @pytest.mark.parametrize("bad", [math.inf, -math.inf, math.nan])
    def test_rejects_non_finite(self, bad):
        with pytest.raises(ValueError):
            dbm_to_linear(bad)

    @given(st.floats(min_value=-200, max_value=200))
    def test_round_trip(self, x):
        assert linear_to_dbm(dbm_to_linear(x)) == pytest.approx(x, rel=1e-12, abs=1e-12)


class TestSystemConfig:
    def test_defaults(self, cfg):
        assert (cfg.n_devices, cfg.n_subcarriers, cfg.n_symbols) == (5, 64, 50)
        assert cfg.tx_power == pytest.approx(10.0)
        assert cfg.ap_noise_power == pytest.approx(0.01)
        assert cfg.eta == (1.0,) * 5

    @pytest.mark.parametrize("field, value", [
        ("n_devices", 0), ("n_subcarriers", 1), ("n_symbols", 1), ("tx_power", 0.0),
        ("ap_noise_power", -1.0), ("subcarrier_spacing", 0.0), ("cp_length", -1),
        ("comm_memory", 32),
    ])
    def test_invalid(self, field, value):
        with pytest.raises(ConfigError):
            SystemConfig(**{field: value})

    def test_threshold_broadcast_follows_k(self, cfg):
        assert len(cfg.with_(n_devices=3).eta) == 3

    def test_file_keys(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("K: 3\nN: 16\nP_t_dbm: 20\nsigma_w2_dbm: -30\neta: [1, 2, 3]\n"
                     "seed: 7\neps_mse: 1.0e-7\n")
        cfg, rest = load_config(p)
        assert cfg.n_devices == 3 and cfg.n_subcarriers == 16
        assert cfg.tx_power == pytest.approx(100.0)
        assert cfg.ap_noise_power == pytest.approx(1e-3)
        assert cfg.eta == (1.0, 2.0, 3.0)
        assert cfg.rng_seed == 7
        assert rest == {"eps_mse": 1e-7}

    def test_duplicate_units_rejected(self):
        with pytest.raises(ConfigError):
            config_from_mapping({"P_t_dbm": 10, "P_t_mw": 10})


class TestSensingBudget:
    def test_distance_floor_value(self):
        # sigma_z^2 = 1, c0 = 3e8, alpha = 1, unit power -> 1.0688828e-2 m^2
        cfg = SystemConfig(sensing_noise_power=1.0, light_speed=3e8)
        d, _ = crlb_pair(cfg, 1.0)
        assert d == pytest.approx(1.06888281644664e-2, rel=1e-12)

    def test_binding_floor_is_max(self):
        cfg = SystemConfig(sensing_noise_power=1.0, light_speed=3e8)
        b = derive_sensing_budget(cfg, eta=1e-6, xi=1e3, check=False)
        eta_floor = b.distance_floor(cfg, 1.0)
        np.testing.assert_allclose(b.power_floor, eta_floor, rtol=1e-15)

    def test_doubling_eta_halves_eta_floor(self, cfg):
        a = derive_sensing_budget(cfg, eta=1e-3, xi=1e9)
        b = derive_sensing_budget(cfg, eta=2e-3, xi=1e9)
        np.testing.assert_allclose(b.power_floor, a.power_floor / 2, rtol=1e-15)

    def test_reciprocal(self, cfg):
        b = derive_sensing_budget(cfg)
        np.testing.assert_array_equal(b.inverse_floor, 1.0 / b.power_floor)

    def test_floor_meets_binding_threshold_with_equality(self, cfg):
        c2 = cfg.with_(n_devices=2)
        b = derive_sensing_budget(c2, eta=[1e-4, 1.0], xi=[1.0, 1e-4], check=False)
        d, v = crlb_pair(c2, b.power_floor)
        np.testing.assert_allclose(np.maximum(d / b.eta, v / b.xi), 1.0, rtol=1e-10)

    def test_infeasible_names_device(self, cfg):
        with pytest.raises(InfeasibleBudgetError, match="device 0"):
            derive_sensing_budget(cfg, eta=1e-9)

    @given(st.floats(1e-3, 1e3), st.floats(1.0, 10.0))
    def test_monotone_in_thresholds(self, eta, factor):
        cfg = SystemConfig()
        lo = derive_sensing_budget(cfg, eta=eta, xi=eta, check=False)
        hi = derive_sensing_budget(cfg, eta=eta * factor, xi=eta, check=False)
        assert np.all(hi.power_floor <= lo.power_floor)

    def test_from_floor(self):
        b = SensingBudget.from_floor(0.5, n_devices=3)
        assert b.n_devices == 3 and np.all(np.isnan(b.eta))
        with pytest.raises(InfeasibleBudgetError):
            SensingBudget.from_floor([1.0, 20.0], tx_power=10.0)

    def test_read_only(self, cfg):
        b = derive_sensing_budget(cfg)
        with pytest.raises(ValueError):
            b.power_floor[0] = 1.0


class TestRngSubstream:
    def test_same_label_same_stream(self):
        a = rng_substream(42, "channel/k=0").standard_normal(8)
        b = rng_substream(42, "channel/k=0").standard_normal(8)
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("other", [(42, "channel/k=1"), (43, "channel/k=0")])
    def test_separation(self, other):
        a = rng_substream(42, "channel/k=0").standard_normal(8)
        b = rng_substream(*other).standard_normal(8)
        assert not np.allclose(a, b)

    def test_full_u64_seed(self):
        rng_substream(2**64 - 1, "x").random()

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iscc.aircomp import DesignVariables, aligned_mse
from iscc.channel import CommChannel, SensingChannels, draw_comm_channel, draw_sensing_channels
from iscc.config import SystemConfig, derive_sensing_budget, rng_substream
from iscc.harness import loglog_slope
from iscc.optimizer import solve
from iscc.waveform import (CyclicPrefixError, MatchedFilterBank, OfdmFrame, decoupled_echo_model,
                           decoupling_residual, decoupling_trial, dft, doppler_average, draw_data,
                           empirical_aircomp_mse, idft, matched_filter_and_dft, simulate_echo,
                           simulate_uplink, write_echo_snapshot, write_uplink_traces)

SMALL = SystemConfig(n_devices=2, n_subcarriers=16, cp_length=4, eta=(1.0, 1.0), xi=(1.0, 1.0))


def _target(K, tau=0, alpha=1.0, L=2, interference=0.0, rng=None):
    z = np.zeros((K, K, L), dtype=complex)
    inter, direct = z.copy(), z.copy()
    if interference:
        inter = np.sqrt(interference / (2 * L)) * (rng.standard_normal(z.shape) + 1j * rng.standard_normal(z.shape))
        direct = np.sqrt(interference / (2 * L)) * (rng.standard_normal(z.shape) + 1j * rng.standard_normal(z.shape))
        for k in range(K):
            inter[k, k] = direct[k, k] = 0
    return SensingChannels(np.full((K, 1), alpha, dtype=complex), np.full((K, 1), tau), inter, direct,
                           np.full(K, tau), alpha)


class TestTransforms:
    @given(st.integers(1, 64), st.integers(0, 2**32 - 1))
    def test_round_trip(self, N, seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((3, N)) + 1j * rng.standard_normal((3, N))
        np.testing.assert_allclose(dft(idft(X)), X, atol=1e-12)

    def test_unitary(self, rng):
        x = rng.standard_normal(32) + 0j
        assert np.linalg.norm(dft(x)) == pytest.approx(np.linalg.norm(x))

    @pytest.mark.parametrize("dist", ["cscg", "unit_modulus", "uniform_disk"])
    def test_data_unit_power(self, dist, rng):
        C = draw_data(rng, 200_000, dist)
        assert np.mean(np.abs(C) ** 2) == pytest.approx(1.0, abs=0.01)
        assert abs(np.mean(C)) < 0.01

    def test_unknown_distribution(self, rng):
        with pytest.raises(ValueError):
            draw_data(rng, 3, "qpsk")

    def test_frame_prefix(self, rng):
        f = OfdmFrame.build(np.ones((1, 8)), draw_data(rng, (1, 8)), 3)
        np.testing.assert_array_equal(f.cp_extended[..., :3], f.time_samples[..., -3:])
        with pytest.raises(ValueError):
            OfdmFrame.build(np.ones((1, 8)), np.ones((1, 8)), 9)


class TestUplink:
    def test_flat_identity(self, rng):
        comm = CommChannel.from_taps([[1.0]], 16)
        C = draw_data(rng, (1, 16))
        f = OfdmFrame.build(np.ones((1, 16)), C, 4)
        np.testing.assert_allclose(simulate_uplink(f, comm, 0.0), f.freq_symbols[0], atol=1e-12)

    def test_two_tap_matches_response(self, rng):
        comm = CommChannel.from_taps([[0.8 + 0.1j, -0.3j]], 16)
        C = draw_data(rng, (1, 16))
        f = OfdmFrame.build(np.ones((1, 16)), C, 4)
        Y = simulate_uplink(f, comm, 0.0)
        np.testing.assert_allclose(Y / f.freq_symbols[0], comm.response[0], atol=1e-10)

    def test_superposition(self, rng):
        comm = draw_comm_channel(SMALL, rng_substream(0, "u"))
        C = draw_data(rng, (2, 16))
        B = rng.standard_normal((2, 16)) + 0j
        Y = simulate_uplink(OfdmFrame.build(B, C, 4), comm, 0.0)
        np.testing.assert_allclose(Y, np.sum(comm.response * B * C, axis=0), atol=1e-12)

    def test_noise_variance(self, rng):
        comm = CommChannel.from_taps([[1.0]], 8)
        f = OfdmFrame.build(np.ones((1, 8)), draw_data(rng, (10_000, 1, 8)), 2)
        resid = simulate_uplink(f, comm, 0.3, rng) - f.freq_symbols[:, 0]
        v = np.abs(resid) ** 2
        assert abs(v.mean() - 0.3) < 3 * v.std() / math.sqrt(v.size)

    def test_cp_underrun(self, rng):
        comm = CommChannel.from_taps(np.ones((1, 6)), 16)
        with pytest.raises(CyclicPrefixError):
            simulate_uplink(OfdmFrame.build(np.ones((1, 16)), np.ones((1, 16)), 4), comm, 0.0)

    def test_noise_needs_rng(self):
        comm = CommChannel.from_taps([[1.0]], 8)
        with pytest.raises(ValueError):
            simulate_uplink(OfdmFrame.build(np.ones((1, 8)), np.ones((1, 8)), 2), comm, 0.1)


class TestEmpiricalMse:
    def test_zero_forcing_noiseless(self, rng):
        cfg = SMALL.with_(n_devices=1, eta=(1.0,), xi=(1.0,))
        comm = draw_comm_channel(cfg, rng_substream(1, "zf"))
        design = DesignVariables.aligned(1 / np.abs(comm.response), comm.response, np.ones(16))
        res = empirical_aircomp_mse(design, comm, cfg, 1000, rng, noise_power=0.0)
        assert res.mean < 1e-28

    def test_matches_analytic(self):
        cfg = SMALL
        comm = draw_comm_channel(cfg, rng_substream(2, "mc"))
        sol = solve(comm, cfg, derive_sensing_budget(cfg))
        design = DesignVariables.aligned(sol.amplitudes, comm.response, sol.aggregation)
        res = empirical_aircomp_mse(design, comm, cfg, 4000, rng_substream(2, "trials"))
        assert abs(res.mean - sol.mse) < 3 * res.stderr
        assert res.n_trials == 4000 and res.per_trial.shape == (4000,)

    @pytest.mark.parametrize("dist", ["unit_modulus", "uniform_disk"])
    def test_distribution_free(self, dist):
        cfg = SMALL
        comm = draw_comm_channel(cfg, rng_substream(2, "mc"))
        W = np.full(16, 0.5 + 0.2j)
        design = DesignVariables.aligned(np.full((2, 16), 0.7), comm.response, W)
        analytic = aligned_mse(design.amplitudes, W, comm.response, cfg.ap_noise_power).mse
        res = empirical_aircomp_mse(design, comm, cfg, 4000, rng_substream(3, dist), distribution=dist)
        assert abs(res.mean - analytic) < 3 * res.stderr

    def test_noise_component_linear(self):
        cfg = SMALL.with_(n_devices=1, eta=(1.0,), xi=(1.0,))
        comm = draw_comm_channel(cfg, rng_substream(1, "zf"))
        design = DesignVariables.aligned(1 / np.abs(comm.response), comm.response, np.ones(16))
        r1 = empirical_aircomp_mse(design, comm, cfg, 4000, rng_substream(4, "a"), noise_power=0.1)
        r2 = empirical_aircomp_mse(design, comm, cfg, 4000, rng_substream(4, "b"), noise_power=0.2)
        assert abs(r2.mean - 2 * r1.mean) < 3 * math.hypot(r2.stderr, 2 * r1.stderr)
        assert r1.mean == pytest.approx(0.1, rel=0.05)

    def test_keep_pairs_and_export(self, tmp_path):
        comm = draw_comm_channel(SMALL, rng_substream(2, "mc"))
        design = DesignVariables.aligned(np.ones((2, 16)), comm.response, np.ones(16))
        res, pairs = empirical_aircomp_mse(design, comm, SMALL, 50, rng_substream(0, "k"), keep=5)
        assert len(pairs) == 5
        write_uplink_traces(tmp_path / "u.csv", pairs, ["seed=0"])
        assert len((tmp_path / "u.csv").read_text().splitlines()) == 2 + 5 * 16


class TestEcho:
    def test_transparent_target(self, rng):
        C = draw_data(rng, (3, 2, 16))
        B = rng.standard_normal((2, 16)) + 0j
        u = simulate_echo(B, C, _target(2), SMALL, noise_power=0.0)
        np.testing.assert_allclose(u, idft(B * C), atol=1e-12)

    def test_doppler_phase_progression(self, rng):
        fd = SMALL.subcarrier_spacing / 100
        C = np.broadcast_to(draw_data(rng, (1, 1, 16)), (5, 1, 16))
        cfg = SMALL.with_(n_devices=1, eta=(1.0,), xi=(1.0,))
        u = simulate_echo(np.ones((1, 16)), C, _target(1), cfg, doppler_hz=fd, noise_power=0.0)
        step = np.angle(np.sum(np.conj(u[:-1]) * u[1:]))
        assert step == pytest.approx(2 * math.pi * cfg.symbol_duration * fd, abs=1e-12)

    def test_interference_power(self, rng):
        s = _target(3, alpha=0.0, interference=0.5, rng=rng)
        cfg = SMALL.with_(n_devices=3, eta=(1.0,) * 3, xi=(1.0,) * 3)
        B = np.full((3, 16), 0.8 + 0j)
        u = simulate_echo(B, draw_data(rng, (4000, 3, 16)), s, cfg, noise_power=0.0)
        # both leak paths from device i share lags 0..L-1, so they add per tap
        expected = np.sum(np.abs(s.interference_taps + s.direct_taps) ** 2, axis=(1, 2)) * 0.64
        np.testing.assert_allclose(np.mean(np.abs(u) ** 2, axis=(0, 2)), expected, rtol=0.05)

    def test_snapshot_export(self, rng, tmp_path):
        u = simulate_echo(np.ones((2, 16)), draw_data(rng, (2, 2, 16)), _target(2), SMALL, noise_power=0.0)
        write_echo_snapshot(tmp_path / "e.csv", u)
        assert len((tmp_path / "e.csv").read_text().splitlines()) == 1 + u.size


class TestMatchedFilter:
    def test_filter_definition(self, rng):
        C = draw_data(rng, (1, 8))
        bank = MatchedFilterBank.from_data(C, 5)
        c = idft(C)[0]
        np.testing.assert_allclose(bank.filters[0], [np.conj(c[(5 - s) % 8]) for s in range(5)])

    def test_energy_concentrates(self):
        N = 64
        e = [np.sum(np.abs(MatchedFilterBank.from_data(draw_data(rng_substream(0, f"c{i}"), N)).sequences) ** 2)
             for i in range(400)]
        assert np.mean(e) == pytest.approx(N, rel=0.02)
        assert np.std(e) / N < 0.2

    @pytest.mark.parametrize("P", [0, 17])
    def test_length_range(self, P, rng):
        with pytest.raises(ValueError):
            MatchedFilterBank.from_data(draw_data(rng, 16), P)

    def test_magnitude_recovers_amplitudes(self):
        cfg = SystemConfig(n_devices=2, eta=(1.0, 1.0), xi=(1.0, 1.0))
        s = draw_sensing_channels(cfg, rng_substream(0, "t"), attenuation=0.5, interference_power=0.0)
        B = np.full((2, 64), 0.4 + 0j)
        A_hat, _ = decoupling_trial(B, s, cfg, 200, rng_substream(0, "d"), include_interference=False)
        assert np.median(np.abs(np.abs(A_hat) - 0.5 * 0.4) / (0.5 * 0.4)) < 0.05

    def test_phase_slope(self):
        cfg = SystemConfig(n_devices=1, eta=(1.0,), xi=(1.0,))
        tau = 5
        s = draw_sensing_channels(cfg, rng_substream(0, "t"), roundtrip_delay=tau)
        for P in (64, 48):
            A_hat, _ = decoupling_trial(np.ones((1, 64)), s, cfg, 200, rng_substream(1, "p"), mf_length=P)
            slope = np.angle(np.sum(A_hat[0, 1:] * np.conj(A_hat[0, :-1])))
            target = np.angle(np.exp(-2j * np.pi * (tau + P) / 64))
            assert abs(np.angle(np.exp(1j * (slope - target)))) < 0.01

    def test_cross_device_leakage_decays(self):
        cfg = SystemConfig(n_devices=2, eta=(1.0, 1.0), xi=(1.0, 1.0))
        s = draw_sensing_channels(cfg, rng_substream(0, "x"), interference_power=0.0)
        Ms = np.array([10, 40, 160])
        power = []
        for M in Ms:
            acc = []
            for d in range(30):
                rng = rng_substream(d, f"leak{M}")
                C = draw_data(rng, (M, 2, 64))
                u = simulate_echo(np.ones((2, 64)), C, s, cfg, noise_power=0.0, include_interference=False)
                wrong = MatchedFilterBank.from_data(C[:, ::-1])  # device 0 echo, device 1 filter
                acc.append(np.mean(np.abs(matched_filter_and_dft(u, wrong)[0]) ** 2))
            power.append(np.mean(acc))
        assert loglog_slope(Ms, power) == pytest.approx(-1.0, abs=0.15)


class TestDecoupledModel:
    def test_doppler_average(self):
        assert doppler_average(0.0, 10, 8e-6) == 1.0
        # average of a full turn vanishes
        assert abs(doppler_average(1 / (10 * 8e-6), 10, 8e-6)) < 1e-12

    def test_residual_zero_for_identical(self):
        A = np.arange(1, 7).reshape(2, 3) + 0j
        r = decoupling_residual(A, A)
        assert r.median_relative == 0 and r.norm_relative == 0

    def test_model_magnitude(self):
        cfg = SystemConfig(n_devices=2, eta=(1.0, 1.0), xi=(1.0, 1.0))
        s = draw_sensing_channels(cfg, rng_substream(0, "m"), attenuation=0.3)
        A = decoupled_echo_model(np.full((2, 64), 2.0), s, cfg, 50)
        np.testing.assert_allclose(np.abs(A), 0.6)

    def test_residual_shrinks_with_symbols(self):
        cfg = SystemConfig(n_devices=2, eta=(1.0, 1.0), xi=(1.0, 1.0))
        s = draw_sensing_channels(cfg, rng_substream(0, "m"))
        res = [decoupling_residual(*decoupling_trial(np.ones((2, 64)), s, cfg, M, rng_substream(M, "r"),
                                                     include_interference=False)).norm_relative
               for M in (10, 100, 1000)]
        assert res[0] > res[1] > res[2]

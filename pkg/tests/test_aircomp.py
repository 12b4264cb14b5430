import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from iscc.aircomp import (DeadSubcarrierError, DesignVariables, align_phase, aligned_aggregation,
                          aligned_mse, mse_objective, optimal_aggregation,
                          per_subcarrier_objective)


def _complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


class TestAlignment:
    def test_product_real_nonnegative(self, rng):
        H, W = _complex(rng, (4, 8)), _complex(rng, 8)
        b = rng.uniform(0, 1, (4, 8))
        prod = W[None, :] * H * align_phase(b, H, W)
        np.testing.assert_allclose(prod.imag, 0, atol=1e-14)
        np.testing.assert_allclose(prod.real, b * np.abs(W[None, :] * H), rtol=1e-13)

    def test_unit_modulus(self, rng):
        H, W = _complex(rng, (3, 5)), _complex(rng, 5)
        B = align_phase(np.ones((3, 5)), H, W)
        np.testing.assert_allclose(np.abs(B), 1.0, rtol=1e-14)

    def test_dead_subcarrier(self):
        H = np.array([[1.0, 0.0]], dtype=complex)
        with pytest.raises(DeadSubcarrierError):
            align_phase(np.array([[1.0, 0.5]]), H, np.ones(2))

    def test_dead_subcarrier_zero_amplitude_ok(self):
        H = np.array([[1.0, 0.0]], dtype=complex)
        B = align_phase(np.array([[1.0, 0.0]]), H, np.ones(2))
        assert B[0, 1] == 0

    def test_aligned_mse_equals_complex_mse(self, rng):
        H, W = _complex(rng, (4, 8)), _complex(rng, 8)
        b = rng.uniform(0, 1, (4, 8))
        B = align_phase(b, H, W)
        full = mse_objective(B, W, H, 0.3)
        fast = aligned_mse(b, W, H, 0.3)
        assert fast.mse_bar == pytest.approx(full.mse_bar, rel=1e-12)

    def test_alignment_never_hurts(self, rng):
        H, W = _complex(rng, (4, 8)), _complex(rng, 8)
        b = rng.uniform(0, 1, (4, 8))
        random_phase = b * np.exp(2j * np.pi * rng.uniform(size=b.shape))
        assert aligned_mse(b, W, H, 0.1).mse_bar <= mse_objective(random_phase, W, H, 0.1).mse_bar


class TestObjective:
    def test_hand_example(self):
        # K=2, N=1: |1*1*1 - 1|^2 + |1*2*1 - 1|^2 + 1 * 0.5
        m = mse_objective(np.ones((2, 1)), np.ones(1), np.array([[1.0], [2.0]]), 0.5)
        assert (m.misalignment, m.noise, m.mse_bar) == (1.0, 0.5, 1.5)
        assert m.mse == pytest.approx(1.5 / 4)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_objective(np.ones((2, 3)), np.ones(2), np.ones((2, 3)), 1.0)

    def test_breakdown_row(self):
        m = aligned_mse(np.ones((1, 2)), np.ones(2), np.ones((1, 2)), 0.25)
        assert m.as_row() == {"misalignment": 0.0, "noise": 0.5, "mse_bar": 0.5, "mse": 0.25}

    def test_design_variables(self, rng):
        H, W = _complex(rng, (2, 4)), _complex(rng, 4)
        d = DesignVariables.aligned(np.full((2, 4), 0.5), H, W)
        np.testing.assert_allclose(d.powers(), [1.0, 1.0])
        np.testing.assert_allclose(np.abs(d.complex_tx), 0.5)


class TestOptimalAggregation:
    def test_scalar_closed_form(self):
        # K=N=1, b=sqrt(P), h=1: w = b / (b^2 + s2) and MSE-bar = 1 / (1 + P / s2)
        P, s2 = 4.0, 0.5
        b = np.array([[np.sqrt(P)]])
        w = optimal_aggregation(b, np.ones((1, 1)), s2)
        assert w[0] == pytest.approx(np.sqrt(P) / (P + s2))
        assert aligned_mse(b, w, np.ones((1, 1)), s2).mse_bar == pytest.approx(1 / (1 + P / s2))

    def test_complex_b(self, rng):
        H, B = _complex(rng, (3, 6)), _complex(rng, (3, 6))
        w = optimal_aggregation(B, H, 0.2)
        HB = H * B
        np.testing.assert_allclose(w, HB.conj().sum(0) / ((np.abs(HB) ** 2).sum(0) + 0.2))

    def test_aligned_variant_matches(self, rng):
        H = _complex(rng, (3, 6))
        b = rng.uniform(0.1, 1, (3, 6))
        w = aligned_aggregation(b, H, 0.2)
        B = align_phase(b, H, np.ones(6))
        np.testing.assert_allclose(optimal_aggregation(B, H, 0.2), w, rtol=1e-13)

    @given(st.integers(1, 5), st.integers(1, 6), st.floats(1e-3, 10.0), st.integers(0, 2**32 - 1))
    def test_no_perturbation_improves(self, K, N, s2, seed):
        rng = np.random.default_rng(seed)
        H, B = _complex(rng, (K, N)), _complex(rng, (K, N))
        w = optimal_aggregation(B, H, s2)
        base = per_subcarrier_objective(w, H * B, s2)
        for step in (1e-6, 1e-3, 1e-1):
            d = step * _complex(rng, N)
            assert np.all(per_subcarrier_objective(w + d, H * B, s2) - base >= -1e-12)

    @given(arrays(float, (2, 3), elements=st.floats(0.0, 3.0)))
    def test_objective_nonnegative(self, b):
        H = np.ones((2, 3), dtype=complex)
        w = optimal_aggregation(b.astype(complex), H, 0.1)
        assert aligned_mse(b, w, H, 0.1).mse_bar >= 0

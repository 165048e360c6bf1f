import numpy as np
import pytest

from dmim3d.constellation import SubblockBits, SystemConfig, encode_subblock
from dmim3d.phy import ZF_FLOOR, draw_channel, draw_noise, features, snr_to_n0, transmit, zf_equalize


def test_snr_to_n0():
    assert snr_to_n0(0.0) == 1.0
    assert abs(snr_to_n0(10.0) - 0.1) < 1e-15
    assert abs(snr_to_n0(30.0) - 0.001) < 1e-15


class TestDrawChannel:
    def test_deterministic(self):
        h1 = draw_channel(np.random.default_rng(3), 8)
        h2 = draw_channel(np.random.default_rng(3), 8)
        assert np.array_equal(h1, h2)

    def test_mean_power_near_one(self):
        h = draw_channel(np.random.default_rng(0), 5, count=10_000)  # 150k entries
        power = np.mean(np.abs(h) ** 2)
        assert 0.99 < power < 1.01

    def test_component_variances(self):
        h = draw_channel(np.random.default_rng(1), 10, count=4000)  # 120k entries
        assert 0.49 < h.real.var() < 0.51
        assert 0.49 < h.imag.var() < 0.51


class TestTransmit:
    def test_identity_channel_no_noise(self):
        x = np.arange(12, dtype=float).reshape(3, 4)
        y = transmit(x, np.ones((3, 4)), 0.0, np.random.default_rng(0))
        assert np.array_equal(y, x)

    def test_zero_signal_gives_noise(self):
        rng = np.random.default_rng(4)
        y = transmit(np.zeros((3, 4)), np.ones((3, 4)), 0.5, rng)
        expected = draw_noise(np.random.default_rng(4), 4, 0.5)
        assert np.array_equal(y, expected)

    def test_reproducible(self):
        x = np.ones((3, 4))
        h = draw_channel(np.random.default_rng(1), 4)
        y1 = transmit(x, h, 0.3, np.random.default_rng(9))
        y2 = transmit(x, h, 0.3, np.random.default_rng(9))
        assert np.array_equal(y1, y2)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            transmit(np.zeros((3, 4)), np.zeros((3, 5)), 0.1, np.random.default_rng(0))

    def test_noise_calibration(self):
        # Per-entry noise power at N0 = 0.1 over ~1e5 entries.
        rng = np.random.default_rng(11)
        y = transmit(np.zeros((34_000, 3, 1)), np.ones((34_000, 3, 1)), 0.1, rng)
        measured = np.mean(np.abs(y) ** 2)
        assert 0.098 < measured < 0.102


class TestZfEqualize:
    def test_inverts_noiseless_transmission(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 6))
        h = draw_channel(rng, 6)
        ybar = zf_equalize(transmit(x, h, 0.0, rng), h)
        assert np.max(np.abs(ybar - x)) / np.max(np.abs(x)) < 1e-10

    def test_identity_channel(self):
        y = np.arange(12).reshape(3, 4) + 1j
        assert np.array_equal(zf_equalize(y, np.ones((3, 4))), y)

    def test_hand_value(self):
        y = np.full((3, 1), 2.0 + 0.0j)
        h = np.full((3, 1), 1.0 + 1.0j)
        assert np.allclose(zf_equalize(y, h), 1.0 - 1.0j, atol=1e-15)

    def test_floor_prevents_infinities(self):
        y = np.ones((3, 2), dtype=complex)
        h = np.array([[0.0, 1e-30], [1.0, 1.0], [1.0, 1.0]], dtype=complex)
        with np.errstate(all="raise"):
            ybar = zf_equalize(y, h)
        assert np.all(np.isfinite(ybar))
        assert abs(ybar[0, 0]) <= 1.0 / ZF_FLOOR + 1e-6

    def test_floor_preserves_phase(self):
        h = np.full((3, 1), 1e-12 * np.exp(1j * 0.7))
        ybar = zf_equalize(np.ones((3, 1), dtype=complex), h)
        expected = 1.0 / (ZF_FLOOR * np.exp(1j * 0.7))
        assert np.allclose(ybar, expected, rtol=1e-9)


class TestFeatures:
    def test_layout_identity_channel(self):
        cfg = SystemConfig(4, 2, 2, 2)
        x = encode_subblock(SubblockBits((0, 1), (1, 0, 1, 0)), cfg)
        feats = features(x.astype(complex), np.ones((3, 4)))
        assert feats.shape == (4, 9)
        assert np.allclose(feats[:, 0:3], x.T, atol=1e-15)
        assert np.allclose(feats[:, 3:6], 0.0, atol=1e-15)
        assert np.allclose(feats[:, 6:9], (x.T) ** 2, atol=1e-15)

    def test_zero_input(self):
        feats = features(np.zeros((3, 4), dtype=complex), np.ones((3, 4)))
        assert np.array_equal(feats, np.zeros((4, 9)))

    def test_energy_from_raw_signal(self):
        # Energy columns must come from y itself, not the equalized signal.
        rng = np.random.default_rng(8)
        y = draw_channel(rng, 4)
        h = draw_channel(rng, 4)
        feats = features(y, h)
        assert np.allclose(feats[:, 6:9], (np.abs(y) ** 2).T, atol=1e-15)

    def test_pure_function(self):
        rng = np.random.default_rng(2)
        y = draw_channel(rng, 4)
        h = draw_channel(rng, 4)
        assert np.array_equal(features(y, h), features(y, h))

    def test_batched_matches_single(self):
        rng = np.random.default_rng(3)
        y = draw_channel(rng, 4, count=5)
        h = draw_channel(rng, 4, count=5)
        batched = features(y, h)
        assert batched.shape == (5, 4, 9)
        for i in range(5):
            assert np.array_equal(batched[i], features(y[i], h[i]))

import numpy as np
import pytest

from dmim3d.constellation import (
    ConfigError,
    SystemConfig,
    decode_subblock,
    default_constellations,
    default_lookup,
)
from dmim3d.detectors import enumerate_candidates, llr_detect, llr_metric, ml_detect
from dmim3d.phy import draw_channel, draw_noise, snr_to_n0

S1 = SystemConfig(4, 2, 2, 2)
S2 = SystemConfig(4, 2, 4, 4)


def _noisy_block(rng, cand, n0):
    i = rng.integers(0, len(cand.bits))
    h = draw_channel(rng, cand.config.n)
    y = h * cand.blocks[i] + draw_noise(rng, cand.config.n, n0)
    return i, h, y


class TestEnumerate:
    def test_counts(self):
        assert len(enumerate_candidates(S1).bits) == 64
        assert len(enumerate_candidates(S2).bits) == 1024

    def test_blocks_distinct(self):
        cand = enumerate_candidates(S2)
        assert len({c.tobytes() for c in cand.blocks}) == 1024

    def test_candidates_decode_back(self):
        cand = enumerate_candidates(S1)
        for sb, block in zip(cand.bits, cand.blocks):
            assert decode_subblock(block, S1) == sb

    def test_bit_rows_match(self):
        cand = enumerate_candidates(S1)
        for sb, row in zip(cand.bits, cand.bit_rows):
            assert tuple(row) == sb.bits

    def test_bit_lexicographic_order(self):
        cand = enumerate_candidates(S1)
        rows = ["".join(map(str, sb.bits)) for sb in cand.bits]
        assert rows == sorted(rows)

    def test_guard_against_runaway(self):
        with pytest.raises(ConfigError):
            enumerate_candidates(SystemConfig(16, 8, 4, 4))  # p = 45


class TestMlDetect:
    def test_noiseless_recovery_exhaustive(self):
        cand = enumerate_candidates(S1)
        h = draw_channel(np.random.default_rng(0), 4)
        for sb, block in zip(cand.bits, cand.blocks):
            assert ml_detect(h * block, h, S1, cand) == sb

    def test_agrees_with_independent_metric(self):
        # Second metric written from scratch: plain loops over entries.
        def oracle_metric(y, h, x):
            total = 0.0
            for i in range(y.shape[0]):
                for a in range(y.shape[1]):
                    diff = y[i, a] - h[i, a] * x[i, a]
                    total += diff.real**2 + diff.imag**2
            return total

        cand = enumerate_candidates(S1)
        rng = np.random.default_rng(1)
        for _ in range(300):
            _, h, y = _noisy_block(rng, cand, snr_to_n0(10.0))
            answer = ml_detect(y, h, S1, cand)
            metrics = [oracle_metric(y, h, x) for x in cand.blocks]
            best = int(np.argmin(metrics))
            assert answer == cand.bits[best]

    def test_tie_breaks_to_first_candidate(self):
        # A zero channel makes every candidate metric identical.
        cand = enumerate_candidates(S1)
        y = np.ones((3, 4), dtype=complex)
        h = np.zeros((3, 4), dtype=complex)
        assert ml_detect(y, h, S1, cand) == cand.bits[0]

    def test_scaling_invariance(self):
        cand = enumerate_candidates(S1)
        rng = np.random.default_rng(2)
        for _ in range(50):
            _, h, y = _noisy_block(rng, cand, snr_to_n0(5.0))
            base = ml_detect(y, h, S1, cand)
            assert ml_detect(7.3 * y, 7.3 * h, S1, cand) == base


class TestLlrMetric:
    def test_mode_a_gives_positive(self):
        consts = default_constellations(2)
        rng = np.random.default_rng(3)
        h = draw_channel(rng, 4)
        x = np.tile(consts[0].points[0][:, None], (1, 4))
        y = h * x + draw_noise(rng, 4, 1e-8)
        assert (llr_metric(y, h, 1e-4, consts) > 0).all()

    def test_mode_b_gives_negative(self):
        consts = default_constellations(2)
        rng = np.random.default_rng(4)
        h = draw_channel(rng, 4)
        x = np.tile(consts[1].points[0][:, None], (1, 4))
        y = h * x + draw_noise(rng, 4, 1e-8)
        assert (llr_metric(y, h, 1e-4, consts) < 0).all()

    def test_matches_probability_domain_oracle(self):
        # Direct exponentials at moderate magnitudes where they cannot overflow.
        consts = default_constellations(2)
        rng = np.random.default_rng(5)
        h = draw_channel(rng, 4)
        y = draw_channel(rng, 4)
        n0 = 1.0
        delta = llr_metric(y, h, n0, consts)
        for alpha in range(4):
            num = sum(
                np.exp(-np.sum(np.abs(y[:, alpha] - h[:, alpha] * p) ** 2) / n0)
                for p in consts[0].points
            )
            den = sum(
                np.exp(-np.sum(np.abs(y[:, alpha] - h[:, alpha] * p) ** 2) / n0)
                for p in consts[1].points
            )
            assert abs(delta[alpha] - np.log(num / den)) < 1e-9

    def test_finite_at_tiny_noise(self):
        consts = default_constellations(4)
        rng = np.random.default_rng(6)
        h = draw_channel(rng, 4)
        y = draw_channel(rng, 4)
        assert np.all(np.isfinite(llr_metric(y, h, 1e-12, consts)))

    def test_rejects_nonpositive_noise(self):
        consts = default_constellations(2)
        with pytest.raises(ValueError):
            llr_metric(np.zeros((3, 4)), np.ones((3, 4)), 0.0, consts)


class TestLlrDetect:
    def test_noiseless_limit_recovery_exhaustive(self):
        cand = enumerate_candidates(S1)
        h = draw_channel(np.random.default_rng(7), 4)
        for sb, block in zip(cand.bits, cand.blocks):
            assert llr_detect(h * block, h, 1e-6, S1, None, None) == sb

    def test_pattern_always_legal(self):
        lookup = default_lookup(4, 2)
        cand = enumerate_candidates(S2)
        rng = np.random.default_rng(8)
        for _ in range(200):
            _, h, y = _noisy_block(rng, cand, snr_to_n0(0.0))
            detected = llr_detect(y, h, 1.0, S2)
            from dmim3d.constellation import bits_to_pattern

            assert bits_to_pattern(detected.index_bits, lookup) in lookup.patterns

    def test_mostly_agrees_with_ml_at_high_snr(self):
        cand = enumerate_candidates(S1)
        rng = np.random.default_rng(9)
        n0 = snr_to_n0(30.0)
        agree = 0
        trials = 1000
        for _ in range(trials):
            _, h, y = _noisy_block(rng, cand, n0)
            agree += ml_detect(y, h, S1, cand) == llr_detect(y, h, n0, S1)
        assert agree / trials >= 0.99

    def test_custom_geometry_roundtrip(self):
        # Swap the default geometries; still disjoint, so detection must adapt.
        from dmim3d.constellation import Constellation3D

        base_a, base_b = default_constellations(2)
        swapped = (
            Constellation3D("A", base_b.points),
            Constellation3D("B", base_a.points),
        )
        cand = enumerate_candidates(S1, constellations=swapped)
        h = draw_channel(np.random.default_rng(10), 4)
        for sb, block in zip(cand.bits[:8], cand.blocks[:8]):
            assert llr_detect(h * block, h, 1e-6, S1, constellations=swapped) == sb

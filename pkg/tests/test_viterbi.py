"""Sequence detection baselines: metrics, exact ML, beam search."""

import itertools

import numpy as np
import pytest

from mmwlink import viterbi
from mmwlink.channel import ChannelRealization
from mmwlink.errors import CapacityError, ConfigurationError
from mmwlink.modem import RxBlock, constellation, modulate, transmit


def make_channel(taps_2d):
    taps = np.asarray(taps_2d, dtype=complex)
    return ChannelRealization(taps=taps, symbol_period=1.0,
                              num_antennas=taps.shape[1], memory=taps.shape[0])


def random_channel(rng, t_mem, nr, normalize=True):
    taps = rng.standard_normal((t_mem, nr)) + 1j * rng.standard_normal((t_mem, nr))
    if normalize:
        taps /= np.sqrt(np.mean(np.sum(np.abs(taps) ** 2, axis=0)))
    return make_channel(taps)


def noisy_instance(rng, t_mem, nr, length, modulation, snr_db):
    channel = random_channel(rng, t_mem, nr)
    m = len(constellation(modulation))
    indices = rng.integers(0, m, size=length)
    block = modulate(indices, modulation)
    sigma2 = 10 ** (-snr_db / 10.0)
    rx = transmit(block, channel, sigma2, rng)
    return channel, indices, rx, sigma2


def exact_ml_reference(rx, channel, length, modulation):
    """Second, independently coded enumerator (itertools + loops)."""
    pts = constellation(modulation)
    t_mem = channel.memory
    n_cols = rx.samples.shape[1]
    best = None
    best_metric = np.inf
    for seq in itertools.product(range(len(pts)), repeat=length):
        metric = 0.0
        for i in range(n_cols):
            pred = np.zeros(channel.num_antennas, dtype=complex)
            for l in range(t_mem):
                if 0 <= i - l < length:
                    pred += channel.taps[l] * pts[seq[i - l]]
            diff = rx.samples[:, i] - pred
            metric += float(np.sum(np.abs(diff) ** 2))
        if metric < best_metric:
            best_metric = metric
            best = seq
    return np.array(best), best_metric


class TestBranchMetric:
    def test_noiseless_match_is_zero(self):
        rng = np.random.default_rng(0)
        channel = random_channel(rng, 3, 2)
        block = modulate([0, 1, 0, 0], "bpsk")
        rx = transmit(block, channel, 0.0, rng)
        csi = viterbi.CsiView(channel, 0.0)
        # column 2 sees symbols x[2], x[1], x[0]
        recent = np.array([block.points[2], block.points[1], block.points[0]])
        assert viterbi.branch_metric(rx.samples[:, 2], recent, csi) == \
            pytest.approx(0.0, abs=1e-24)

    def test_hand_arithmetic(self):
        channel = make_channel([[1.0]])
        csi = viterbi.CsiView(channel, 1.0)
        y = np.array([0.0 + 0.0j])
        assert viterbi.branch_metric(y, np.array([1.0 + 0j]), csi) == \
            pytest.approx(1.0)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            t_mem, nr = int(rng.integers(1, 5)), int(rng.integers(1, 4))
            channel = random_channel(rng, t_mem, nr, normalize=False)
            y = rng.standard_normal(nr) + 1j * rng.standard_normal(nr)
            recent = rng.standard_normal(t_mem) + 1j * rng.standard_normal(t_mem)
            got = viterbi.branch_metric(y, recent, viterbi.CsiView(channel, 1.0))
            pred = sum(channel.taps[l] * recent[l] for l in range(t_mem))
            want = float(np.sum(np.abs(y - pred) ** 2))
            assert got == pytest.approx(want, rel=1e-12)


class TestExactMl:
    def test_noiseless_recovery(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            channel, indices, rx, _ = noisy_instance(rng, 3, 2, 7, "bpsk", 300)
            csi = viterbi.CsiView(channel, 0.0)
            out = viterbi.exact_ml_detect(rx, csi, 7, "bpsk")
            np.testing.assert_array_equal(out.indices, indices)

    def test_memoryless_channel_reduces_to_nearest_point(self):
        rng = np.random.default_rng(3)
        channel = random_channel(rng, 1, 2)
        indices = rng.integers(0, 4, size=6)
        block = modulate(indices, "qpsk")
        rx = transmit(block, channel, 0.5, rng)
        csi = viterbi.CsiView(channel, 0.5)
        out = viterbi.exact_ml_detect(rx, csi, 6, "qpsk")
        pts = constellation("qpsk")
        h = channel.taps[0]
        for i in range(6):
            dists = [np.sum(np.abs(rx.samples[:, i] - h * p) ** 2) for p in pts]
            assert out.indices[i] == int(np.argmin(dists))

    def test_matches_independent_enumerator(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            channel, _, rx, _ = noisy_instance(rng, 3, 2, 8, "bpsk", 0.0)
            csi = viterbi.CsiView(channel, 1.0)
            got = viterbi.exact_ml_detect(rx, csi, 8, "bpsk")
            want, _ = exact_ml_reference(rx, channel, 8, "bpsk")
            np.testing.assert_array_equal(got.indices, want)

    def test_capacity_guard(self):
        rng = np.random.default_rng(5)
        channel, _, rx, _ = noisy_instance(rng, 2, 1, 11, "qpsk", 0.0)
        csi = viterbi.CsiView(channel, 1.0)
        with pytest.raises(CapacityError):
            viterbi.exact_ml_detect(rx, csi, 11, "qpsk")  # 4^11 > 2^20


class TestBeamSearch:
    def test_no_pruning_equals_exact(self):
        rng = np.random.default_rng(6)
        for mod, length in (("bpsk", 8), ("qpsk", 5)):
            for _ in range(5):
                channel, _, rx, s2 = noisy_instance(rng, 3, 2, length, mod, 0.0)
                csi = viterbi.CsiView(channel, s2)
                exact = viterbi.exact_ml_detect(rx, csi, length, mod)
                m = len(constellation(mod))
                beam = viterbi.beam_search_detect(rx, csi, m ** length,
                                                  "full_block", mod)
                np.testing.assert_array_equal(beam.indices, exact.indices)

    def test_width_one_memoryless_is_greedy(self):
        rng = np.random.default_rng(7)
        channel = random_channel(rng, 1, 2)
        indices = rng.integers(0, 2, size=10)
        rx = transmit(modulate(indices, "bpsk"), channel, 0.3, rng)
        csi = viterbi.CsiView(channel, 0.3)
        out = viterbi.beam_search_detect(rx, csi, 1, "full_block", "bpsk")
        pts = constellation("bpsk")
        h = channel.taps[0]
        for i in range(10):
            dists = [np.sum(np.abs(rx.samples[:, i] - h * p) ** 2) for p in pts]
            assert out.indices[i] == int(np.argmin(dists))

    def test_metrics_accumulate_monotonically(self):
        # Recompute the winner's per-step metric: partial sums never decrease.
        rng = np.random.default_rng(8)
        channel, _, rx, s2 = noisy_instance(rng, 4, 2, 12, "bpsk", -3.0)
        csi = viterbi.CsiView(channel, s2)
        out = viterbi.beam_search_detect(rx, csi, 16, "full_block", "bpsk")
        pts = constellation("bpsk")[out.indices]
        padded = np.concatenate([np.zeros(3, dtype=complex), pts])
        partial = 0.0
        previous = 0.0
        for i in range(rx.samples.shape[1]):
            recent = np.array([padded[3 + i - l] if 0 <= i - l < 12 else 0.0
                               for l in range(4)], dtype=complex)
            partial += viterbi.branch_metric(rx.samples[:, i], recent, csi)
            assert partial >= previous - 1e-12
            previous = partial

    def test_wider_beam_never_worse(self):
        rng = np.random.default_rng(9)

        def final_metric(rx, csi, width, length):
            out = viterbi.beam_search_detect(rx, csi, width, "full_block",
                                             "bpsk")
            pts = constellation("bpsk")[out.indices]
            metric = 0.0
            for i in range(rx.samples.shape[1]):
                recent = np.array([pts[i - l] if 0 <= i - l < length else 0.0
                                   for l in range(csi.channel.memory)],
                                  dtype=complex)
                metric += viterbi.branch_metric(rx.samples[:, i], recent, csi)
            return metric

        for _ in range(10):
            channel, _, rx, s2 = noisy_instance(rng, 3, 2, 9, "bpsk", 0.0)
            csi = viterbi.CsiView(channel, s2)
            metrics = [final_metric(rx, csi, w, 9) for w in (1, 2, 8, 64, 512)]
            for narrow, wide in zip(metrics, metrics[1:]):
                assert wide <= narrow + 1e-9

    def test_full_and_cut_agree_for_memoryless(self):
        rng = np.random.default_rng(10)
        channel = random_channel(rng, 1, 3)
        rx = transmit(modulate(rng.integers(0, 2, 14), "bpsk"), channel,
                      0.8, rng)
        csi = viterbi.CsiView(channel, 0.8)
        full = viterbi.beam_search_detect(rx, csi, 4, "full_block", "bpsk")
        cut = viterbi.beam_search_detect(rx, csi, 4, "cut", "bpsk")
        np.testing.assert_array_equal(full.indices, cut.indices)

    def test_deterministic(self):
        rng = np.random.default_rng(11)
        channel, _, rx, s2 = noisy_instance(rng, 4, 2, 20, "bpsk", 0.0)
        csi = viterbi.CsiView(channel, s2)
        a = viterbi.beam_search_detect(rx, csi, 32, "full_block", "bpsk")
        b = viterbi.beam_search_detect(rx, csi, 32, "full_block", "bpsk")
        np.testing.assert_array_equal(a.indices, b.indices)

    def test_bad_config_rejected(self):
        rng = np.random.default_rng(12)
        channel, _, rx, s2 = noisy_instance(rng, 2, 1, 4, "bpsk", 0.0)
        csi = viterbi.CsiView(channel, s2)
        with pytest.raises(ConfigurationError):
            viterbi.beam_search_detect(rx, csi, 0, "full_block", "bpsk")
        with pytest.raises(ConfigurationError):
            viterbi.beam_search_detect(rx, csi, 4, "sideways", "bpsk")

    def test_ties_break_lexicographically(self):
        # Zero channel: every sequence has identical metric; the winner must
        # be the all-zeros prefix under the lexicographic rule.
        channel = make_channel(np.zeros((2, 2)))
        rx = RxBlock(samples=np.zeros((2, 7), dtype=complex),
                     noise_variance=1.0, block_length=6)
        csi = viterbi.CsiView(channel, 1.0)
        out = viterbi.beam_search_detect(rx, csi, 3, "full_block", "bpsk")
        np.testing.assert_array_equal(out.indices, np.zeros(6, dtype=int))
        exact = viterbi.exact_ml_detect(rx, csi, 6, "bpsk")
        np.testing.assert_array_equal(exact.indices, np.zeros(6, dtype=int))

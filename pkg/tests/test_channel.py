"""Channel model: pulse shape, cluster statistics, tap rendering, perturbation."""

import math

import numpy as np
import pytest

from mmwlink.channel import (
    ChannelConfig,
    Cluster,
    ClusterSet,
    Subpath,
    cluster_set_from_dict,
    cluster_set_to_dict,
    load_channel,
    load_cluster_set,
    perturb_amplitudes,
    pulse,
    render_taps,
    sample_clusters,
    save_channel,
    save_cluster_set,
)
from mmwlink.errors import ConfigurationError, DomainError


def degenerate_config(**kwargs):
    defaults = dict(num_antennas=2, mean_clusters=0.0, mean_subpaths=0.0,
                    delay_spread=0.0, intra_cluster_spread=0.0)
    defaults.update(kwargs)
    return ChannelConfig(**defaults)


def single_subpath_set(nr, gain, phase, delay):
    sp = Subpath(gains=np.full(nr, gain), phases=np.full(nr, phase),
                 delay=delay)
    return ClusterSet(clusters=[Cluster(subpaths=[sp])], num_antennas=nr)


def reference_raised_cosine(t, ts, beta, span):
    """Independent scalar evaluation of the truncated raised cosine."""
    x = t / ts
    if abs(x) > span:
        return 0.0
    sinc = 1.0 if x == 0 else math.sin(math.pi * x) / (math.pi * x)
    if beta == 0:
        return sinc
    denom = 1.0 - (2.0 * beta * x) ** 2
    if abs(denom) < 1e-12:
        return (math.pi / 4.0) * math.sin(math.pi / (2 * beta)) / (math.pi / (2 * beta))
    return sinc * math.cos(math.pi * beta * x) / denom


class TestPulse:
    def test_unit_peak(self):
        cfg = ChannelConfig()
        assert pulse(0.0, cfg) == 1.0

    def test_nyquist_zero_crossings(self):
        cfg = ChannelConfig()
        ts = cfg.symbol_period
        for k in (1, -1, 2, 3, -3):
            assert abs(pulse(k * ts, cfg)) < 1e-12

    def test_half_symbol_matches_closed_form(self):
        cfg = ChannelConfig(rolloff=0.25)
        ts = cfg.symbol_period
        expected = reference_raised_cosine(ts / 2, ts, 0.25, cfg.pulse_span)
        assert pulse(ts / 2, cfg) == pytest.approx(expected, rel=1e-12)

    def test_truncated_outside_span(self):
        cfg = ChannelConfig(pulse_span=4)
        ts = cfg.symbol_period
        assert pulse(4.5 * ts, cfg) == 0.0
        assert pulse(-17.0 * ts, cfg) == 0.0

    def test_singularity_point(self):
        cfg = ChannelConfig(rolloff=0.25)
        ts = cfg.symbol_period
        t_sing = ts / (2 * 0.25)
        expected = reference_raised_cosine(t_sing, ts, 0.25, cfg.pulse_span)
        assert pulse(t_sing, cfg) == pytest.approx(expected, rel=1e-12)

    def test_array_input_matches_scalars(self):
        cfg = ChannelConfig()
        ts = cfg.symbol_period
        ts_grid = np.linspace(-5 * ts, 5 * ts, 41)
        vec = pulse(ts_grid, cfg)
        for t, v in zip(ts_grid, vec):
            assert v == pytest.approx(pulse(float(t), cfg), abs=1e-15)


class TestSampleClusters:
    def test_degenerate_config_single_path(self):
        cs = sample_clusters(degenerate_config(), np.random.default_rng(0))
        assert len(cs.clusters) == 1
        assert len(cs.clusters[0].subpaths) == 1
        assert cs.clusters[0].subpaths[0].delay == 0.0

    def test_same_seed_identical(self):
        cfg = ChannelConfig()
        a = sample_clusters(cfg, np.random.default_rng(42))
        b = sample_clusters(cfg, np.random.default_rng(42))
        assert len(a.clusters) == len(b.clusters)
        for ca, cb in zip(a.clusters, b.clusters):
            for sa, sb in zip(ca.subpaths, cb.subpaths):
                np.testing.assert_array_equal(sa.gains, sb.gains)
                np.testing.assert_array_equal(sa.phases, sb.phases)
                assert sa.delay == sb.delay

    def test_cluster_count_statistics(self):
        cfg = ChannelConfig()
        rng = np.random.default_rng(123)
        counts = [len(sample_clusters(cfg, rng).clusters) for _ in range(10_000)]
        assert max(counts) <= 6
        # analytic mean of 1 + min(5, Poisson(mu)) via the pmf
        mu = cfg.mean_clusters
        pmf = [math.exp(-mu) * mu ** k / math.factorial(k) for k in range(60)]
        analytic = 1 + sum(min(5, k) * p for k, p in enumerate(pmf))
        assert np.mean(counts) == pytest.approx(analytic, rel=0.10)

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigurationError):
            sample_clusters(ChannelConfig(power_decay=0.0),
                            np.random.default_rng(0))
        with pytest.raises(ConfigurationError):
            sample_clusters(ChannelConfig(delay_spread=-1e-9),
                            np.random.default_rng(0))
        with pytest.raises(ConfigurationError):
            sample_clusters(ChannelConfig(max_memory=0),
                            np.random.default_rng(0))

    def test_all_delays_and_gains_legal(self):
        cfg = ChannelConfig()
        rng = np.random.default_rng(5)
        for _ in range(200):
            cs = sample_clusters(cfg, rng)
            for cluster in cs.clusters:
                for sp in cluster.subpaths:
                    assert sp.delay >= 0
                    assert np.all(sp.gains >= 0)
                    assert np.all(np.isfinite(sp.gains))
                    assert sp.gains.shape == (cfg.num_antennas,)
                    assert sp.phases.shape == (cfg.num_antennas,)


class TestRenderTaps:
    def test_single_path_unit_gain(self):
        cfg = ChannelConfig(num_antennas=3, max_memory=16)
        cs = single_subpath_set(3, 1.0, 0.0, 0.0)
        chan = render_taps(cs, cfg)
        np.testing.assert_allclose(chan.taps[0], np.ones(3), atol=1e-12)
        for l in range(1, 16):
            np.testing.assert_allclose(chan.taps[l], 0, atol=1e-12)

    def test_single_path_phase_delay_prenormalization(self):
        cfg = ChannelConfig(num_antennas=2, max_memory=16)
        cs = single_subpath_set(2, 0.5, np.pi / 2, cfg.symbol_period)
        chan = render_taps(cs, cfg, normalize=False)
        np.testing.assert_allclose(chan.taps[1], 0.5j * np.ones(2), atol=1e-12)
        assert chan.normalization == 1.0

    def test_matches_straight_loop_oracle(self):
        cfg = ChannelConfig(num_antennas=4, max_memory=32)
        rng = np.random.default_rng(99)
        for _ in range(20):
            cs = sample_clusters(cfg, rng)
            chan = render_taps(cs, cfg, normalize=False)
            expected = np.zeros((32, 4), dtype=complex)
            for l in range(32):
                for n in range(4):
                    acc = 0.0 + 0.0j
                    for cluster in cs.clusters:
                        for sp in cluster.subpaths:
                            p = reference_raised_cosine(
                                l * cfg.symbol_period - sp.delay,
                                cfg.symbol_period, cfg.rolloff, cfg.pulse_span)
                            acc += sp.gains[n] * np.exp(1j * sp.phases[n]) * p
                    expected[l, n] = acc
            scale = np.max(np.abs(expected))
            np.testing.assert_allclose(chan.taps, expected, atol=1e-12 * scale)

    def test_normalization_invariant(self):
        cfg = ChannelConfig()
        rng = np.random.default_rng(17)
        for _ in range(25):
            chan = render_taps(sample_clusters(cfg, rng), cfg)
            mean_energy = float(np.mean(chan.energy_per_antenna()))
            assert abs(mean_energy - 1.0) < 1e-9

    def test_linear_in_gains(self):
        cfg = ChannelConfig()
        rng = np.random.default_rng(3)
        cs = sample_clusters(cfg, rng)
        doubled = ClusterSet(
            clusters=[Cluster(subpaths=[
                Subpath(gains=2 * sp.gains, phases=sp.phases, delay=sp.delay)
                for sp in c.subpaths]) for c in cs.clusters],
            num_antennas=cs.num_antennas)
        base = render_taps(cs, cfg, normalize=False).taps
        twice = render_taps(doubled, cfg, normalize=False).taps
        np.testing.assert_allclose(twice, 2 * base, rtol=1e-12, atol=1e-15)

    def test_empty_cluster_set_rejected(self):
        cfg = ChannelConfig()
        with pytest.raises(DomainError):
            render_taps(ClusterSet(clusters=[], num_antennas=4), cfg)

    def test_truncation_flagged(self):
        cfg = ChannelConfig(num_antennas=2, max_memory=8)
        far = single_subpath_set(2, 1.0, 0.0, 100 * cfg.symbol_period)
        # Delay far outside memory: everything rendered is (near) zero energy.
        with pytest.raises(DomainError):
            render_taps(far, cfg)
        near_edge = single_subpath_set(2, 1.0, 0.0, 6 * cfg.symbol_period)
        chan = render_taps(near_edge, cfg)
        assert chan.truncated
        inside = single_subpath_set(2, 1.0, 0.0, 2 * cfg.symbol_period)
        cfg_big = ChannelConfig(num_antennas=2, max_memory=16)
        assert not render_taps(inside, cfg_big).truncated


class TestPerturbAmplitudes:
    def test_zero_level_identity(self):
        cfg = ChannelConfig()
        cs = sample_clusters(cfg, np.random.default_rng(1))
        out = perturb_amplitudes(cs, 0.0, np.random.default_rng(2))
        for ca, cb in zip(cs.clusters, out.clusters):
            for sa, sb in zip(ca.subpaths, cb.subpaths):
                np.testing.assert_array_equal(sa.gains, sb.gains)

    def test_phases_delays_untouched(self):
        cfg = ChannelConfig()
        cs = sample_clusters(cfg, np.random.default_rng(1))
        out = perturb_amplitudes(cs, 0.1, np.random.default_rng(2))
        for ca, cb in zip(cs.clusters, out.clusters):
            for sa, sb in zip(ca.subpaths, cb.subpaths):
                np.testing.assert_array_equal(sa.phases, sb.phases)
                assert sa.delay == sb.delay

    def test_mean_absolute_distortion(self):
        level = 0.025
        gains = np.ones(100_000)
        cs = ClusterSet(clusters=[Cluster(subpaths=[
            Subpath(gains=gains, phases=np.zeros(100_000), delay=0.0)])],
            num_antennas=100_000)
        out = perturb_amplitudes(cs, level, np.random.default_rng(7))
        delta = out.clusters[0].subpaths[0].gains - 1.0
        assert np.mean(np.abs(delta)) == pytest.approx(level, rel=0.02)
        # zero-mean within 3 sigma / sqrt(N)
        sigma = level * np.sqrt(np.pi / 2)
        assert abs(np.mean(delta)) < 3 * sigma / np.sqrt(delta.size)

    def test_gains_clamped_nonnegative(self):
        gains = np.full(10_000, 0.01)
        cs = ClusterSet(clusters=[Cluster(subpaths=[
            Subpath(gains=gains, phases=np.zeros(10_000), delay=0.0)])],
            num_antennas=10_000)
        out = perturb_amplitudes(cs, 2.0, np.random.default_rng(0))
        assert np.all(out.clusters[0].subpaths[0].gains >= 0)

    def test_negative_level_rejected(self):
        cfg = ChannelConfig()
        cs = sample_clusters(cfg, np.random.default_rng(1))
        with pytest.raises(ConfigurationError):
            perturb_amplitudes(cs, -0.1, np.random.default_rng(2))


class TestSerialization:
    def test_channel_file_round_trip(self, tmp_path):
        cfg = ChannelConfig()
        chan = render_taps(sample_clusters(cfg, np.random.default_rng(5)),
                           cfg, seed=5)
        path = tmp_path / "chan.mwch"
        save_channel(chan, path)
        loaded = load_channel(path)
        np.testing.assert_array_equal(loaded.taps, chan.taps)
        assert loaded.symbol_period == chan.symbol_period
        assert loaded.normalization == chan.normalization
        assert loaded.seed == 5
        assert loaded.truncated == chan.truncated

    def test_channel_file_rejects_garbage(self, tmp_path):
        path = tmp_path / "junk.mwch"
        path.write_bytes(b"not a channel file at all.......")
        with pytest.raises(DomainError):
            load_channel(path)

    def test_cluster_set_round_trip(self, tmp_path):
        cfg = ChannelConfig()
        cs = sample_clusters(cfg, np.random.default_rng(11))
        path = tmp_path / "clusters.json"
        save_cluster_set(cs, path)
        loaded = load_cluster_set(path)
        assert len(loaded.clusters) == len(cs.clusters)
        for ca, cb in zip(cs.clusters, loaded.clusters):
            for sa, sb in zip(ca.subpaths, cb.subpaths):
                np.testing.assert_allclose(sa.gains, sb.gains)
                np.testing.assert_allclose(sa.phases, sb.phases)
                assert sa.delay == sb.delay

    def test_cluster_dict_version_checked(self):
        data = cluster_set_to_dict(single_subpath_set(2, 1.0, 0.0, 0.0))
        data["version"] = 99
        with pytest.raises(DomainError):
            cluster_set_from_dict(data)

"""Statistical mmWave multipath channel generation.

Channels are built in two stages: a cluster/subpath parameter draw
(`sample_clusters`) followed by rendering into discrete-time tap vectors
(`render_taps`).  Each subpath contributes gain * exp(j*phase) * pulse(t - delay)
to every tap instant, per receive antenna.  Rendered channels are normalized
to unit average per-antenna energy so that SNR has a channel-independent
meaning.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from mmwlink.errors import ConfigurationError, DomainError

MAX_CLUSTERS = 6

_CHANNEL_MAGIC = b"MWCH"
_CHANNEL_VERSION = 1


@dataclass
class Subpath:
    """One propagation path: per-antenna gains/phases and a common delay."""

    gains: np.ndarray   # (Nr,) nonnegative amplitudes
    phases: np.ndarray  # (Nr,) radians in [0, 2*pi)
    delay: float        # seconds, >= 0


@dataclass
class Cluster:
    subpaths: list[Subpath]


@dataclass
class ClusterSet:
    """Cluster/subpath parameters for one channel realization."""

    clusters: list[Cluster]
    num_antennas: int

    def validate(self) -> None:
        if not 1 <= len(self.clusters) <= MAX_CLUSTERS:
            raise DomainError(
                f"cluster count {len(self.clusters)} outside [1, {MAX_CLUSTERS}]"
            )
        for cluster in self.clusters:
            if not cluster.subpaths:
                raise DomainError("cluster with no subpaths")
            for sp in cluster.subpaths:
                if sp.gains.shape != (self.num_antennas,):
                    raise DomainError("subpath gain count != num_antennas")
                if sp.phases.shape != (self.num_antennas,):
                    raise DomainError("subpath phase count != num_antennas")
                if not np.all(np.isfinite(sp.gains)) or np.any(sp.gains < 0):
                    raise DomainError("subpath gains must be finite and >= 0")
                if sp.delay < 0:
                    raise DomainError("subpath delay must be >= 0")

    def num_subpaths(self) -> int:
        return sum(len(c.subpaths) for c in self.clusters)

    def max_delay(self) -> float:
        return max(sp.delay for c in self.clusters for sp in c.subpaths)


@dataclass
class ChannelConfig:
    """Knobs for the generative channel statistics.

    `symbol_period` is derived from the bandwidth.  Carrier frequency and the
    link-budget entries are recorded as provenance metadata only; they do not
    enter the tap math.
    """

    num_antennas: int = 4
    bandwidth_hz: float = 800e6
    max_memory: int = 64
    mean_clusters: float = 1.8        # C ~ 1 + min(5, Poisson(mean_clusters))
    mean_subpaths: float = 3.0        # M_c ~ 1 + Poisson(mean_subpaths)
    delay_spread: float = 20e-9       # cluster arrival scale (s)
    intra_cluster_spread: float = 2.5e-9  # subpath excess delay scale (s)
    power_decay: float = 20e-9        # cluster power e-folding constant (s)
    rolloff: float = 0.25
    pulse_span: int = 4               # pulse truncated at +- span symbol periods
    carrier_hz: float = 28e9          # metadata only
    metadata: dict = field(default_factory=dict)

    @property
    def symbol_period(self) -> float:
        return 1.0 / self.bandwidth_hz

    def validate(self) -> None:
        if self.num_antennas < 1:
            raise ConfigurationError("num_antennas must be >= 1")
        if self.max_memory < 1:
            raise ConfigurationError("max_memory must be >= 1")
        if self.bandwidth_hz <= 0:
            raise ConfigurationError("bandwidth_hz must be > 0")
        if self.power_decay <= 0:
            raise ConfigurationError("power_decay must be > 0")
        # Zero spreads are legal degenerate distributions; negatives are not.
        for name in ("mean_clusters", "mean_subpaths", "delay_spread",
                     "intra_cluster_spread"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if not 0.0 <= self.rolloff <= 1.0:
            raise ConfigurationError("rolloff must be in [0, 1]")
        if self.pulse_span < 1:
            raise ConfigurationError("pulse_span must be >= 1")


@dataclass
class ChannelRealization:
    """Discrete-time channel taps, one complex vector per tap instant."""

    taps: np.ndarray          # (T, Nr) complex128
    symbol_period: float
    num_antennas: int
    memory: int
    normalization: float = 1.0   # factor that was multiplied into the taps
    seed: int | None = None
    truncated: bool = False      # pulse/delay support exceeded max_memory

    def energy_per_antenna(self) -> np.ndarray:
        return np.sum(np.abs(self.taps) ** 2, axis=0)

    def validate(self) -> None:
        if self.taps.shape != (self.memory, self.num_antennas):
            raise DomainError("tap matrix shape mismatch")
        if not np.all(np.isfinite(self.taps)):
            raise DomainError("non-finite tap entries")
        if self.memory < 1 or self.num_antennas < 1:
            raise DomainError("memory and num_antennas must be >= 1")


def pulse(t, config: ChannelConfig):
    """Raised-cosine pulse sampled at time offset ``t`` seconds.

    Unit peak at t = 0, zero crossings at nonzero integer multiples of the
    symbol period, truncated to zero outside +- pulse_span symbol periods.
    Accepts scalars or arrays.
    """
    ts = config.symbol_period
    beta = config.rolloff
    x = np.asarray(t, dtype=np.float64) / ts
    out = np.sinc(x)
    if beta > 0:
        denom = 1.0 - (2.0 * beta * x) ** 2
        # At |x| = 1/(2 beta) the closed form is 0/0; use the limit value.
        singular = np.isclose(denom, 0.0, atol=1e-12)
        safe = np.where(singular, 1.0, denom)
        out = out * np.cos(np.pi * beta * x) / safe
        limit = (np.pi / 4.0) * np.sinc(1.0 / (2.0 * beta))
        out = np.where(singular, limit, out)
    out = np.where(np.abs(x) > config.pulse_span, 0.0, out)
    if np.isscalar(t):
        return float(out)
    return out


def sample_clusters(config: ChannelConfig, rng: np.random.Generator) -> ClusterSet:
    """Draw cluster/subpath parameters for one channel realization.

    Cluster count is 1 + min(5, Poisson), arrival delays are exponential with
    the earliest cluster shifted to zero excess delay, cluster powers decay
    exponentially with delay, and subpaths split cluster power through
    normalized uniform fractions.  Phases are i.i.d. uniform per antenna;
    gain magnitudes are shared across antennas.
    """
    config.validate()
    nr = config.num_antennas

    n_clusters = 1 + min(MAX_CLUSTERS - 1, int(rng.poisson(config.mean_clusters)))
    arrivals = rng.exponential(config.delay_spread, size=n_clusters) \
        if config.delay_spread > 0 else np.zeros(n_clusters)
    arrivals = np.sort(arrivals) - np.min(arrivals)
    powers = np.exp(-arrivals / config.power_decay)

    clusters = []
    for c in range(n_clusters):
        n_sub = 1 + int(rng.poisson(config.mean_subpaths))
        fractions = rng.uniform(size=n_sub)
        fractions /= fractions.sum()
        excess = rng.exponential(config.intra_cluster_spread, size=n_sub) \
            if config.intra_cluster_spread > 0 else np.zeros(n_sub)
        magnitudes = np.sqrt(powers[c] * fractions)
        subpaths = []
        for m in range(n_sub):
            phases = rng.uniform(0.0, 2.0 * np.pi, size=nr)
            gains = np.full(nr, magnitudes[m])
            subpaths.append(Subpath(gains=gains, phases=phases,
                                    delay=float(arrivals[c] + excess[m])))
        clusters.append(Cluster(subpaths=subpaths))

    out = ClusterSet(clusters=clusters, num_antennas=nr)
    out.validate()
    return out


def render_taps(clusters: ClusterSet, config: ChannelConfig, *,
                normalize: bool = True,
                seed: int | None = None) -> ChannelRealization:
    """Render a ClusterSet into tap vectors on the symbol-period grid.

    Tap l, antenna n is the sum over all subpaths of
    gain * exp(j*phase) * pulse(l*Ts - delay).  With ``normalize`` the taps
    are scaled so the per-antenna energy, averaged over antennas, is exactly 1;
    the applied factor is reported on the realization.
    """
    config.validate()
    clusters.validate()
    if clusters.num_antennas != config.num_antennas:
        raise DomainError("ClusterSet antenna count differs from config")

    ts = config.symbol_period
    t_mem = config.max_memory
    nr = config.num_antennas

    all_sub = [sp for c in clusters.clusters for sp in c.subpaths]
    amps = np.stack([sp.gains * np.exp(1j * sp.phases) for sp in all_sub])  # (S, Nr)
    delays = np.array([sp.delay for sp in all_sub])                         # (S,)

    tap_times = np.arange(t_mem)[:, None] * ts - delays[None, :]            # (T, S)
    weights = pulse(tap_times, config)
    taps = weights.astype(np.complex128) @ amps                             # (T, Nr)

    truncated = bool(np.max(delays) + config.pulse_span * ts > (t_mem - 1) * ts)

    factor = 1.0
    if normalize:
        mean_energy = float(np.mean(np.sum(np.abs(taps) ** 2, axis=0)))
        if mean_energy <= 0.0:
            raise DomainError("cannot normalize a zero-energy channel")
        factor = 1.0 / np.sqrt(mean_energy)
        taps = taps * factor

    out = ChannelRealization(
        taps=taps, symbol_period=ts, num_antennas=nr, memory=t_mem,
        normalization=factor, seed=seed, truncated=truncated,
    )
    out.validate()
    return out


def perturb_amplitudes(ch_params: ClusterSet, level: float,
                       rng: np.random.Generator) -> ClusterSet:
    """Return a copy with every gain scaled by (1 + delta), delta ~ N(0, sigma).

    sigma = level * sqrt(pi/2) so that E[|delta|] equals ``level``.  Phases
    and delays are untouched; perturbed gains are clamped at zero.
    """
    if level < 0:
        raise ConfigurationError("distortion level must be >= 0")
    sigma = level * np.sqrt(np.pi / 2.0)
    clusters = []
    for cluster in ch_params.clusters:
        subpaths = []
        for sp in cluster.subpaths:
            if level == 0:
                gains = sp.gains.copy()
            else:
                delta = rng.normal(0.0, sigma, size=sp.gains.shape)
                gains = np.maximum(sp.gains * (1.0 + delta), 0.0)
            subpaths.append(Subpath(gains=gains, phases=sp.phases.copy(),
                                    delay=sp.delay))
        clusters.append(Cluster(subpaths=subpaths))
    return ClusterSet(clusters=clusters, num_antennas=ch_params.num_antennas)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_channel(channel: ChannelRealization, path) -> None:
    """Write a realization as a small versioned binary file.

    Header: magic, version, Nr, T, symbol period, normalization factor, seed
    (-1 when unknown), truncation flag.  Body: row-major taps as float64
    (re, im) pairs.
    """
    channel.validate()
    seed = -1 if channel.seed is None else int(channel.seed)
    header = struct.pack(
        "<4sIIIddqB",
        _CHANNEL_MAGIC, _CHANNEL_VERSION,
        channel.num_antennas, channel.memory,
        channel.symbol_period, channel.normalization,
        seed, 1 if channel.truncated else 0,
    )
    body = np.ascontiguousarray(channel.taps, dtype=np.complex128) \
        .view(np.float64).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body)


def load_channel(path) -> ChannelRealization:
    header_size = struct.calcsize("<4sIIIddqB")
    with open(path, "rb") as fh:
        header = fh.read(header_size)
        if len(header) < header_size or header[:4] != _CHANNEL_MAGIC:
            raise DomainError(f"{path}: not a channel file")
        _, version, nr, t_mem, ts, norm, seed, trunc = struct.unpack(
            "<4sIIIddqB", header)
        if version != _CHANNEL_VERSION:
            raise DomainError(f"{path}: unsupported channel file version {version}")
        body = fh.read(t_mem * nr * 16)
    taps = np.frombuffer(body, dtype=np.float64).view(np.complex128) \
        .reshape(t_mem, nr).copy()
    return ChannelRealization(
        taps=taps, symbol_period=ts, num_antennas=nr, memory=t_mem,
        normalization=norm, seed=None if seed == -1 else seed,
        truncated=bool(trunc),
    )


def cluster_set_to_dict(clusters: ClusterSet) -> dict:
    return {
        "version": 1,
        "num_antennas": clusters.num_antennas,
        "clusters": [
            {
                "subpaths": [
                    {
                        "gains": sp.gains.tolist(),
                        "phases": sp.phases.tolist(),
                        "delay": sp.delay,
                    }
                    for sp in cluster.subpaths
                ]
            }
            for cluster in clusters.clusters
        ],
    }


def cluster_set_from_dict(data: dict) -> ClusterSet:
    if data.get("version") != 1:
        raise DomainError("unsupported cluster file version")
    nr = int(data["num_antennas"])
    clusters = [
        Cluster(subpaths=[
            Subpath(
                gains=np.asarray(sp["gains"], dtype=np.float64),
                phases=np.asarray(sp["phases"], dtype=np.float64),
                delay=float(sp["delay"]),
            )
            for sp in cluster["subpaths"]
        ])
        for cluster in data["clusters"]
    ]
    out = ClusterSet(clusters=clusters, num_antennas=nr)
    out.validate()
    return out


def save_cluster_set(clusters: ClusterSet, path) -> None:
    """Write cluster parameters as human-readable JSON for provenance."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cluster_set_to_dict(clusters), fh, indent=2)
        fh.write("\n")


def load_cluster_set(path) -> ClusterSet:
    with open(path, "r", encoding="utf-8") as fh:
        return cluster_set_from_dict(json.load(fh))

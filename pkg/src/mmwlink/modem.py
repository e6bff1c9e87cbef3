"""Uplink modulation, channel transit, and dataset generation.

The received block at time i is the multi-user, multi-tap convolution
sum of the per-user taps with the transmitted constellation points, plus
i.i.d. circularly symmetric complex Gaussian noise with per-entry variance
``noise_variance`` (real and imaginary parts each carry half of it).
Symbols outside the block are treated as zero guards, so every received
block carries the T-1 convolution tail columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mmwlink.channel import ChannelRealization
from mmwlink.errors import ConfigurationError, DomainError

_SQRT2 = np.sqrt(2.0)

# BPSK: bit 0 -> +1, bit 1 -> -1.
# QPSK: Gray map, index read as the bit pair (b1 b0); unit energy.
_CONSTELLATIONS = {
    "bpsk": np.array([1.0 + 0.0j, -1.0 + 0.0j]),
    "qpsk": np.array([1.0 + 1.0j, -1.0 + 1.0j, 1.0 - 1.0j, -1.0 - 1.0j]) / _SQRT2,
}

_DATASET_VERSION = 1


def constellation(modulation: str) -> np.ndarray:
    try:
        return _CONSTELLATIONS[modulation.lower()]
    except KeyError:
        raise ConfigurationError(f"unknown modulation {modulation!r}") from None


def alphabet_size(modulation: str) -> int:
    return len(constellation(modulation))


@dataclass
class SymbolBlock:
    """A block of modulated symbols with constellation points attached."""

    indices: np.ndarray   # (L,) ints in [0, M)
    modulation: str
    points: np.ndarray    # (L,) complex constellation points

    @property
    def alphabet(self) -> int:
        return alphabet_size(self.modulation)

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class RxBlock:
    """Received complex samples, Nr x (L + T - 1), plus noise metadata."""

    samples: np.ndarray       # (Nr, L + T - 1) complex128
    noise_variance: float
    block_length: int
    channel_id: str = ""

    @property
    def num_antennas(self) -> int:
        return self.samples.shape[0]

    def validate(self) -> None:
        if not np.all(np.isfinite(self.samples)):
            raise DomainError("non-finite received samples")
        if self.noise_variance < 0:
            raise DomainError("noise variance must be >= 0")
        if self.samples.shape[1] < self.block_length:
            raise DomainError("fewer sample columns than block length")


@dataclass
class LinkConfig:
    snr_db: float | None = 0.0             # fixed per-block SNR, or None
    snr_range_db: tuple[float, float] | None = None  # uniform per-block range
    num_users: int = 1
    block_length: int = 200
    seed: int = 0

    def validate(self) -> None:
        if self.block_length < 1:
            raise ConfigurationError("block_length must be >= 1")
        if self.num_users < 1:
            raise ConfigurationError("num_users must be >= 1")
        if self.snr_range_db is not None:
            lo, hi = self.snr_range_db
            if lo > hi:
                raise ConfigurationError("snr range lo > hi")
        elif self.snr_db is None:
            raise ConfigurationError("either snr_db or snr_range_db is required")


def modulate(bits_or_indices, modulation: str) -> SymbolBlock:
    """Map alphabet indices (bits, for BPSK) to constellation points."""
    points_table = constellation(modulation)
    indices = np.asarray(bits_or_indices, dtype=np.int64)
    if indices.ndim != 1 or len(indices) < 1:
        raise DomainError("expected a nonempty 1-D index array")
    if np.any(indices < 0) or np.any(indices >= len(points_table)):
        raise DomainError(f"index outside alphabet of size {len(points_table)}")
    return SymbolBlock(indices=indices, modulation=modulation.lower(),
                       points=points_table[indices])


def snr_to_noise_variance(snr_db: float,
                          channel: ChannelRealization | None = None) -> float:
    """Noise variance for a target SNR on a unit-energy channel.

    SNR is average received symbol energy per receive antenna over per-antenna
    complex noise variance; with unit symbol energy and unit per-antenna
    channel energy this is simply 10^(-snr_db/10).
    """
    if channel is not None:
        mean_energy = float(np.mean(channel.energy_per_antenna()))
        if abs(mean_energy - 1.0) > 1e-6:
            raise ConfigurationError(
                "channel is not normalized; snr_to_noise_variance assumes "
                "unit average per-antenna energy")
    return float(10.0 ** (-snr_db / 10.0))


def transmit(blocks, channels, noise_variance: float,
             rng: np.random.Generator, *, channel_id: str = "") -> RxBlock:
    """Push per-user symbol blocks through their channels and add noise.

    ``blocks`` and ``channels`` may be single objects (one user) or equal
    length lists.  All channels must share Nr and T, all blocks the same
    length; symbols before the block and after it are zero, so the output has
    L + T - 1 columns.
    """
    if isinstance(blocks, SymbolBlock):
        blocks = [blocks]
    if isinstance(channels, ChannelRealization):
        channels = [channels]
    if len(blocks) != len(channels):
        raise DomainError("one channel per user block is required")
    if noise_variance < 0:
        raise ConfigurationError("noise variance must be >= 0")

    nr = channels[0].num_antennas
    t_mem = channels[0].memory
    length = len(blocks[0])
    for ch in channels:
        if ch.num_antennas != nr or ch.memory != t_mem:
            raise DomainError("channels disagree on Nr or memory")
    for blk in blocks:
        if len(blk) != length:
            raise DomainError("blocks disagree on length")

    samples = np.zeros((nr, length + t_mem - 1), dtype=np.complex128)
    for blk, ch in zip(blocks, channels):
        for n in range(nr):
            samples[n] += np.convolve(blk.points, ch.taps[:, n])

    scale = np.sqrt(noise_variance / 2.0)
    noise = rng.standard_normal(samples.shape) + 1j * rng.standard_normal(samples.shape)
    samples = samples + scale * noise

    out = RxBlock(samples=samples, noise_variance=float(noise_variance),
                  block_length=length, channel_id=channel_id)
    out.validate()
    return out


@dataclass
class Dataset:
    """Labeled (SymbolBlock, RxBlock) pairs with per-block SNR provenance."""

    pairs: list[tuple[SymbolBlock, RxBlock]]
    snr_db: np.ndarray          # (num_blocks,) per-block SNR actually used
    modulation: str
    num_antennas: int
    memory: int
    block_length: int
    channel_id: str = ""
    split_id: str = ""          # provenance tag for train/eval separation
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.pairs)


def generate_dataset(channel: ChannelRealization, link_config: LinkConfig,
                     num_blocks: int, modulation: str = "bpsk", *,
                     channel_id: str = "", split_id: str = "") -> Dataset:
    """Generate labeled blocks with i.i.d. uniform symbols.

    Per-block SNR is either fixed (``snr_db``) or drawn uniformly from
    ``snr_range_db``; the value used is recorded.  Block randomness derives
    deterministically from the config seed and the block index, so generation
    order (or parallel generation) cannot change the data.
    """
    link_config.validate()
    if num_blocks < 1:
        raise ConfigurationError("num_blocks must be >= 1")
    if link_config.num_users != 1:
        raise ConfigurationError("dataset generation is single-user")
    m = alphabet_size(modulation)

    pairs = []
    snrs = np.empty(num_blocks)
    for b in range(num_blocks):
        rng = np.random.default_rng(
            np.random.SeedSequence(link_config.seed, spawn_key=(b,)))
        if link_config.snr_range_db is not None:
            lo, hi = link_config.snr_range_db
            snr = float(rng.uniform(lo, hi))
        else:
            snr = float(link_config.snr_db)
        indices = rng.integers(0, m, size=link_config.block_length)
        block = modulate(indices, modulation)
        sigma2 = snr_to_noise_variance(snr)
        rx = transmit(block, channel, sigma2, rng, channel_id=channel_id)
        pairs.append((block, rx))
        snrs[b] = snr

    return Dataset(pairs=pairs, snr_db=snrs, modulation=modulation,
                   num_antennas=channel.num_antennas, memory=channel.memory,
                   block_length=link_config.block_length,
                   channel_id=channel_id, split_id=split_id)


# ---------------------------------------------------------------------------
# Dataset container file
# ---------------------------------------------------------------------------

def save_dataset(dataset: Dataset, path) -> None:
    """Write a dataset as a versioned .npz container (64-bit floats)."""
    symbols = np.stack([blk.indices for blk, _ in dataset.pairs]).astype(np.int64)
    samples = np.stack([rx.samples for _, rx in dataset.pairs])
    noise_var = np.array([rx.noise_variance for _, rx in dataset.pairs])
    np.savez(
        path,
        version=np.int64(_DATASET_VERSION),
        modulation=np.str_(dataset.modulation),
        num_antennas=np.int64(dataset.num_antennas),
        memory=np.int64(dataset.memory),
        block_length=np.int64(dataset.block_length),
        channel_id=np.str_(dataset.channel_id),
        split_id=np.str_(dataset.split_id),
        snr_db=dataset.snr_db.astype(np.float64),
        noise_variance=noise_var.astype(np.float64),
        symbols=symbols,
        samples_re=samples.real.astype(np.float64),
        samples_im=samples.imag.astype(np.float64),
    )


def load_dataset(path) -> Dataset:
    with np.load(path) as data:
        if int(data["version"]) != _DATASET_VERSION:
            raise DomainError(f"{path}: unsupported dataset version")
        modulation = str(data["modulation"])
        block_length = int(data["block_length"])
        channel_id = str(data["channel_id"])
        samples = data["samples_re"] + 1j * data["samples_im"]
        symbols = data["symbols"]
        noise_var = data["noise_variance"]
        snr_db = data["snr_db"]
        num_antennas = int(data["num_antennas"])
        memory = int(data["memory"])
        split_id = str(data["split_id"])

    pairs = []
    for b in range(symbols.shape[0]):
        block = modulate(symbols[b], modulation)
        rx = RxBlock(samples=samples[b], noise_variance=float(noise_var[b]),
                     block_length=block_length, channel_id=channel_id)
        pairs.append((block, rx))
    return Dataset(pairs=pairs, snr_db=snr_db, modulation=modulation,
                   num_antennas=num_antennas, memory=memory,
                   block_length=block_length, channel_id=channel_id,
                   split_id=split_id)

"""Model-based sequence detection baselines.

`exact_ml_detect` enumerates every candidate sequence and is the ground
truth on small instances.  `beam_search_detect` is the long-memory
workhorse: a time-synchronous survivor-path search that extends each kept
hypothesis by every symbol, scores it with the Gaussian branch metric, and
prunes back to the beam width.  Ties are always broken toward the
lexicographically smallest symbol prefix, which makes both detectors fully
deterministic.

The "cut" mode scores only the first L received columns (the message
window); "full_block" also consumes the T-1 tail columns, where hypotheses
are extended by the zero guard symbols without branching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mmwlink.channel import ChannelRealization
from mmwlink.errors import CapacityError, ConfigurationError, DomainError
from mmwlink.modem import RxBlock, SymbolBlock, alphabet_size, constellation

_EXACT_LIMIT = 2 ** 20
_CHUNK = 2 ** 14


@dataclass
class CsiView:
    """The channel knowledge handed to a detector (possibly wrong)."""

    channel: ChannelRealization
    noise_variance: float

    def validate_against(self, rx: RxBlock) -> None:
        if self.channel.num_antennas != rx.num_antennas:
            raise DomainError("CSI antenna count does not match received block")


@dataclass
class BeamHypothesis:
    """One survivor path: its prefix, metric, and recent-symbol buffer."""

    prefix: tuple
    metric: float
    buffer: np.ndarray  # (T-1,) complex, most recent symbol first


def branch_metric(y_col: np.ndarray, recent_points: np.ndarray,
                  csi: CsiView) -> float:
    """Squared distance between y and the taps applied to the hypothesis.

    ``recent_points`` holds the hypothesized constellation points
    [x[i], x[i-1], ..., x[i-T+1]]; entries before the block are zeros.  The
    noise variance scales all hypotheses alike, so it is left out of the
    ranking metric.
    """
    taps = csi.channel.taps
    if recent_points.shape[0] != taps.shape[0]:
        raise DomainError("hypothesis window must cover all channel taps")
    pred = recent_points @ taps
    diff = y_col - pred
    return float(np.vdot(diff, diff).real)


def exact_ml_detect(rx: RxBlock, csi: CsiView, length: int,
                    modulation: str) -> SymbolBlock:
    """Exhaustive maximum-likelihood detection over all M^L sequences.

    Scores the full observation including the convolution tail.  Ties pick
    the lexicographically smallest sequence.  Guarded to M^L <= 2^20.
    """
    csi.validate_against(rx)
    m = alphabet_size(modulation)
    total = m ** length
    if total > _EXACT_LIMIT:
        raise CapacityError(
            f"{m}^{length} sequences exceed the exhaustive-search limit")
    points_table = constellation(modulation)
    taps = csi.channel.taps
    t_mem = taps.shape[0]
    n_cols = min(rx.samples.shape[1], length + t_mem - 1)
    y = rx.samples[:, :n_cols].T  # (n_cols, Nr)

    powers = m ** np.arange(length - 1, -1, -1, dtype=np.int64)
    best_metric = np.inf
    best_seq = None
    for start in range(0, total, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
        digits = (idx[:, None] // powers[None, :]) % m          # lex order
        pts = points_table[digits]                              # (C, L)
        pred = np.zeros((len(idx), n_cols, taps.shape[1]), dtype=np.complex128)
        for l in range(t_mem):
            hi = min(l + length, n_cols)
            if hi <= l:
                break
            pred[:, l:hi, :] += pts[:, :hi - l, None] * taps[l][None, None, :]
        diff = pred - y[None, :, :]
        metrics = np.sum(diff.real ** 2 + diff.imag ** 2, axis=(1, 2))
        k = int(np.argmin(metrics))          # first occurrence: lex smallest
        if metrics[k] < best_metric:
            best_metric = float(metrics[k])
            best_seq = digits[k].copy()

    return SymbolBlock(indices=best_seq, modulation=modulation.lower(),
                       points=points_table[best_seq])


def beam_search_detect(rx: RxBlock, csi: CsiView, beam_width: int,
                       mode: str = "full_block",
                       modulation: str = "bpsk") -> SymbolBlock:
    """Survivor-path sequence detection with at most ``beam_width`` hypotheses.

    At each message step every hypothesis is extended by all M symbols and
    the best ``beam_width`` candidates survive, ranked by accumulated metric
    with lexicographic tie-breaking.  In full_block mode the T-1 tail
    columns are then absorbed with zero-symbol extensions.
    """
    if beam_width < 1:
        raise ConfigurationError("beam width must be >= 1")
    if mode not in ("full_block", "cut"):
        raise ConfigurationError(f"unknown beam search mode {mode!r}")
    csi.validate_against(rx)

    m = alphabet_size(modulation)
    points_table = constellation(modulation)
    taps = csi.channel.taps
    t_mem = taps.shape[0]
    length = rx.block_length
    if length < 1:
        raise DomainError("empty received block")
    n_cols = length if mode == "cut" \
        else min(rx.samples.shape[1], length + t_mem - 1)

    h_tail = np.ascontiguousarray(taps[1:])       # (T-1, Nr)
    shifted = [np.ascontiguousarray(taps[0] * p) for p in points_table]
    y_cols = [np.ascontiguousarray(rx.samples[:, i]) for i in range(n_cols)]

    hyps = [BeamHypothesis(prefix=(), metric=0.0,
                           buffer=np.zeros(t_mem - 1, dtype=np.complex128))]

    for i in range(length):
        y = y_cols[i]
        n_par = len(hyps)
        cand_metrics = np.empty(n_par * m)
        bases = []
        for p_idx, hyp in enumerate(hyps):
            base = y - hyp.buffer @ h_tail if t_mem > 1 else y
            bases.append(base)
            row = p_idx * m
            for s in range(m):
                d = base - shifted[s]
                cand_metrics[row + s] = hyp.metric + np.vdot(d, d).real

        if n_par * m <= beam_width:
            keep = np.arange(n_par * m)
        else:
            order = np.argsort(cand_metrics, kind="stable")
            keep = np.sort(order[:beam_width])

        new_hyps = []
        for c in keep:
            p_idx, s = divmod(int(c), m)
            parent = hyps[p_idx]
            if t_mem > 1:
                buffer = np.empty(t_mem - 1, dtype=np.complex128)
                buffer[0] = points_table[s]
                buffer[1:] = parent.buffer[:-1]
            else:
                buffer = parent.buffer
            new_hyps.append(BeamHypothesis(prefix=parent.prefix + (s,),
                                           metric=float(cand_metrics[c]),
                                           buffer=buffer))
        hyps = new_hyps

    # Tail columns: the transmitted symbol is the zero guard, no branching.
    for i in range(length, n_cols):
        y = y_cols[i]
        for hyp in hyps:
            d = y - hyp.buffer @ h_tail if t_mem > 1 else y
            hyp.metric += float(np.vdot(d, d).real)
            if t_mem > 1:
                buffer = np.empty(t_mem - 1, dtype=np.complex128)
                buffer[0] = 0.0
                buffer[1:] = hyp.buffer[:-1]
                hyp.buffer = buffer

    metrics = np.array([h.metric for h in hyps])
    best = hyps[int(np.argmin(metrics))]       # first min: lex smallest
    indices = np.array(best.prefix, dtype=np.int64)
    return SymbolBlock(indices=indices, modulation=modulation.lower(),
                       points=points_table[indices])

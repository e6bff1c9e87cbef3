"""Sliding bidirectional-LSTM symbol detector.

A three-layer bidirectional LSTM stack is applied to every length-W window
of the received feature stream; the per-position PMFs of all windows
covering a symbol are averaged to form its final PMF.  A symbol's estimate
is final as soon as the last window covering it has been consumed, i.e.
after a decoding delay of W - 1 received samples.

Forward and backward directions are merged by concatenation, both between
layers and before the output head.  For BPSK the head is a scalar sigmoid
whose output q is expanded to the PMF [1 - q, q] over symbol indices, so
averaging and hard decisions are alphabet-uniform.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from mmwlink import nn
from mmwlink.errors import CheckpointError, ConfigurationError, DomainError, TrainingError
from mmwlink.modem import Dataset, RxBlock, SymbolBlock, alphabet_size, constellation

NUM_LAYERS = 3

_CKPT_MAGIC = b"MWNN"
_CKPT_VERSION = 1


@dataclass
class SbrnnModel:
    """Three stacked bidirectional LSTM layers plus an output head."""

    layers: list[tuple[nn.LstmLayerParams, nn.LstmLayerParams]]  # (fwd, bwd)
    head: nn.DenseHead
    window: int
    num_antennas: int
    modulation: str
    layer_norm: bool = False

    @property
    def alphabet(self) -> int:
        return alphabet_size(self.modulation)

    @property
    def hidden_size(self) -> int:
        return self.layers[0][0].hidden_size

    @property
    def feature_size(self) -> int:
        return 2 * self.num_antennas

    @classmethod
    def init(cls, num_antennas: int, modulation: str, *, window: int = 30,
             hidden: int = 20, rng: np.random.Generator | None = None,
             layer_norm: bool = False) -> "SbrnnModel":
        if window < 1:
            raise ConfigurationError("window must be >= 1")
        if rng is None:
            rng = np.random.default_rng(0)
        m = alphabet_size(modulation)
        feat = 2 * num_antennas
        layers = []
        for idx in range(NUM_LAYERS):
            in_size = feat if idx == 0 else 2 * hidden
            layers.append((nn.LstmLayerParams.init(in_size, hidden, rng),
                           nn.LstmLayerParams.init(in_size, hidden, rng)))
        if m == 2:
            head = nn.DenseHead.init(2 * hidden, 1, "sigmoid", rng)
        else:
            head = nn.DenseHead.init(2 * hidden, m, "softmax", rng)
        return cls(layers=layers, head=head, window=window,
                   num_antennas=num_antennas, modulation=modulation.lower(),
                   layer_norm=layer_norm)

    def param_arrays(self) -> list[np.ndarray]:
        """Canonical flat ordering: per layer fwd then bwd, head last."""
        arrays = []
        for fwd, bwd in self.layers:
            arrays.extend(fwd.arrays())
            arrays.extend(bwd.arrays())
        arrays.extend(self.head.arrays())
        return arrays

    def copy(self) -> "SbrnnModel":
        layers = [(replace(f, **{k: getattr(f, k).copy() for k in
                                 ("w_i", "w_f", "w_g", "w_o",
                                  "b_i", "b_f", "b_g", "b_o")}),
                   replace(b, **{k: getattr(b, k).copy() for k in
                                 ("w_i", "w_f", "w_g", "w_o",
                                  "b_i", "b_f", "b_g", "b_o")}))
                  for f, b in self.layers]
        head = nn.DenseHead(weights=self.head.weights.copy(),
                            bias=self.head.bias.copy(),
                            activation=self.head.activation)
        return SbrnnModel(layers=layers, head=head, window=self.window,
                          num_antennas=self.num_antennas,
                          modulation=self.modulation,
                          layer_norm=self.layer_norm)


@dataclass
class PmfSequence:
    """Per-symbol probability vectors over the alphabet."""

    probs: np.ndarray   # (L, M)
    modulation: str

    def __len__(self) -> int:
        return self.probs.shape[0]

    def validate(self) -> None:
        if np.any(self.probs < 0):
            raise DomainError("negative PMF entries")
        if np.max(np.abs(self.probs.sum(axis=1) - 1.0)) > 1e-9:
            raise DomainError("PMF rows must sum to 1")


def featurize(rx: RxBlock) -> np.ndarray:
    """Stack real over imaginary parts of the first L received columns."""
    length = rx.block_length
    if length < 1 or rx.samples.shape[1] < 1:
        raise DomainError("empty received block")
    y = rx.samples[:, :length]
    return np.vstack([y.real, y.imag])


def defeaturize(features: np.ndarray) -> np.ndarray:
    """Inverse of featurize: (2Nr, L) reals back to (Nr, L) complex."""
    if features.shape[0] % 2:
        raise DomainError("feature row count must be even")
    nr = features.shape[0] // 2
    return features[:nr] + 1j * features[nr:]


# ---------------------------------------------------------------------------
# Stack forward / backward
# ---------------------------------------------------------------------------

def _head_pmfs(model: SbrnnModel, flat: np.ndarray):
    """Head application on (N, 2H) features; returns ((N, M) pmfs, cache)."""
    out, cache = nn.dense_forward(model.head, flat)
    if model.head.activation == "sigmoid":
        pmfs = np.concatenate([1.0 - out, out], axis=1)
    else:
        pmfs = out
    return pmfs, cache


def _head_backward(model: SbrnnModel, cache, d_pmfs: np.ndarray):
    if model.head.activation == "sigmoid":
        d_out = (d_pmfs[:, 1] - d_pmfs[:, 0])[:, None]
    else:
        d_out = d_pmfs
    return nn.dense_backward(model.head, cache, d_out)


def _stack_forward(model: SbrnnModel, x0: np.ndarray, layer1_proj=None,
                   need_cache: bool = True):
    """Run the bidirectional stack on steps-first inputs (S, B, 2Nr).

    Returns (pmfs (S, B, M), caches for _stack_backward).  ``layer1_proj``
    optionally carries precomputed input-gate projections for the first
    layer's forward and (already reversed) backward directions.  Inference
    callers pass ``need_cache=False`` to skip retaining activations.
    """
    steps, batch, _ = x0.shape
    x = x0
    layer_caches = []
    for idx, (fwd, bwd) in enumerate(model.layers):
        proj = layer1_proj if idx == 0 else None
        if need_cache:
            proj_f, proj_b = proj if proj is not None else (None, None)
            h_f, _, cache_f = nn.lstm_forward(fwd, x, input_proj=proj_f)
            h_b_rev, _, cache_b = nn.lstm_forward(bwd, x[::-1],
                                                  input_proj=proj_b)
        else:
            h_f, h_b_rev = nn.bilstm_infer(fwd, bwd, x, input_proj=proj)
            cache_f = cache_b = None
        ln_f = ln_b = None
        if model.layer_norm:
            h_f, ln_f = nn.layer_norm_forward(h_f)
            h_b_rev, ln_b = nn.layer_norm_forward(h_b_rev)
        x = np.concatenate([h_f, h_b_rev[::-1]], axis=2)
        layer_caches.append((cache_f, cache_b, ln_f, ln_b))
    flat = x.reshape(steps * batch, -1)
    pmfs, head_cache = _head_pmfs(model, flat)
    return pmfs.reshape(steps, batch, -1), (layer_caches, head_cache)


def _stack_backward(model: SbrnnModel, caches, d_pmfs: np.ndarray):
    """Gradients of _stack_forward in param_arrays() order."""
    layer_caches, head_cache = caches
    steps, batch, m = d_pmfs.shape
    (d_head_w, d_head_b), d_flat = _head_backward(
        model, head_cache, d_pmfs.reshape(steps * batch, m))
    d_x = d_flat.reshape(steps, batch, -1)

    h = model.hidden_size
    grads_per_layer = [None] * NUM_LAYERS
    for idx in range(NUM_LAYERS - 1, -1, -1):
        cache_f, cache_b, ln_f, ln_b = layer_caches[idx]
        d_h_f = d_x[:, :, :h]
        d_h_b_rev = d_x[::-1, :, h:]
        if model.layer_norm:
            d_h_f = nn.layer_norm_backward(ln_f, d_h_f)
            d_h_b_rev = nn.layer_norm_backward(ln_b, d_h_b_rev)
        g_f, d_in_f, _, _ = nn.lstm_backward(cache_f, np.ascontiguousarray(d_h_f))
        g_b, d_in_b_rev, _, _ = nn.lstm_backward(
            cache_b, np.ascontiguousarray(d_h_b_rev))
        grads_per_layer[idx] = (g_f, g_b)
        d_x = d_in_f + d_in_b_rev[::-1]

    grads = []
    for g_f, g_b in grads_per_layer:
        grads.extend(g_f.arrays())
        grads.extend(g_b.arrays())
    grads.extend([d_head_w, d_head_b])
    return grads


def window_forward(model: SbrnnModel, window: np.ndarray) -> np.ndarray:
    """PMFs for one feature window (2Nr, W'); returns (W', M).

    W' may be shorter than the model window (short-block degeneracy); the
    recurrence simply unrolls fewer steps.
    """
    if window.ndim != 2 or window.shape[0] != model.feature_size:
        raise DomainError(
            f"window must be ({model.feature_size}, steps), got {window.shape}")
    if window.shape[1] < 1:
        raise DomainError("empty window")
    x0 = window.T[:, None, :]  # (W', 1, 2Nr)
    pmfs, _ = _stack_forward(model, np.ascontiguousarray(x0), need_cache=False)
    return pmfs[:, 0, :]


def loss_and_grads(model: SbrnnModel, windows: np.ndarray,
                   targets: np.ndarray):
    """Mean cross-entropy over all window positions, with exact gradients.

    ``windows`` is (B, W', 2Nr) and ``targets`` (B, W') symbol indices.
    Returns (loss, gradient arrays in param_arrays() order).
    """
    b, steps, _ = windows.shape
    x0 = np.ascontiguousarray(np.swapaxes(windows, 0, 1))
    pmfs, caches = _stack_forward(model, x0)
    flat = pmfs.reshape(steps * b, -1)
    labels = np.swapaxes(targets, 0, 1).reshape(-1)
    losses = nn.cross_entropy(flat, labels)
    loss = float(losses.mean())
    d_flat = nn.cross_entropy_backward(flat, labels,
                                       np.full(len(labels), 1.0 / len(labels)))
    grads = _stack_backward(model, caches, d_flat.reshape(steps, b, -1))
    return loss, grads


# ---------------------------------------------------------------------------
# Sliding detection
# ---------------------------------------------------------------------------

def _window_starts(length: int, window: int) -> tuple[int, int]:
    """Effective window length and number of sliding starts."""
    w_eff = min(window, length)
    return w_eff, length - w_eff + 1


def detect(model: SbrnnModel, rx: RxBlock) -> PmfSequence:
    """Slide the detector over a received block and average covering PMFs.

    Every start position j gets a window forward pass; symbol k's final PMF
    is the mean of the window PMFs at position k over all windows covering k.
    Blocks shorter than the window fall back to a single short window.
    """
    feats = featurize(rx)
    length = rx.block_length
    w_eff, n_windows = _window_starts(length, model.window)
    cols = np.ascontiguousarray(feats.T)          # (L, 2Nr)

    # Layer-1 input projections are per-column; windows share columns, so
    # project once and hand the stack zero-copy sliding views.
    fwd1, bwd1 = model.layers[0]
    wx_f, _, _ = fwd1._packed()
    wx_b, _, _ = bwd1._packed()
    slide = np.lib.stride_tricks.sliding_window_view
    proj_f = slide(cols @ wx_f, w_eff, axis=0).transpose(2, 0, 1)
    proj_b = slide(cols @ wx_b, w_eff, axis=0).transpose(2, 0, 1)[::-1]
    x0 = slide(cols, w_eff, axis=0).transpose(2, 0, 1)      # (W', B, 2Nr)

    pmfs, _ = _stack_forward(model, x0, layer1_proj=(proj_f, proj_b),
                             need_cache=False)

    m = model.alphabet
    acc = np.zeros((length, m))
    counts = np.zeros(length)
    for t in range(w_eff):
        acc[t:t + n_windows] += pmfs[t]
        counts[t:t + n_windows] += 1.0
    out = PmfSequence(probs=acc / counts[:, None], modulation=model.modulation)
    out.validate()
    return out


def detect_streaming(model: SbrnnModel, rx: RxBlock):
    """Yield (k, pmf_k) pairs as soon as each symbol's estimate is final.

    Runs one window forward pass per start position, in arrival order, and
    emits symbol k once the last window covering it has been consumed.
    Averages identically to `detect`.
    """
    feats = featurize(rx)
    length = rx.block_length
    w_eff, n_windows = _window_starts(length, model.window)
    m = model.alphabet
    acc = np.zeros((length, m))
    counts = np.zeros(length)
    for j in range(n_windows):
        pmfs = window_forward(model, feats[:, j:j + w_eff])
        acc[j:j + w_eff] += pmfs
        counts[j:j + w_eff] += 1.0
        if j < n_windows - 1:
            yield j, acc[j] / counts[j]
        else:
            for k in range(j, length):
                yield k, acc[k] / counts[k]


def hard_decide(pmfs: PmfSequence) -> SymbolBlock:
    """Per-symbol argmax; exact ties resolve to the lowest index."""
    indices = np.argmax(pmfs.probs, axis=1)
    points = constellation(pmfs.modulation)[indices]
    return SymbolBlock(indices=indices, modulation=pmfs.modulation,
                       points=points)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 25
    learning_rate: float = 1e-3
    batch_size: int = 32
    val_fraction: float = 0.1
    seed: int = 0
    eval_every_samples: int | None = None   # None: evaluate once per epoch
    accuracy_threshold: float | None = None
    stop_at_threshold: bool = False
    max_samples: int | None = None
    max_val_blocks: int = 32
    restore_best: bool = True
    lr_milestones: tuple = ()               # epochs at which to decay the rate
    lr_decay: float = 0.3
    windows_per_block: int = 1              # window draws per block per epoch


@dataclass
class HistoryRow:
    epoch: int
    mean_loss: float
    val_accuracy: float
    samples_seen: int


@dataclass
class TrainResult:
    model: SbrnnModel
    history: list[HistoryRow] = field(default_factory=list)
    samples_to_threshold: int | None = None
    train_split: str = ""
    val_split: str = ""


def _val_accuracy(model: SbrnnModel, feats: list[np.ndarray],
                  labels: list[np.ndarray], rx_blocks: list[RxBlock]) -> float:
    correct = 0
    total = 0
    for rx, lab in zip(rx_blocks, labels):
        decided = hard_decide(detect(model, rx))
        correct += int(np.sum(decided.indices == lab))
        total += len(lab)
    return correct / total if total else 0.0


def _train_loop(model: SbrnnModel, dataset: Dataset,
                config: TrainConfig) -> TrainResult:
    if len(dataset) == 0:
        raise DomainError("empty training dataset")
    if dataset.num_antennas != model.num_antennas:
        raise DomainError("dataset antenna count does not match model")
    if dataset.modulation != model.modulation:
        raise DomainError("dataset modulation does not match model")

    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    n = len(dataset)
    n_val = int(round(config.val_fraction * n)) if config.val_fraction > 0 else 0
    n_val = min(max(n_val, 1 if config.val_fraction > 0 else 0), n - 1) if n > 1 else 0
    train_ids = list(range(n - n_val))
    val_ids = list(range(n - n_val, n))

    feats = [np.ascontiguousarray(featurize(rx).T) for _, rx in dataset.pairs]
    labels = [blk.indices for blk, _ in dataset.pairs]
    val_rx = [dataset.pairs[i][1] for i in val_ids[:config.max_val_blocks]]
    val_labels = [labels[i] for i in val_ids[:config.max_val_blocks]]

    length = dataset.block_length
    w_eff, _ = _window_starts(length, model.window)
    n_starts = length - w_eff + 1
    step_idx = np.arange(w_eff)

    params = model.param_arrays()
    state = nn.AdamState.init(params, lr=config.learning_rate)

    history: list[HistoryRow] = []
    samples_seen = 0
    samples_to_threshold: int | None = None
    best_acc = -1.0
    best_params: list[np.ndarray] | None = None
    next_eval = 0 if config.eval_every_samples else None

    def evaluate(epoch: int, mean_loss: float) -> float:
        nonlocal samples_to_threshold, best_acc, best_params
        acc = _val_accuracy(model, feats, val_labels, val_rx) if val_rx else 0.0
        history.append(HistoryRow(epoch=epoch, mean_loss=mean_loss,
                                  val_accuracy=acc, samples_seen=samples_seen))
        if (config.accuracy_threshold is not None
                and samples_to_threshold is None
                and acc >= config.accuracy_threshold):
            samples_to_threshold = samples_seen
        if config.restore_best and acc > best_acc:
            best_acc = acc
            best_params = [p.copy() for p in params]
        return acc

    if config.accuracy_threshold is not None:
        evaluate(0, float("nan"))

    done = False
    for epoch in range(1, config.epochs + 1):
        if done:
            break
        if epoch in config.lr_milestones:
            state.lr *= config.lr_decay
        pool = np.repeat(np.arange(len(train_ids)),
                         max(1, config.windows_per_block))
        order = rng.permutation(pool)
        starts = rng.integers(0, n_starts, size=len(order))
        loss_sum = 0.0
        n_batches = 0
        for lo in range(0, len(order), config.batch_size):
            sel = order[lo:lo + config.batch_size]
            windows = np.empty((len(sel), w_eff, model.feature_size))
            targets = np.empty((len(sel), w_eff), dtype=np.int64)
            for row, o in enumerate(sel):
                block_id = train_ids[o]
                s = starts[lo + row]
                windows[row] = feats[block_id][s + step_idx]
                targets[row] = labels[block_id][s + step_idx]
            loss, grads = loss_and_grads(model, windows, targets)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"samples_seen {samples_seen}")
            nn.adam_step(params, grads, state)
            samples_seen += len(sel)
            loss_sum += loss * len(sel)
            n_batches += 1

            if next_eval is not None and samples_seen >= next_eval:
                evaluate(epoch, loss_sum / max(samples_seen, 1))
                next_eval = (samples_seen // config.eval_every_samples + 1) \
                    * config.eval_every_samples
                if (config.stop_at_threshold
                        and samples_to_threshold is not None):
                    done = True
                    break
            if config.max_samples is not None and samples_seen >= config.max_samples:
                done = True
                break
        if next_eval is None and n_batches:
            evaluate(epoch, loss_sum / (n_batches * config.batch_size
                                        if n_batches else 1))
            if config.stop_at_threshold and samples_to_threshold is not None:
                done = True

    if config.restore_best and best_params is not None:
        for p, b in zip(params, best_params):
            np.copyto(p, b)

    return TrainResult(model=model, history=history,
                       samples_to_threshold=samples_to_threshold,
                       train_split=f"{dataset.split_id}:train[0:{len(train_ids)}]",
                       val_split=f"{dataset.split_id}:val[{len(train_ids)}:{n}]")


def train(model: SbrnnModel, dataset: Dataset,
          config: TrainConfig) -> TrainResult:
    """Train in place on random window draws; returns model plus history.

    Each epoch draws one uniformly random window start per training block;
    the loss is the mean cross-entropy over all positions of each window.
    Deterministic for a fixed config seed.
    """
    return _train_loop(model, dataset, config)


def fine_tune(model: SbrnnModel, dataset: Dataset,
              config: TrainConfig) -> TrainResult:
    """Warm-started training; reports samples consumed to reach the threshold."""
    if dataset.num_antennas != model.num_antennas:
        raise CheckpointError("checkpoint antenna count does not match dataset")
    if alphabet_size(dataset.modulation) != model.alphabet:
        raise CheckpointError("checkpoint alphabet does not match dataset")
    if config.accuracy_threshold is None:
        config = replace(config, accuracy_threshold=0.9)
    return _train_loop(model, dataset, config)


def history_to_csv(history: list[HistoryRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# mmwlink training-history v1\n")
        fh.write("epoch,mean_loss,val_accuracy,samples_seen\n")
        for row in history:
            fh.write(f"{row.epoch},{row.mean_loss:.10g},"
                     f"{row.val_accuracy:.10g},{row.samples_seen}\n")


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: SbrnnModel, path) -> None:
    """Versioned header plus flat float64 parameters in canonical order."""
    params = model.param_arrays()
    flat = np.concatenate([p.reshape(-1) for p in params])
    header = {
        "version": _CKPT_VERSION,
        "kind": "sbrnn",
        "layers": NUM_LAYERS,
        "hidden": model.hidden_size,
        "window": model.window,
        "alphabet": model.alphabet,
        "num_antennas": model.num_antennas,
        "activation": model.head.activation,
        "modulation": model.modulation,
        "layer_norm": model.layer_norm,
        "param_count": int(flat.size),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(flat.astype("<f8").tobytes())


def load_checkpoint(path) -> SbrnnModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != _CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version")
        header = json.loads(fh.read(hlen).decode())
        flat = np.frombuffer(fh.read(), dtype="<f8")
    if flat.size != header["param_count"]:
        raise CheckpointError(f"{path}: truncated parameter payload")

    model = SbrnnModel.init(header["num_antennas"], header["modulation"],
                            window=header["window"], hidden=header["hidden"],
                            rng=np.random.default_rng(0),
                            layer_norm=header["layer_norm"])
    if model.head.activation != header["activation"]:
        raise CheckpointError(f"{path}: head activation mismatch")
    offset = 0
    for p in model.param_arrays():
        chunk = flat[offset:offset + p.size]
        if chunk.size != p.size:
            raise CheckpointError(f"{path}: parameter payload too small")
        np.copyto(p, chunk.reshape(p.shape))
        offset += p.size
    if offset != flat.size:
        raise CheckpointError(f"{path}: parameter payload too large")
    return model

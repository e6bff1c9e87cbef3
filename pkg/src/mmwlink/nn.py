"""Minimal neural-network substrate: LSTM cells, dense heads, Adam, BPTT.

Everything is float64 numpy so gradient checks and oracle comparisons stay
sharp.  Sequences are laid out steps-first, (S, B, D).  Gate weights follow
the layout [input block | hidden block], i.e. each gate matrix has shape
(H, I + H) and multiplies the concatenation [x; h].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from mmwlink.errors import DomainError

_GATES = ("i", "f", "g", "o")
_PACK_ORDER = ("i", "f", "o", "g")


def sigmoid(x):
    # tanh form of the logistic: stable for any input, never overflows.
    return 0.5 * (np.tanh(0.5 * np.asarray(x)) + 1.0)


@dataclass
class LstmLayerParams:
    """Gate weights (input, forget, cell candidate, output) and biases."""

    w_i: np.ndarray  # (H, I + H)
    w_f: np.ndarray
    w_g: np.ndarray
    w_o: np.ndarray
    b_i: np.ndarray  # (H,)
    b_f: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.w_i.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_i.shape[1] - self.w_i.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [self.w_i, self.w_f, self.w_g, self.w_o,
                self.b_i, self.b_f, self.b_g, self.b_o]

    def validate(self) -> None:
        h = self.hidden_size
        width = self.w_i.shape[1]
        for name in _GATES:
            w = getattr(self, f"w_{name}")
            b = getattr(self, f"b_{name}")
            if w.shape != (h, width) or b.shape != (h,):
                raise DomainError("inconsistent LSTM parameter shapes")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise DomainError("non-finite LSTM parameters")

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmLayerParams":
        width = input_size + hidden_size
        return cls(*[np.zeros((hidden_size, width)) for _ in _GATES],
                   *[np.zeros(hidden_size) for _ in _GATES])

    @classmethod
    def init(cls, input_size: int, hidden_size: int,
             rng: np.random.Generator, forget_bias: float = 1.0
             ) -> "LstmLayerParams":
        """Uniform +-1/sqrt(H) weights, forget-gate bias offset for stability."""
        k = 1.0 / np.sqrt(hidden_size)
        width = input_size + hidden_size
        weights = [rng.uniform(-k, k, size=(hidden_size, width)) for _ in _GATES]
        biases = [np.zeros(hidden_size) for _ in _GATES]
        biases[1] = np.full(hidden_size, forget_bias)
        return cls(*weights, *biases)

    def _packed(self):
        """(Wx (I, 4H), Wh (H, 4H), b (4H,)) for batched gate matmuls.

        Packed gate order is (i, f, o, g): the three sigmoid gates are
        contiguous so the forward pass applies the logistic in one call.
        """
        h = self.hidden_size
        i = self.input_size
        wx = np.concatenate([getattr(self, f"w_{n}")[:, :i].T
                             for n in _PACK_ORDER], axis=1)
        wh = np.concatenate([getattr(self, f"w_{n}")[:, i:].T
                             for n in _PACK_ORDER], axis=1)
        b = np.concatenate([getattr(self, f"b_{n}") for n in _PACK_ORDER])
        return wx, wh, b


@dataclass
class LstmCache:
    params: LstmLayerParams
    inputs: np.ndarray
    acts: np.ndarray        # (S, B, 4H) post-activation gates, packed order
    cells: np.ndarray
    tanh_cells: np.ndarray
    hidden: np.ndarray
    h0: np.ndarray
    c0: np.ndarray


def lstm_input_projection(params: LstmLayerParams, inputs: np.ndarray) -> np.ndarray:
    """Input-to-gate preactivations, computable once for shared inputs."""
    wx, _, _ = params._packed()
    return inputs @ wx


def lstm_forward(params: LstmLayerParams, inputs: np.ndarray,
                 h0: np.ndarray | None = None, c0: np.ndarray | None = None,
                 input_proj: np.ndarray | None = None,
                 need_cache: bool = True):
    """Run the LSTM recurrence over a (S, B, I) input sequence.

    Returns (hidden (S, B, H), (h_last, c_last), cache).  ``input_proj`` may
    carry precomputed ``inputs @ Wx`` preactivations, (S, B, 4H); the hidden
    contribution and biases are always applied here.  With ``need_cache``
    False the per-step activations are not retained (inference only; the
    returned cache is None and cannot feed lstm_backward).
    """
    if inputs.ndim != 3:
        raise DomainError("inputs must have shape (steps, batch, features)")
    steps, batch, feat = inputs.shape
    if feat != params.input_size:
        raise DomainError(
            f"input feature size {feat} != layer input size {params.input_size}")
    h = params.hidden_size
    wx, wh, b = params._packed()

    h_prev = np.zeros((batch, h)) if h0 is None else h0
    c_prev = np.zeros((batch, h)) if c0 is None else c0
    h0_arr, c0_arr = h_prev, c_prev

    if input_proj is None:
        input_proj = inputs @ wx
    elif input_proj.shape != (steps, batch, 4 * h):
        raise DomainError("input projection shape mismatch")
    preact = input_proj + b

    hidden = np.empty((steps, batch, h))
    if need_cache:
        cells = np.empty((steps, batch, h))
        tanh_cells = np.empty((steps, batch, h))
        acts = np.empty((steps, batch, 4 * h))
    else:
        a_buf = np.empty((batch, 4 * h))
        c_buf = np.empty((batch, h))
        tc_buf = np.empty((batch, h))
    z = np.empty((batch, 4 * h))
    ig_buf = np.empty((batch, h))

    h3 = 3 * h
    for t in range(steps):
        np.dot(h_prev, wh, out=z)
        z += preact[t]
        a = acts[t] if need_cache else a_buf
        # Sigmoid gates via the tanh form, written in place.
        zs = z[:, :h3]
        zs *= 0.5
        sig = a[:, :h3]
        np.tanh(zs, out=sig)
        sig += 1.0
        sig *= 0.5
        np.tanh(z[:, h3:], out=a[:, h3:])
        gi, gf, go, gg = a[:, :h], a[:, h:2 * h], a[:, 2 * h:h3], a[:, h3:]
        c = cells[t] if need_cache else c_buf
        np.multiply(gf, c_prev, out=c)
        np.multiply(gi, gg, out=ig_buf)
        c += ig_buf
        tc = tanh_cells[t] if need_cache else tc_buf
        np.tanh(c, out=tc)
        np.multiply(go, tc, out=hidden[t])
        c_prev = c
        h_prev = hidden[t]

    if need_cache:
        cache = LstmCache(params=params, inputs=inputs, acts=acts, cells=cells,
                          tanh_cells=tanh_cells, hidden=hidden,
                          h0=h0_arr, c0=c0_arr)
    else:
        cache = None
    if steps == 0:
        return hidden, (h0_arr, c0_arr), cache
    return hidden, (h_prev.copy() if not need_cache else h_prev,
                    c_prev.copy() if not need_cache else c_prev), cache


def lstm_backward(cache: LstmCache, d_hidden: np.ndarray,
                  d_h_last: np.ndarray | None = None,
                  d_c_last: np.ndarray | None = None):
    """Exact gradients of lstm_forward.

    Returns (param grads as LstmLayerParams, d_inputs, d_h0, d_c0).
    """
    params = cache.params
    steps, batch, _ = cache.inputs.shape
    h = params.hidden_size
    h3 = 3 * h
    i_sz = params.input_size
    if d_hidden.shape != cache.hidden.shape:
        raise DomainError("upstream gradient does not match cached forward pass")
    wx, wh, _ = params._packed()

    dh_next = np.zeros((batch, h)) if d_h_last is None else d_h_last.copy()
    dc_next = np.zeros((batch, h)) if d_c_last is None else d_c_last.copy()

    dz_all = np.empty((steps, batch, 4 * h))
    for t in range(steps - 1, -1, -1):
        a = cache.acts[t]
        gi, gf, go, gg = a[:, :h], a[:, h:2 * h], a[:, 2 * h:h3], a[:, h3:]
        tc = cache.tanh_cells[t]
        c_prev = cache.cells[t - 1] if t > 0 else cache.c0

        dh = d_hidden[t] + dh_next
        do = dh * tc
        dc = dc_next + dh * go * (1.0 - tc * tc)
        dz = dz_all[t]
        dz[:, :h] = (dc * gg) * gi * (1.0 - gi)
        dz[:, h:2 * h] = (dc * c_prev) * gf * (1.0 - gf)
        dz[:, 2 * h:h3] = do * go * (1.0 - go)
        dz[:, h3:] = (dc * gi) * (1.0 - gg * gg)
        dc_next = dc * gf
        dh_next = dz @ wh.T

    # Weight gradients batch over all steps in two GEMMs.
    dz_flat = dz_all.reshape(steps * batch, 4 * h)
    x_flat = cache.inputs.reshape(steps * batch, i_sz)
    if steps:
        h_prev_all = np.concatenate([cache.h0[None], cache.hidden[:-1]], axis=0)
    else:
        h_prev_all = np.empty((0, batch, h))
    d_wx = x_flat.T @ dz_flat
    d_wh = h_prev_all.reshape(steps * batch, h).T @ dz_flat
    d_b = dz_flat.sum(axis=0)
    d_inputs = (dz_flat @ wx.T).reshape(cache.inputs.shape)

    grads = LstmLayerParams.zeros(i_sz, h)
    for k, name in enumerate(_PACK_ORDER):
        cols = slice(k * h, (k + 1) * h)
        getattr(grads, f"w_{name}")[:, :i_sz] = d_wx[:, cols].T
        getattr(grads, f"w_{name}")[:, i_sz:] = d_wh[:, cols].T
        np.copyto(getattr(grads, f"b_{name}"), d_b[cols])
    return grads, d_inputs, dh_next, dc_next


def bilstm_infer(params_f: LstmLayerParams, params_b: LstmLayerParams,
                 inputs: np.ndarray, input_proj=None):
    """Inference-only bidirectional pass, both directions fused per step.

    ``inputs`` is (S, B, I); the backward direction consumes the reversed
    sequence.  Returns (h_forward (S, B, H), h_backward_reversed (S, B, H)),
    the latter still in reversed time order.  Mathematically identical to two
    lstm_forward calls; the sigmoid gates are evaluated through one tanh over
    pre-scaled gate preactivations, and the two directions share each step's
    batched matmul.  No cache is produced.

    ``input_proj`` may carry ((S, B, 4H), (S, B, 4H)) *unscaled* input
    projections for the forward and reversed-backward directions.
    """
    if inputs.ndim != 3:
        raise DomainError("inputs must have shape (steps, batch, features)")
    steps, batch, feat = inputs.shape
    if feat != params_f.input_size or feat != params_b.input_size:
        raise DomainError("input feature size does not match layer")
    h = params_f.hidden_size
    if params_b.hidden_size != h:
        raise DomainError("direction hidden sizes differ")
    h3 = 3 * h

    # Scale so one tanh yields s = 2*sigmoid(z)-1 for the i/f/o blocks and
    # tanh(z) for the candidate block; then sigma(z) = (s + 1) / 2.
    scale = np.concatenate([np.full(h3, 0.5), np.ones(h)])
    packed = []
    for p in (params_f, params_b):
        wx, wh, b = p._packed()
        packed.append((wx * scale, wh * scale, b * scale))
    whp = np.stack([packed[0][1], packed[1][1]])          # (2, H, 4H)

    preact = np.empty((steps, 2, batch, 4 * h))
    if input_proj is None:
        preact[:, 0] = inputs @ packed[0][0]
        preact[:, 1] = inputs[::-1] @ packed[1][0]
    else:
        np.multiply(input_proj[0], scale, out=preact[:, 0])
        np.multiply(input_proj[1], scale, out=preact[:, 1])
    preact[:, 0] += packed[0][2]
    preact[:, 1] += packed[1][2]

    hidden = np.empty((steps, 2, batch, h))
    h_prev = np.zeros((2, batch, h))
    c_prev = np.zeros((2, batch, h))
    z = np.empty((2, batch, 4 * h))
    tmp = np.empty((2, batch, h))
    c = np.empty((2, batch, h))
    tc = np.empty((2, batch, h))

    for t in range(steps):
        np.matmul(h_prev, whp, out=z)
        z += preact[t]
        np.tanh(z, out=z)
        s_i, s_f = z[:, :, :h], z[:, :, h:2 * h]
        s_o, g = z[:, :, 2 * h:h3], z[:, :, h3:]
        # c = ((s_f + 1) c_prev + (s_i + 1) g) / 2
        np.multiply(s_f, c_prev, out=c)
        c += c_prev
        np.multiply(s_i, g, out=tmp)
        c += tmp
        c += g
        c *= 0.5
        np.tanh(c, out=tc)
        hh = hidden[t]
        np.multiply(s_o, tc, out=hh)
        hh += tc
        hh *= 0.5
        c_prev, c = c, c_prev
        h_prev = hh

    return hidden[:, 0], hidden[:, 1]


# ---------------------------------------------------------------------------
# Layer normalization (optional "normalized outputs" variant)
# ---------------------------------------------------------------------------

_LN_EPS = 1e-5


def layer_norm_forward(x: np.ndarray):
    """Normalize the last axis to zero mean, unit variance (no learned scale)."""
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    y = (x - mean) * inv
    return y, (y, inv, x.shape[-1])


def layer_norm_backward(cache, d_y: np.ndarray) -> np.ndarray:
    y, inv, n = cache
    dy_mean = d_y.mean(axis=-1, keepdims=True)
    proj = (d_y * y).mean(axis=-1, keepdims=True)
    return inv * (d_y - dy_mean - y * proj)


# ---------------------------------------------------------------------------
# Dense output heads
# ---------------------------------------------------------------------------

@dataclass
class DenseHead:
    """Linear map plus softmax (PMF over M symbols) or sigmoid (scalar)."""

    weights: np.ndarray  # (M_out, D)
    bias: np.ndarray     # (M_out,)
    activation: str      # "softmax" | "sigmoid"

    def arrays(self) -> list[np.ndarray]:
        return [self.weights, self.bias]

    @classmethod
    def init(cls, input_size: int, output_size: int, activation: str,
             rng: np.random.Generator) -> "DenseHead":
        if activation not in ("softmax", "sigmoid"):
            raise DomainError(f"unknown head activation {activation!r}")
        k = 1.0 / np.sqrt(input_size)
        return cls(weights=rng.uniform(-k, k, size=(output_size, input_size)),
                   bias=np.zeros(output_size), activation=activation)


def dense_forward(head: DenseHead, z: np.ndarray):
    """Apply the head to (B, D) features; returns ((B, M_out) probs, cache)."""
    if z.ndim != 2 or z.shape[1] != head.weights.shape[1]:
        raise DomainError("head input shape mismatch")
    logits = z @ head.weights.T + head.bias
    if head.activation == "softmax":
        shifted = logits - logits.max(axis=1, keepdims=True)
        ex = np.exp(shifted)
        probs = ex / ex.sum(axis=1, keepdims=True)
    else:
        probs = sigmoid(logits)
    return probs, (z, probs)


def dense_backward(head: DenseHead, cache, d_probs: np.ndarray):
    """Returns ((d_weights, d_bias), d_z)."""
    z, probs = cache
    if head.activation == "softmax":
        inner = (d_probs * probs).sum(axis=1, keepdims=True)
        d_logits = probs * (d_probs - inner)
    else:
        d_logits = d_probs * probs * (1.0 - probs)
    d_w = d_logits.T @ z
    d_b = d_logits.sum(axis=0)
    d_z = d_logits @ head.weights
    return (d_w, d_b), d_z


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

_CE_FLOOR = 1e-12


def cross_entropy(pmf: np.ndarray, true_index):
    """-ln pmf[true_index], floored at 1e-12 before the log.

    Accepts a single PMF (1-D) with an int label, or a (B, M) batch with a
    (B,) label array; returns a scalar or (B,) losses accordingly.
    """
    if pmf.ndim == 1:
        return float(-np.log(max(pmf[int(true_index)], _CE_FLOOR)))
    picked = pmf[np.arange(pmf.shape[0]), np.asarray(true_index)]
    return -np.log(np.maximum(picked, _CE_FLOOR))


def cross_entropy_backward(pmf: np.ndarray, true_index, d_loss=1.0) -> np.ndarray:
    """Gradient of cross_entropy w.r.t. the PMF entries (zero in the clamp)."""
    single = pmf.ndim == 1
    pmf2 = np.atleast_2d(pmf)
    idx = np.atleast_1d(np.asarray(true_index, dtype=np.int64))
    dl = np.broadcast_to(np.asarray(d_loss, dtype=np.float64), idx.shape)
    d = np.zeros_like(pmf2)
    rows = np.arange(pmf2.shape[0])
    picked = pmf2[rows, idx]
    live = picked > _CE_FLOOR
    d[rows[live], idx[live]] = -dl[live] / picked[live]
    return d[0] if single else d


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: list[np.ndarray], lr: float = 1e-3,
             beta1: float = 0.9, beta2: float = 0.999,
             eps: float = 1e-8) -> "AdamState":
        return cls(step=0,
                   m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params],
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState):
    """One bias-corrected Adam update, applied to the arrays in place."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise DomainError("parameter/gradient/state length mismatch")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise DomainError("gradient shape mismatch")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------

@dataclass
class FiniteDiffReport:
    max_rel_error: float
    worst_array: int
    worst_coord: tuple
    checked: int


def finite_diff_check(loss_and_grads: Callable[[], tuple],
                      params: list[np.ndarray],
                      rng: np.random.Generator, *,
                      samples_per_array: int = 4,
                      step: float = 1e-5,
                      denom_floor: float = 1e-6) -> FiniteDiffReport:
    """Compare analytic gradients to central differences on sampled coords.

    ``loss_and_grads`` evaluates the model at the current parameter values and
    returns (scalar loss, gradient arrays matching ``params``).  Relative
    error uses max(|analytic|, |numeric|, denom_floor) as the scale.
    """
    _, grads = loss_and_grads()
    if len(grads) != len(params):
        raise DomainError("gradient list does not match parameter list")

    worst = (0.0, -1, ())
    checked = 0
    for a_idx, (p, g) in enumerate(zip(params, grads)):
        n = p.size
        coords = rng.choice(n, size=min(samples_per_array, n), replace=False)
        flat = p.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            loss_hi, _ = loss_and_grads()
            flat[c] = orig - step
            loss_lo, _ = loss_and_grads()
            flat[c] = orig
            numeric = (loss_hi - loss_lo) / (2.0 * step)
            analytic = g.reshape(-1)[c]
            scale = max(abs(numeric), abs(analytic), denom_floor)
            rel = abs(numeric - analytic) / scale
            checked += 1
            if rel > worst[0]:
                worst = (rel, a_idx, np.unravel_index(c, p.shape))
    return FiniteDiffReport(max_rel_error=worst[0], worst_array=worst[1],
                            worst_coord=worst[2], checked=checked)

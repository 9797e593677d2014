"""Decoder-style transformer scoring sentences for extraction.

Pre-norm layers with rotary position embeddings, low-rank adapters on the
q/k/v/o projections, a frozen gated MLP, sentence mean-pooling, and a
sigmoid head.  Forward and reverse passes are written out by hand in numpy;
gradients flow only to adapter A/B matrices and the classifier.

Weight layout convention: every projection matrix W has shape
(out_features, in_features) and acts on row-vector activations as x @ W.T.
Adapters follow the same convention: A is (rank, in), B is (out, rank),
applied as x @ A.T @ B.T, so the rank-r update B @ A is never materialized.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import (
    ConfigError,
    ContextLengthError,
    DegenerateSpanError,
    ShapeError,
    ValidationError,
)
from .numerics import rms_norm_rows, rms_norm_rows_backward, softmax_rows

RMS_EPS = 1e-6
DEFAULT_BLOCK_SIZE = 64

ATTENTION_MODES = ("causal", "bidirectional")


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int
    n_layers: int
    n_heads: int
    d_ff: int
    pretrain_context: int
    runtime_context: int
    rope_scaling: Optional[float] = None
    rope_base: float = 10000.0
    lora_rank: int = 8
    attention_mode: str = "causal"

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff",
                     "pretrain_context", "runtime_context", "lora_rank"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must cover PAD and UNK (>= 2)")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if (self.d_model // self.n_heads) % 2 != 0:
            raise ConfigError(
                f"head_dim {self.d_model // self.n_heads} must be even to pair "
                "dimensions for rotation"
            )
        # Adapted matrices are square (d_model x d_model), so low-rank means
        # rank at most half of d_model.
        if self.lora_rank > self.d_model // 2:
            raise ConfigError(
                f"lora_rank {self.lora_rank} too large for d_model {self.d_model} "
                f"(max {self.d_model // 2})"
            )
        if self.rope_base <= 0:
            raise ConfigError(f"rope_base must be positive, got {self.rope_base}")
        ratio = self.pretrain_context / self.runtime_context
        if self.rope_scaling is None:
            self.rope_scaling = ratio
        elif abs(self.rope_scaling - ratio) > 1e-12:
            raise ConfigError(
                f"rope_scaling {self.rope_scaling} inconsistent with "
                f"pretrain_context/runtime_context = {ratio}"
            )
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigError(
                f"attention_mode must be one of {ATTENTION_MODES}, "
                f"got {self.attention_mode!r}"
            )

    @property
    def head_dim(self):
        return self.d_model // self.n_heads

    def as_dict(self):
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "pretrain_context": self.pretrain_context,
            "runtime_context": self.runtime_context,
            "rope_scaling": self.rope_scaling,
            "rope_base": self.rope_base,
            "lora_rank": self.lora_rank,
            "attention_mode": self.attention_mode,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class LoraAdapter:
    A: np.ndarray
    B: np.ndarray

    def check_against(self, base):
        out_f, in_f = base.shape
        r = self.A.shape[0]
        if self.A.shape != (r, in_f) or self.B.shape != (out_f, r):
            raise ShapeError(
                f"adapter shapes A{self.A.shape} B{self.B.shape} inconsistent "
                f"with base {base.shape}"
            )


@dataclass
class DecoderLayerParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    lora_q: LoraAdapter
    lora_k: LoraAdapter
    lora_v: LoraAdapter
    lora_o: LoraAdapter
    w_in: np.ndarray
    w_out: np.ndarray
    norm1_gain: np.ndarray
    norm2_gain: np.ndarray

    def adapters(self):
        return (("lora_q", self.lora_q), ("lora_k", self.lora_k),
                ("lora_v", self.lora_v), ("lora_o", self.lora_o))


@dataclass
class ModelParams:
    embedding: np.ndarray
    layers: list
    final_norm_gain: np.ndarray
    classifier_w: np.ndarray
    classifier_b: np.ndarray

    def trainable_items(self, include_adapters=True):
        """(name, array) pairs for exactly the tensors that receive gradients."""
        items = []
        if include_adapters:
            for i, layer in enumerate(self.layers):
                for tag, adapter in layer.adapters():
                    items.append((f"layers.{i}.{tag}.A", adapter.A))
                    items.append((f"layers.{i}.{tag}.B", adapter.B))
        items.append(("classifier.w_c", self.classifier_w))
        items.append(("classifier.b", self.classifier_b))
        return items

    def frozen_items(self):
        items = [("embedding", self.embedding)]
        for i, layer in enumerate(self.layers):
            items.extend([
                (f"layers.{i}.w_q", layer.w_q),
                (f"layers.{i}.w_k", layer.w_k),
                (f"layers.{i}.w_v", layer.w_v),
                (f"layers.{i}.w_o", layer.w_o),
                (f"layers.{i}.w_in", layer.w_in),
                (f"layers.{i}.w_out", layer.w_out),
                (f"layers.{i}.norm1_gain", layer.norm1_gain),
                (f"layers.{i}.norm2_gain", layer.norm2_gain),
            ])
        items.append(("final_norm_gain", self.final_norm_gain))
        return items

    def all_items(self, include_adapters=True):
        return self.frozen_items() + self.trainable_items(include_adapters)


def init_params(cfg, seed):
    """Random frozen base plus zero-effect adapters.

    Frozen tensors are drawn first, in a fixed order, so models that differ
    only in lora_rank share bitwise-identical base weights.  B matrices and
    the classifier start at zero: the initial model is exactly the base
    model and every sentence scores 0.5.
    """
    rng = np.random.default_rng(seed)
    d, f = cfg.d_model, cfg.d_ff
    embedding = rng.standard_normal((cfg.vocab_size, d)) / math.sqrt(d)
    frozen = []
    for _ in range(cfg.n_layers):
        frozen.append({
            "w_q": rng.standard_normal((d, d)) / math.sqrt(d),
            "w_k": rng.standard_normal((d, d)) / math.sqrt(d),
            "w_v": rng.standard_normal((d, d)) / math.sqrt(d),
            "w_o": rng.standard_normal((d, d)) / math.sqrt(d),
            "w_in": rng.standard_normal((2 * f, d)) / math.sqrt(d),
            "w_out": rng.standard_normal((d, f)) / math.sqrt(f),
            "norm1_gain": np.ones(d),
            "norm2_gain": np.ones(d),
        })
    layers = []
    r = cfg.lora_rank
    bound = 1.0 / math.sqrt(d)
    for fz in frozen:
        adapters = {}
        for tag in ("lora_q", "lora_k", "lora_v", "lora_o"):
            adapters[tag] = LoraAdapter(
                A=rng.uniform(-bound, bound, (r, d)),
                B=np.zeros((d, r)),
            )
        layers.append(DecoderLayerParams(**fz, **adapters))
    return ModelParams(
        embedding=embedding,
        layers=layers,
        final_norm_gain=np.ones(d),
        classifier_w=np.zeros((1, d)),
        classifier_b=np.zeros(1),
    )


def lora_project(x, base, adapter=None):
    """base @ x plus the low-rank correction B @ (A @ x), row-vector form.

    The product B @ A is never formed; the adapter path is two thin matmuls.
    Pass adapter=None for the frozen base model.
    """
    x = np.asarray(x)
    if base.ndim != 2 or x.shape[-1] != base.shape[1]:
        raise ShapeError(
            f"lora_project: input {x.shape} incompatible with base {base.shape}"
        )
    y = x @ base.T
    if adapter is not None:
        adapter.check_against(base)
        y = y + (x @ adapter.A.T) @ adapter.B.T
    return y


def _lora_backward(grad_out, x, base, adapter):
    """Returns (grad_x, grad_A, grad_B); grad_A/B are None without an adapter."""
    grad_x = grad_out @ base
    if adapter is None:
        return grad_x, None, None
    gb = grad_out @ adapter.B
    grad_a = gb.T @ x
    grad_b = grad_out.T @ (x @ adapter.A.T)
    grad_x = grad_x + gb @ adapter.A
    return grad_x, grad_a, grad_b


def _pair_frequencies(cfg):
    hd = cfg.head_dim
    return cfg.rope_base ** (-np.arange(0, hd, 2, dtype=np.float64) / hd)


def rope_rotate(x, m, cfg):
    """Rotate one head vector to encode position m.

    Adjacent pairs (x_{2i}, x_{2i+1}) rotate by angle (m * scaling) * theta_i
    with theta_i = base^(-2i/head_dim).  Position m may be fractional or
    negative (negative values arise in relative-position identities).
    Norm-preserving by construction.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != cfg.head_dim:
        raise ShapeError(f"rope_rotate expects a ({cfg.head_dim},) vector, got {x.shape}")
    return rope_apply(x[None, :], np.array([m], dtype=np.float64), cfg)[0]


def rope_apply(x, positions, cfg, inverse=False):
    """Vectorized rotation over the second-to-last axis.

    x has shape (..., n, head_dim); positions has shape (n,).  The effective
    angle is (position * rope_scaling) * theta_i, which implements running a
    length-L-pretrained model at length L' by shrinking positions by L/L'.
    inverse=True rotates by the negated angle (the transpose, used by the
    backward pass).
    """
    x = np.asarray(x, dtype=np.float64)
    hd = cfg.head_dim
    if x.shape[-1] != hd:
        raise ShapeError(f"rope_apply: last dim {x.shape[-1]} != head_dim {hd}")
    if hd % 2 != 0:
        raise ShapeError(f"rope_apply: head_dim {hd} must be even")
    positions = np.asarray(positions, dtype=np.float64)
    angles = (positions * cfg.rope_scaling)[:, None] * _pair_frequencies(cfg)[None, :]
    if inverse:
        angles = -angles
    cos = np.cos(angles)
    sin = np.sin(angles)
    even = x[..., 0::2]
    odd = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def _check_qkv(q, k, v):
    # contiguity: the compiled kernel takes C-contiguous views
    q, k, v = (np.ascontiguousarray(a, dtype=np.float64) for a in (q, k, v))
    if not (q.ndim == k.ndim == v.ndim == 2):
        raise ShapeError("attention expects 2-D q, k, v")
    if q.shape != k.shape or k.shape != v.shape:
        raise ShapeError(
            f"attention shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}"
        )
    return q, k, v


def _check_mode(mode):
    if mode not in ATTENTION_MODES:
        raise ValidationError(f"attention mode must be one of {ATTENTION_MODES}, got {mode!r}")


def attention_naive(q, k, v, mode="causal"):
    """Reference attention: softmax(q k^T / sqrt(head_dim) + mask) v.

    Materializes the full n x n score matrix; kept as the oracle the tiled
    kernel is checked against and reused for the backward recomputation.
    """
    q, k, v = _check_qkv(q, k, v)
    _check_mode(mode)
    n, hd = q.shape
    scores = (q @ k.T) / math.sqrt(hd)
    if mode == "causal":
        scores = np.where(np.arange(n)[None, :] > np.arange(n)[:, None],
                          -np.inf, scores)
    return softmax_rows(scores) @ v


def attention_tiled(q, k, v, mode="causal", block_size=DEFAULT_BLOCK_SIZE, stats=None):
    """Exact attention via the online-softmax recurrence over key/value tiles.

    Never holds more than block_size rows of scores at once; pass a stats
    dict to receive the instrumented peak ("peak_score_rows").
    """
    q, k, v = _check_qkv(q, k, v)
    _check_mode(mode)
    if block_size < 1:
        raise ValidationError(f"block_size must be >= 1, got {block_size}")
    return _kernels.attention_tiled(q, k, v, causal=(mode == "causal"),
                                    block_size=block_size, stats=stats)


def _attention_backward(q, k, v, grad_out, mode):
    """Gradients of attention_naive; recomputes the score matrix from q, k."""
    n, hd = q.shape
    scale = 1.0 / math.sqrt(hd)
    scores = (q @ k.T) * scale
    if mode == "causal":
        scores = np.where(np.arange(n)[None, :] > np.arange(n)[:, None],
                          -np.inf, scores)
    p = softmax_rows(scores)
    grad_v = p.T @ grad_out
    grad_p = grad_out @ v.T
    grad_s = p * (grad_p - np.sum(grad_p * p, axis=1, keepdims=True))
    grad_q = (grad_s @ k) * scale
    grad_k = (grad_s.T @ q) * scale
    return grad_q, grad_k, grad_v


def mean_pool(hidden, spans):
    """Per-span mean of hidden rows: one vector per sentence."""
    hidden = np.asarray(hidden)
    n = hidden.shape[0]
    out = np.empty((len(spans), hidden.shape[1]), dtype=hidden.dtype)
    for i, (start, end) in enumerate(spans):
        if end <= start:
            raise DegenerateSpanError(f"span {i} ({start},{end}) is empty")
        if start < 0 or end > n:
            raise ShapeError(f"span {i} ({start},{end}) outside [0,{n})")
        out[i] = hidden[start:end].mean(axis=0)
    return out


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def classify_head(sentence_vec, params):
    """sigmoid(W_c @ s + b) for one pooled sentence vector."""
    z = float(np.asarray(sentence_vec) @ params.classifier_w[0] + params.classifier_b[0])
    return float(sigmoid(np.array([z]))[0])


def _split_heads(x, n_heads):
    n, d = x.shape
    return x.reshape(n, n_heads, d // n_heads).transpose(1, 0, 2)


def _merge_heads(xh):
    h, n, hd = xh.shape
    return xh.transpose(1, 0, 2).reshape(n, h * hd)


def _silu(x):
    return x * sigmoid(x)


@dataclass
class _LayerCache:
    x_in: np.ndarray
    normed1: np.ndarray
    q_rot: np.ndarray
    k_rot: np.ndarray
    v_heads: np.ndarray
    attn_merged: np.ndarray
    h: np.ndarray
    normed2: np.ndarray
    pre_act: np.ndarray


@dataclass
class ForwardCache:
    params: ModelParams
    cfg: ModelConfig
    use_adapters: bool
    positions: np.ndarray
    spans: list
    layer_caches: list = field(default_factory=list)
    x_final: np.ndarray = None
    normed_final: np.ndarray = None
    pooled: np.ndarray = None
    probs: np.ndarray = None


def forward_document(tdoc, params, cfg, use_adapters=True,
                     attention_impl="tiled", block_size=DEFAULT_BLOCK_SIZE):
    """Score every sentence of an encoded document.

    Returns (probs, cache) where probs[i] belongs to spans[i] and the cache
    carries the activations backward_document needs.  use_adapters=False
    runs the frozen base model (the classifier-only baseline).
    """
    ids = np.asarray(tdoc.token_ids, dtype=np.int64)
    n = ids.shape[0]
    if n == 0 or not tdoc.spans:
        raise ValidationError(f"document {tdoc.doc_id!r} has no encoded sentences")
    if n > cfg.runtime_context:
        raise ContextLengthError(
            f"document {tdoc.doc_id!r} has {n} tokens, exceeding the runtime "
            f"context {cfg.runtime_context}"
        )
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValidationError(
            f"document {tdoc.doc_id!r} holds token ids outside [0,{cfg.vocab_size})"
        )
    if attention_impl not in ("tiled", "naive"):
        raise ValidationError(f"unknown attention_impl {attention_impl!r}")

    positions = np.arange(n, dtype=np.float64)
    cache = ForwardCache(params=params, cfg=cfg, use_adapters=use_adapters,
                         positions=positions, spans=list(tdoc.spans))
    f = cfg.d_ff

    x = params.embedding[ids]
    for layer in params.layers:
        normed1 = rms_norm_rows(x, layer.norm1_gain, RMS_EPS)
        lq = layer.lora_q if use_adapters else None
        lk = layer.lora_k if use_adapters else None
        lv = layer.lora_v if use_adapters else None
        lo = layer.lora_o if use_adapters else None
        q = _split_heads(lora_project(normed1, layer.w_q, lq), cfg.n_heads)
        k = _split_heads(lora_project(normed1, layer.w_k, lk), cfg.n_heads)
        v = _split_heads(lora_project(normed1, layer.w_v, lv), cfg.n_heads)
        q_rot = rope_apply(q, positions, cfg)
        k_rot = rope_apply(k, positions, cfg)
        heads_out = np.empty_like(v)
        for h in range(cfg.n_heads):
            if attention_impl == "tiled":
                heads_out[h] = attention_tiled(q_rot[h], k_rot[h], v[h],
                                               mode=cfg.attention_mode,
                                               block_size=block_size)
            else:
                heads_out[h] = attention_naive(q_rot[h], k_rot[h], v[h],
                                               mode=cfg.attention_mode)
        attn_merged = _merge_heads(heads_out)
        h_res = x + lora_project(attn_merged, layer.w_o, lo)
        normed2 = rms_norm_rows(h_res, layer.norm2_gain, RMS_EPS)
        pre_act = normed2 @ layer.w_in.T
        gate, val = pre_act[:, :f], pre_act[:, f:]
        mlp_out = (_silu(gate) * val) @ layer.w_out.T
        cache.layer_caches.append(_LayerCache(
            x_in=x, normed1=normed1, q_rot=q_rot, k_rot=k_rot, v_heads=v,
            attn_merged=attn_merged, h=h_res, normed2=normed2, pre_act=pre_act,
        ))
        x = h_res + mlp_out

    cache.x_final = x
    normed_final = rms_norm_rows(x, params.final_norm_gain, RMS_EPS)
    pooled = mean_pool(normed_final, tdoc.spans)
    z = pooled @ params.classifier_w[0] + params.classifier_b[0]
    probs = sigmoid(z)
    cache.normed_final = normed_final
    cache.pooled = pooled
    cache.probs = probs
    return probs, cache


def backward_document(cache, labels):
    """Exact gradients of mean-per-sentence BCE over the trainable tensors.

    Returns a dict keyed like ModelParams.trainable_items; adapter entries
    are absent when the forward pass ran with use_adapters=False.  The
    attention backward recomputes score matrices from the cached rotated
    q/k instead of storing them.
    """
    params, cfg = cache.params, cache.cfg
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != cache.probs.shape:
        raise ValidationError(
            f"labels shape {labels.shape} misaligned with {cache.probs.shape[0]} spans"
        )
    n_sent = labels.shape[0]
    f = cfg.d_ff
    grads = {}

    # d(mean BCE)/dz for z the classifier logit
    dz = (cache.probs - labels) / n_sent
    grads["classifier.w_c"] = (dz @ cache.pooled)[None, :]
    grads["classifier.b"] = np.array([dz.sum()])

    dpooled = dz[:, None] * params.classifier_w[0][None, :]
    dnormed_final = np.zeros_like(cache.normed_final)
    for i, (start, end) in enumerate(cache.spans):
        dnormed_final[start:end] += dpooled[i] / (end - start)
    dx = rms_norm_rows_backward(dnormed_final, cache.x_final,
                                params.final_norm_gain, RMS_EPS)

    for li in range(cfg.n_layers - 1, -1, -1):
        layer = params.layers[li]
        lc = cache.layer_caches[li]

        # x_out = h + mlp(normed2); dx is the gradient at x_out
        gate, val = lc.pre_act[:, :f], lc.pre_act[:, f:]
        sig_g = sigmoid(gate)
        silu_g = gate * sig_g
        d_act = dx @ layer.w_out
        d_gate = d_act * val * (sig_g * (1.0 + gate * (1.0 - sig_g)))
        d_val = d_act * silu_g
        d_pre = np.concatenate([d_gate, d_val], axis=1)
        d_normed2 = d_pre @ layer.w_in
        dh = dx + rms_norm_rows_backward(d_normed2, lc.h, layer.norm2_gain, RMS_EPS)

        # h = x_in + lora_o(attn_merged)
        lo = layer.lora_o if cache.use_adapters else None
        d_attn, ga, gb = _lora_backward(dh, lc.attn_merged, layer.w_o, lo)
        if ga is not None:
            grads[f"layers.{li}.lora_o.A"] = ga
            grads[f"layers.{li}.lora_o.B"] = gb

        d_heads = _split_heads(d_attn, cfg.n_heads)
        dq_rot = np.empty_like(lc.q_rot)
        dk_rot = np.empty_like(lc.k_rot)
        dv_heads = np.empty_like(lc.v_heads)
        for h in range(cfg.n_heads):
            dq_rot[h], dk_rot[h], dv_heads[h] = _attention_backward(
                lc.q_rot[h], lc.k_rot[h], lc.v_heads[h], d_heads[h],
                cfg.attention_mode)
        dq = _merge_heads(rope_apply(dq_rot, cache.positions, cfg, inverse=True))
        dk = _merge_heads(rope_apply(dk_rot, cache.positions, cfg, inverse=True))
        dv = _merge_heads(dv_heads)

        d_normed1 = np.zeros_like(lc.normed1)
        for tag, w, gout in (("lora_q", layer.w_q, dq),
                             ("lora_k", layer.w_k, dk),
                             ("lora_v", layer.w_v, dv)):
            adapter = getattr(layer, tag) if cache.use_adapters else None
            gx, ga, gb = _lora_backward(gout, lc.normed1, w, adapter)
            d_normed1 += gx
            if ga is not None:
                grads[f"layers.{li}.{tag}.A"] = ga
                grads[f"layers.{li}.{tag}.B"] = gb

        dx = dh + rms_norm_rows_backward(d_normed1, lc.x_in, layer.norm1_gain, RMS_EPS)

    return grads

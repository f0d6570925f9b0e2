"""Convolutional encoder mapping images to diagonal Gaussian embeddings.

The network is ``conv(+ReLU)* -> flatten -> dense(+ReLU)* -> dense(2K)``.
The first K outputs are the latent mean; the last K pass through
``softplus(.) + 1e-6`` to give the latent variances. An optional linear head
maps the mean to C logits for the cross-entropy baseline.

Parameter order in the flat ``weights`` array, layer by layer, each layer's
weight followed by its bias (all row-major):

* conv layer ``l``: weight ``(kernel, kernel, in, out)``, bias ``(out,)``
* hidden dense layer: weight ``(in, out)``, bias ``(out,)``
* output layer: weight ``(features, 2K)``, bias ``(2K,)``
* head (if present): weight ``(K, C)``, bias ``(C,)``

Flattening between the conv stack and the dense layers is in (h, w, c) order.
Gradients are hand-derived reverse mode; everything is float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, ShapeError
from .gaussian_ot import DEFAULT_FLOOR, GaussianEmbedding, w2_identity_batch, w2_identity_batch_grad

VARIANCE_EPS = 1e-6
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class ConvLayer:
    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 2
    padding: int = 1

    def text(self):
        return f"conv:{self.in_channels}>{self.out_channels}/k{self.kernel}/s{self.stride}/p{self.padding}"


@dataclass(frozen=True)
class Arch:
    """Architecture descriptor; ``canonical()`` is the serialized form."""

    input_size: int = 32
    input_channels: int = 3
    convs: tuple = (ConvLayer(3, 16), ConvLayer(16, 32), ConvLayer(32, 64))
    hidden: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "convs", tuple(self.convs))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        self.validate()

    def validate(self):
        if self.input_size < 1 or self.input_channels < 1:
            raise ConfigError("input size and channels must be positive")
        channels = self.input_channels
        size = self.input_size
        for i, conv in enumerate(self.convs):
            if conv.in_channels != channels:
                raise ConfigError(
                    f"conv layer {i} expects {conv.in_channels} input channels, previous layer gives {channels}"
                )
            if min(conv.out_channels, conv.kernel, conv.stride) < 1 or conv.padding < 0:
                raise ConfigError(f"conv layer {i} has non-positive sizes")
            size = kernels.out_size(size, conv.kernel, conv.stride, conv.padding)
            if size < 1:
                raise ConfigError(f"conv layer {i} reduces the feature map to nothing")
            channels = conv.out_channels
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden dense widths must be positive")

    def feature_shape(self):
        size = self.input_size
        channels = self.input_channels
        for conv in self.convs:
            size = kernels.out_size(size, conv.kernel, conv.stride, conv.padding)
            channels = conv.out_channels
        return size, size, channels

    def canonical(self) -> str:
        parts = [f"input:{self.input_size}x{self.input_size}x{self.input_channels}"]
        parts += [conv.text() for conv in self.convs]
        parts += [f"dense:{h}" for h in self.hidden]
        return ";".join(parts)

    @classmethod
    def parse(cls, text: str) -> "Arch":
        convs, hidden = [], []
        input_size = input_channels = None
        try:
            for part in text.strip().split(";"):
                kind, _, value = part.strip().partition(":")
                if kind == "input":
                    h, w, c = (int(v) for v in value.split("x"))
                    if h != w:
                        raise ConfigError("only square inputs are supported")
                    input_size, input_channels = h, c
                elif kind == "conv":
                    chans, *opts = value.split("/")
                    cin, cout = (int(v) for v in chans.split(">"))
                    kw = {"k": "kernel", "s": "stride", "p": "padding"}
                    extra = {kw[o[0]]: int(o[1:]) for o in opts}
                    convs.append(ConvLayer(cin, cout, **extra))
                elif kind == "dense":
                    hidden.append(int(value))
                else:
                    raise ConfigError(f"unknown arch element {kind!r}")
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"cannot parse arch descriptor {text!r}: {exc}") from None
        if input_size is None:
            raise ConfigError(f"arch descriptor {text!r} has no input element")
        return cls(input_size, input_channels, tuple(convs), tuple(hidden))


@dataclass(frozen=True)
class LayerSlot:
    kind: str  # conv | dense | out | head
    w_shape: tuple
    offset: int

    @property
    def w_size(self):
        return int(np.prod(self.w_shape))

    @property
    def b_size(self):
        return self.w_shape[-1]

    @property
    def size(self):
        return self.w_size + self.b_size


@lru_cache(maxsize=64)
def param_layout(arch: Arch, dim: int, n_classes: int, head: bool):
    """Slots for every layer in flat-array order."""
    slots = []
    offset = 0

    def add(kind, shape):
        nonlocal offset
        slot = LayerSlot(kind, tuple(shape), offset)
        slots.append(slot)
        offset += slot.size

    for conv in arch.convs:
        add("conv", (conv.kernel, conv.kernel, conv.in_channels, conv.out_channels))
    width = int(np.prod(arch.feature_shape()))
    for h in arch.hidden:
        add("dense", (width, h))
        width = h
    add("out", (width, 2 * dim))
    if head:
        add("head", (dim, n_classes))
    return tuple(slots)


def param_count(arch: Arch, dim: int, n_classes: int = 2, head: bool = False) -> int:
    slots = param_layout(arch, dim, n_classes, head)
    return slots[-1].offset + slots[-1].size


def _views(slots, weights):
    out = []
    for slot in slots:
        w = weights[slot.offset:slot.offset + slot.w_size].reshape(slot.w_shape)
        b = weights[slot.offset + slot.w_size:slot.offset + slot.size]
        out.append((w, b))
    return out


@dataclass
class EncoderParams:
    """Encoder weights plus Adam state (``opt_m``, ``opt_v``, ``step``)."""

    arch: Arch
    dim: int
    n_classes: int
    has_head: bool
    weights: np.ndarray = field(repr=False)
    opt_m: np.ndarray = field(repr=False)
    opt_v: np.ndarray = field(repr=False)
    step: int = 0

    def __post_init__(self):
        n = param_count(self.arch, self.dim, self.n_classes, self.has_head)
        for name in ("weights", "opt_m", "opt_v"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n,):
                raise DimensionError(f"{name} has shape {arr.shape}, arch implies ({n},)")
            setattr(self, name, arr)

    @property
    def layout(self):
        return param_layout(self.arch, self.dim, self.n_classes, self.has_head)

    def copy(self) -> "EncoderParams":
        return replace(self, weights=self.weights.copy(), opt_m=self.opt_m.copy(), opt_v=self.opt_v.copy())

    def reset_optimizer(self) -> "EncoderParams":
        n = self.weights.size
        return replace(self, weights=self.weights.copy(), opt_m=np.zeros(n), opt_v=np.zeros(n), step=0)


@dataclass
class Batch:
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[0] < 1:
            raise ShapeError(f"images must be a non-empty (B, H, W, C) array, got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ShapeError(f"{self.images.shape[0]} images but labels shape {self.labels.shape}")


def init_encoder(arch: Arch, dim: int, n_classes: int, seed: int, head: bool = False) -> EncoderParams:
    """Seeded initialization: fan-in-scaled uniform weights, zero biases.

    Layers followed by a ReLU use bound ``sqrt(6 / fan_in)``; the linear
    output layer and head use ``1 / sqrt(fan_in)``.
    """
    if dim < 1 or n_classes < 1:
        raise ConfigError("embedding dim and class count must be positive")
    arch.validate()
    slots = param_layout(arch, dim, n_classes, head)
    weights = np.zeros(slots[-1].offset + slots[-1].size)
    rng = np.random.default_rng(seed)
    for slot in slots:
        fan_in = slot.w_size // slot.w_shape[-1]
        gain = 6.0 if slot.kind in ("conv", "dense") else 1.0
        bound = np.sqrt(gain / fan_in)
        weights[slot.offset:slot.offset + slot.w_size] = rng.uniform(-bound, bound, slot.w_size)
    n = weights.size
    return EncoderParams(arch, dim, n_classes, head, weights, np.zeros(n), np.zeros(n), 0)


def _check_images(arch, images):
    images = np.asarray(images, dtype=np.float64)
    expected = (arch.input_size, arch.input_size, arch.input_channels)
    if images.ndim != 4 or images.shape[1:] != expected:
        raise ShapeError(f"expected images of shape (B, {expected[0]}, {expected[1]}, {expected[2]}), got {images.shape}")
    return images


def _forward(arch, slots, weights, images):
    """Returns raw network outputs (B, 2K) and the cache needed by ``_backward``."""
    views = _views(slots, weights)
    n = images.shape[0]
    a = images
    cache = []
    for conv, (w, b) in zip(arch.convs, views):
        cols = kernels.im2col(a, conv.kernel, conv.stride, conv.padding)
        z = cols @ w.reshape(-1, conv.out_channels) + b
        oh = kernels.out_size(a.shape[1], conv.kernel, conv.stride, conv.padding)
        ow = kernels.out_size(a.shape[2], conv.kernel, conv.stride, conv.padding)
        cache.append((cols, a.shape, z > 0))
        a = np.maximum(z, 0.0).reshape(n, oh, ow, conv.out_channels)
    feat_shape = a.shape
    f = a.reshape(n, -1)
    n_conv = len(arch.convs)
    for w, b in views[n_conv:n_conv + len(arch.hidden)]:
        z = f @ w + b
        cache.append((f, None, z > 0))
        f = np.maximum(z, 0.0)
    w, b = views[n_conv + len(arch.hidden)]
    cache.append((f, feat_shape, None))
    return f @ w + b, cache


def _backward(arch, slots, weights, cache, g_raw):
    """Gradient of a scalar w.r.t. all encoder weights, given d(scalar)/d(raw)."""
    views = _views(slots, weights)
    grads = np.zeros_like(weights)
    gviews = _views(slots, grads)
    n_conv = len(arch.convs)
    n_dense = len(arch.hidden)
    f, feat_shape, _ = cache[-1]
    w, _ = views[n_conv + n_dense]
    gw, gb = gviews[n_conv + n_dense]
    gw[...] = f.T @ g_raw
    gb[...] = g_raw.sum(axis=0)
    g = g_raw @ w.T
    for idx in range(n_conv + n_dense - 1, n_conv - 1, -1):
        f_in, _, mask = cache[idx]
        g = g * mask
        w, _ = views[idx]
        gw, gb = gviews[idx]
        gw[...] = f_in.T @ g
        gb[...] = g.sum(axis=0)
        g = g @ w.T
    g = g.reshape(feat_shape)
    for idx in range(n_conv - 1, -1, -1):
        conv = arch.convs[idx]
        cols, in_shape, mask = cache[idx]
        gz = g.reshape(-1, conv.out_channels) * mask
        w, _ = views[idx]
        gw, gb = gviews[idx]
        gw[...] = (cols.T @ gz).reshape(gw.shape)
        gb[...] = gz.sum(axis=0)
        if idx > 0:
            g = kernels.col2im(gz @ w.reshape(-1, conv.out_channels).T, in_shape, conv.kernel, conv.stride, conv.padding)
    return grads


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _encoder_slots(params):
    slots = params.layout
    return slots[:-1] if params.has_head else slots


def encode_arrays(params: EncoderParams, images):
    """Latent means and variances, each of shape (B, K)."""
    images = _check_images(params.arch, images)
    raw, _ = _forward(params.arch, _encoder_slots(params), params.weights, images)
    k = params.dim
    return raw[:, :k], _softplus(raw[:, k:]) + VARIANCE_EPS


def encode(params: EncoderParams, batch) -> list:
    images = batch.images if isinstance(batch, Batch) else batch
    mu, s = encode_arrays(params, images)
    return [GaussianEmbedding(m, v) for m, v in zip(mu, s)]


def head_logits(params: EncoderParams, mu):
    if not params.has_head:
        raise ConfigError("encoder has no classification head")
    w, b = _views(params.layout, params.weights)[-1]
    return mu @ w + b


def _check_labels(labels, n_classes):
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ConfigError(f"labels must lie in [0, {n_classes})")


def _ddt_raw_loss(params, raw, labels, means, floor):
    k = params.dim
    mu = raw[:, :k]
    pre_s = raw[:, k:]
    s = _softplus(pre_s) + VARIANCE_EPS
    w, gmu, gs = w2_identity_batch_grad(mu, s, means[labels], floor)
    b = raw.shape[0]
    g_raw = np.concatenate([gmu, gs * _sigmoid(pre_s)], axis=1) / b
    return float(np.mean(w)), g_raw


def ddt_loss_and_grad(params: EncoderParams, batch: Batch, proto, floor: float = DEFAULT_FLOOR):
    """Mean W2 between each embedding and its class component, with exact gradients.

    The returned loss uses the true distance; only the gradient's
    denominator is clamped at ``floor``.
    """
    images = _check_images(params.arch, batch.images)
    if proto.dim != params.dim:
        raise DimensionError(f"prototype dim {proto.dim} != encoder dim {params.dim}")
    _check_labels(batch.labels, proto.n_classes)
    slots = _encoder_slots(params)
    raw, cache = _forward(params.arch, slots, params.weights, images)
    loss, g_raw = _ddt_raw_loss(params, raw, batch.labels, proto.means, floor)
    grads = np.zeros_like(params.weights)
    n_enc = slots[-1].offset + slots[-1].size
    grads[:n_enc] = _backward(params.arch, slots, params.weights[:n_enc], cache, g_raw)
    return loss, grads


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def ce_loss_and_grad(params: EncoderParams, batch: Batch):
    """Softmax cross-entropy of the head's logits on the latent mean."""
    if not params.has_head:
        raise ConfigError("cross-entropy loss needs an encoder with a head")
    images = _check_images(params.arch, batch.images)
    _check_labels(batch.labels, params.n_classes)
    slots = params.layout
    enc_slots = slots[:-1]
    raw, cache = _forward(params.arch, enc_slots, params.weights, images)
    k = params.dim
    mu = raw[:, :k]
    wh, bh = _views(slots, params.weights)[-1]
    logp = _log_softmax(mu @ wh + bh)
    b = raw.shape[0]
    rows = np.arange(b)
    loss = float(-np.mean(logp[rows, batch.labels]))
    g_logits = np.exp(logp)
    g_logits[rows, batch.labels] -= 1.0
    g_logits /= b
    grads = np.zeros_like(params.weights)
    head = slots[-1]
    grads[head.offset:head.offset + head.w_size] = (mu.T @ g_logits).ravel()
    grads[head.offset + head.w_size:head.offset + head.size] = g_logits.sum(axis=0)
    g_raw = np.zeros_like(raw)
    g_raw[:, :k] = g_logits @ wh.T
    grads[:head.offset] = _backward(params.arch, enc_slots, params.weights[:head.offset], cache, g_raw)
    return loss, grads


def adam_step(params: EncoderParams, grads, lr: float) -> EncoderParams:
    """One bias-corrected Adam update; returns new params, inputs untouched."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.weights.shape:
        raise DimensionError(f"gradient shape {grads.shape} != weights shape {params.weights.shape}")
    t = params.step + 1
    m = ADAM_BETA1 * params.opt_m + (1.0 - ADAM_BETA1) * grads
    v = ADAM_BETA2 * params.opt_v + (1.0 - ADAM_BETA2) * (grads * grads)
    m_hat = m / (1.0 - ADAM_BETA1 ** t)
    v_hat = v / (1.0 - ADAM_BETA2 ** t)
    weights = params.weights - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return replace(params, weights=weights, opt_m=m, opt_v=v, step=t)


# --- finite-difference verification -------------------------------------

FD_DENOM_FLOOR = 1e-7


def _loss_only(params, weights, images, labels, proto, loss):
    """Forward-only loss and the ReLU activation pattern, for finite differences."""
    slots = params.layout
    enc = slots[:-1] if params.has_head else slots
    n_enc = enc[-1].offset + enc[-1].size
    raw, cache = _forward(params.arch, enc, weights[:n_enc], images)
    pattern = [c[2] for c in cache if c[2] is not None]
    k = params.dim
    if loss == "ddt":
        s = _softplus(raw[:, k:]) + VARIANCE_EPS
        value = float(np.mean(w2_identity_batch(raw[:, :k], s, proto.means[labels])))
    else:
        wh, bh = _views(slots, weights)[-1]
        logp = _log_softmax(raw[:, :k] @ wh + bh)
        value = float(-np.mean(logp[np.arange(labels.size), labels]))
    return value, pattern


def gradient_check(params, batch, proto, h=1e-3, loss="ddt", grad_fn=None):
    """Compare analytic and central-difference gradients entry by entry.

    Entries whose +/-h perturbation flips any ReLU are skipped: the central
    difference straddles a kink there and is not a valid reference.

    Returns ``(max_rel_error, n_checked, n_skipped)`` where the relative error
    is ``|a - n| / max(|a|, |n|, FD_DENOM_FLOOR)``.
    """
    if loss not in ("ddt", "ce"):
        raise ConfigError(f"unknown loss {loss!r}")
    if grad_fn is None:
        grad_fn = ddt_loss_and_grad if loss == "ddt" else ce_loss_and_grad
    if loss == "ddt":
        _, analytic = grad_fn(params, batch, proto)
    else:
        _, analytic = grad_fn(params, batch)
    images = _check_images(params.arch, batch.images)
    labels = batch.labels
    _, base_pattern = _loss_only(params, params.weights, images, labels, proto, loss)
    w = params.weights.copy()
    worst = 0.0
    checked = skipped = 0
    for i in range(w.size):
        orig = w[i]
        w[i] = orig + h
        f_plus, pat_plus = _loss_only(params, w, images, labels, proto, loss)
        w[i] = orig - h
        f_minus, pat_minus = _loss_only(params, w, images, labels, proto, loss)
        w[i] = orig
        if not all(np.array_equal(a, b) and np.array_equal(a, c)
                   for a, b, c in zip(base_pattern, pat_plus, pat_minus)):
            skipped += 1
            continue
        numeric = (f_plus - f_minus) / (2.0 * h)
        denom = max(abs(analytic[i]), abs(numeric), FD_DENOM_FLOOR)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
        checked += 1
    return worst, checked, skipped


def finite_diff_check(params, batch, proto, h=1e-3, loss="ddt", grad_fn=None) -> float:
    """Max relative error between analytic and finite-difference gradients."""
    return gradient_check(params, batch, proto, h=h, loss=loss, grad_fn=grad_fn)[0]


def tiny_arch() -> Arch:
    """Small network used by gradient checks (8x8 input, a few hundred weights)."""
    return Arch(8, 3, (ConvLayer(3, 4), ConvLayer(4, 6)), (8,))

"""Dense-tensor CNN: valid convolution, 2x2 max pooling, dense layers,
softmax/sigmoid heads, dropout, and exact reverse-mode gradients."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, FormatError, ShapeError, StateError

HEAD_SOFTMAX = "softmax_threshold"
HEAD_SIGMOID = "sigmoid_per_tag"

LOSS_PER_TAG_CE = "per_tag_cross_entropy"
LOSS_SOFTMAX_CE = "softmax_cross_entropy_multi_hot"

CHECKPOINT_MAGIC = b"SMM1"
CHECKPOINT_VERSION = 1


# --- activations -----------------------------------------------------------

def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def apply_activation(z, name, inplace=False):
    if name == "sigmoid":
        return sigmoid(z)
    if name == "relu":
        return np.maximum(z, 0.0, out=z if inplace else None)
    if name == "linear":
        return z
    raise ConfigError(f"unknown activation {name!r}")


def activation_grad(act, name):
    """Derivative expressed through the activation output."""
    if name == "sigmoid":
        return act * (1.0 - act)
    if name == "relu":
        return (act > 0.0).astype(np.float64)
    if name == "linear":
        return np.ones_like(act)
    raise ConfigError(f"unknown activation {name!r}")


# --- parameter containers --------------------------------------------------

@dataclass
class ConvLayerParams:
    weights: np.ndarray  # [filters, in_maps, kh, kw]
    bias: np.ndarray     # [filters]
    activation: str = "sigmoid"


@dataclass
class DenseLayerParams:
    weights: np.ndarray  # [out, in]
    bias: np.ndarray     # [out]
    activation: str = "sigmoid"


@dataclass
class ModelConfig:
    input_k: int
    conv_layers: list = field(default_factory=lambda: [(20, 5), (30, 5), (40, 5), (50, 5)])
    hidden_sizes: list = field(default_factory=lambda: [500])
    num_tags: int = 18
    dropout_p: float = 0.0
    head: str = HEAD_SIGMOID
    conv_activation: str = "relu"
    hidden_activation: str = "relu"

    def __post_init__(self):
        self.conv_layers = [tuple(c) for c in self.conv_layers]
        if self.num_tags < 2:
            raise ConfigError("num_tags must be >= 2")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must be in [0, 1)")
        if self.head not in (HEAD_SOFTMAX, HEAD_SIGMOID):
            raise ConfigError(f"unknown head {self.head!r}")
        self.spatial_sizes()  # raises if any stage collapses below 1x1

    def spatial_sizes(self):
        """Side length after each conv+pool stage; validates the topology."""
        sizes = []
        s = self.input_k
        for n_filters, ksize in self.conv_layers:
            if n_filters < 1 or ksize < 1:
                raise ConfigError("filter count and kernel size must be positive")
            if s < ksize:
                raise ConfigError(
                    f"kernel {ksize} larger than {s}x{s} input at some conv stage")
            s = (s - ksize + 1) // 2
            if s < 1:
                raise ConfigError("spatial size collapses below 1x1; reduce depth")
            sizes.append(s)
        return sizes

    def flat_features(self) -> int:
        if not self.conv_layers:
            return self.input_k * self.input_k
        return self.conv_layers[-1][0] * self.spatial_sizes()[-1] ** 2

    def to_dict(self):
        return {
            "input_k": self.input_k,
            "conv_layers": [list(c) for c in self.conv_layers],
            "hidden_sizes": list(self.hidden_sizes),
            "num_tags": self.num_tags,
            "dropout_p": self.dropout_p,
            "head": self.head,
            "conv_activation": self.conv_activation,
            "hidden_activation": self.hidden_activation,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ModelParams:
    config: ModelConfig
    conv: list  # of ConvLayerParams
    dense: list  # of DenseLayerParams
    rng_seed: int = 0

    def param_arrays(self):
        """(name, array) pairs in a fixed serialization order."""
        out = []
        for i, layer in enumerate(self.conv):
            out.append((f"conv{i}.weights", layer.weights))
            out.append((f"conv{i}.bias", layer.bias))
        for i, layer in enumerate(self.dense):
            out.append((f"dense{i}.weights", layer.weights))
            out.append((f"dense{i}.bias", layer.bias))
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            conv=[ConvLayerParams(l.weights.copy(), l.bias.copy(), l.activation)
                  for l in self.conv],
            dense=[DenseLayerParams(l.weights.copy(), l.bias.copy(), l.activation)
                   for l in self.dense],
            rng_seed=self.rng_seed,
        )


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Seeded uniform +-sqrt(6/(fan_in+fan_out)) init, zero biases."""
    rng = np.random.default_rng(seed)
    conv = []
    in_maps = 1
    for n_filters, ksize in config.conv_layers:
        fan_in = in_maps * ksize * ksize
        fan_out = n_filters * ksize * ksize
        w = _glorot(rng, (n_filters, in_maps, ksize, ksize), fan_in, fan_out)
        conv.append(ConvLayerParams(w, np.zeros(n_filters), config.conv_activation))
        in_maps = n_filters
    dense = []
    d = config.flat_features()
    for h in config.hidden_sizes:
        w = _glorot(rng, (h, d), d, h)
        dense.append(DenseLayerParams(w, np.zeros(h), config.hidden_activation))
        d = h
    w = _glorot(rng, (config.num_tags, d), d, config.num_tags)
    dense.append(DenseLayerParams(w, np.zeros(config.num_tags), "linear"))
    return ModelParams(config, conv, dense, rng_seed=seed)


# --- primitive ops ---------------------------------------------------------

def conv_forward_batch(x, layer: ConvLayerParams):
    """Valid cross-correlation, stride 1, on a channels-last [B,H,W,C]
    batch; im2col + one GEMM, activation fused in place."""
    B, H, W, C = x.shape
    F, C_w, kh, kw = layer.weights.shape
    if C != C_w:
        raise ShapeError(f"input has {C} maps, filters expect {C_w}")
    if H < kh or W < kw:
        raise ShapeError(f"kernel {kh}x{kw} larger than input {H}x{W}")
    oh, ow = H - kh + 1, W - kw + 1
    cols = kernels.im2col(x, kh, kw)                # [B, P, kh*kw*C]
    w2 = np.ascontiguousarray(
        layer.weights.transpose(2, 3, 1, 0).reshape(kh * kw * C, F))
    pre = cols.reshape(B * oh * ow, -1) @ w2
    pre += layer.bias
    act = apply_activation(pre, layer.activation, inplace=True)
    out = act.reshape(B, oh, ow, F)
    cache = {"cols": cols, "act": act, "w2": w2, "x_shape": x.shape,
             "layer": layer}
    return out, cache


def conv_backward_batch(grad_out, cache):
    layer = cache["layer"]
    B, H, W, C = cache["x_shape"]
    F, _, kh, kw = layer.weights.shape
    grad_act = grad_out.reshape(-1, F)
    grad_pre = grad_act * activation_grad(cache["act"], layer.activation)
    cols2d = cache["cols"].reshape(grad_pre.shape[0], -1)
    grad_w2 = cols2d.T @ grad_pre                   # [kh*kw*C, F]
    grad_w = np.ascontiguousarray(
        grad_w2.reshape(kh, kw, C, F).transpose(3, 2, 0, 1))
    grad_b = grad_pre.sum(axis=0)
    grad_cols = (grad_pre @ cache["w2"].T).reshape(B, -1, kh * kw * C)
    grad_x = kernels.col2im(grad_cols, H, W, C, kh, kw)
    return grad_w, grad_b, grad_x


def conv_forward(x, layer: ConvLayerParams):
    """Single-sample [C,H,W] convenience wrapper."""
    x = np.asarray(x, dtype=np.float64)
    nhwc = np.ascontiguousarray(x.transpose(1, 2, 0))[None]
    out, _ = conv_forward_batch(nhwc, layer)
    return np.ascontiguousarray(out[0].transpose(2, 0, 1))


def maxpool_forward(x):
    """Single-sample [C,H,W] 2x2/stride-2 max pool; returns (out, argmax).

    Argmax entries are window-local indices 0..3, row-major in the 2x2.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] < 2 or x.shape[2] < 2:
        raise ShapeError(f"max pool needs at least 2x2 input, got {x.shape}")
    nhwc = np.ascontiguousarray(x.transpose(1, 2, 0))[None]
    out, arg = kernels.maxpool2x2(nhwc)
    return (np.ascontiguousarray(out[0].transpose(2, 0, 1)),
            np.ascontiguousarray(arg[0].transpose(2, 0, 1)))


def dense_forward(x, weights, bias, activation="linear"):
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if x.shape[-1] != weights.shape[1]:
        raise ShapeError(
            f"input dim {x.shape[-1]} != weight columns {weights.shape[1]}")
    return apply_activation(x @ weights.T + bias, activation)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def head_forward(logits, head):
    if head == HEAD_SOFTMAX:
        return softmax(logits)
    if head == HEAD_SIGMOID:
        return sigmoid(logits)
    raise ConfigError(f"unknown head {head!r}")


def dropout_apply(x, p, rng, training):
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not training or p == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return x * mask, mask


# --- whole-model forward / backward ---------------------------------------

def forward_batch(params: ModelParams, x, rng=None, training=False):
    """Run a [B,1,K,K] (or [B,K,K]) batch; returns (scores [B,L], cache)."""
    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if x.ndim == 4:
        if x.shape[1] != 1:
            raise ShapeError(f"expected a single input map, got {x.shape}")
        x = x[:, 0, :, :]
    k = params.config.input_k
    if x.ndim != 3 or x.shape[1] != k or x.shape[2] != k:
        raise ShapeError(f"expected [B,{k},{k}] input, got {x.shape}")
    if training and params.config.dropout_p > 0.0 and rng is None:
        raise ConfigError("training with dropout requires an rng")

    cache = {"params_id": id(params), "conv": [], "dense": [], "batch": x.shape[0]}
    h = x[:, :, :, None]  # channels-last with one input map
    for layer in params.conv:
        out, conv_cache = conv_forward_batch(h, layer)
        pooled, arg = kernels.maxpool2x2(out)
        cache["conv"].append({"conv": conv_cache, "arg": arg,
                              "pre_pool_shape": out.shape})
        h = pooled
    cache["flat_shape"] = h.shape
    h = h.reshape(h.shape[0], -1)
    for i, layer in enumerate(params.dense):
        is_output = i == len(params.dense) - 1
        a = apply_activation(h @ layer.weights.T + layer.bias, layer.activation)
        mask = None
        dropped = a
        if not is_output:
            dropped, mask = dropout_apply(a, params.config.dropout_p, rng, training)
        cache["dense"].append({"input": h, "act": a, "mask": mask, "layer": layer})
        h = dropped
    cache["logits"] = h
    scores = head_forward(h, params.config.head)
    return scores, cache


def backward_batch(params: ModelParams, cache, grad_logits):
    """Exact gradients of the scalar loss whose logit-gradient is given.

    Returns {"conv": [(gw, gb), ...], "dense": [(gw, gb), ...]}.
    """
    if cache.get("params_id") != id(params):
        raise StateError("forward cache does not belong to this model instance")
    grads = {"conv": [None] * len(params.conv), "dense": [None] * len(params.dense)}
    g = np.asarray(grad_logits, dtype=np.float64)
    for i in range(len(params.dense) - 1, -1, -1):
        entry = cache["dense"][i]
        layer = entry["layer"]
        is_output = i == len(params.dense) - 1
        if is_output:
            grad_pre = g  # output layer is linear; head grad folded into loss
        else:
            if entry["mask"] is not None:
                g = g * entry["mask"]
            grad_pre = g * activation_grad(entry["act"], layer.activation)
        grads["dense"][i] = (grad_pre.T @ entry["input"], grad_pre.sum(axis=0))
        g = grad_pre @ layer.weights
    g = np.ascontiguousarray(g).reshape(cache["flat_shape"])
    for i in range(len(params.conv) - 1, -1, -1):
        entry = cache["conv"][i]
        shape = entry["pre_pool_shape"]
        g = kernels.maxpool2x2_backward(g, entry["arg"], shape[1], shape[2])
        gw, gb, g = conv_backward_batch(g, entry["conv"])
        grads["conv"][i] = (gw, gb)
    return grads


def forward(params: ModelParams, spectrogram, rng=None, training=False):
    """Single-item forward; accepts a K x K array (or Spectrogram.values)."""
    values = getattr(spectrogram, "values", spectrogram)
    scores, cache = forward_batch(params, np.asarray(values)[None],
                                  rng=rng, training=training)
    return scores[0], cache


# --- losses ----------------------------------------------------------------

def loss_cost_and_grad(logits, labels, loss: str):
    """Mean-loss cost and its gradient at the logits for a [B,L] batch."""
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim == 1:
        y = y[None]
    if logits.shape != y.shape:
        raise ShapeError(f"logits {logits.shape} vs labels {y.shape}")
    B, L = logits.shape
    if loss == LOSS_PER_TAG_CE:
        s = sigmoid(logits)
        eps = 1e-12
        cost = -np.mean(y * np.log(s + eps) + (1 - y) * np.log(1 - s + eps))
        grad = (s - y) / (B * L)
        return cost, grad
    if loss == LOSS_SOFTMAX_CE:
        row = y.sum(axis=1, keepdims=True)
        if np.any(row == 0):
            raise ConfigError("softmax multi-hot loss needs >= 1 positive per item")
        target = y / row
        z = logits - logits.max(axis=1, keepdims=True)
        log_softmax = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        cost = float(-np.sum(target * log_softmax) / B)
        grad = (softmax(logits) - target) / B
        return cost, grad
    raise ConfigError(f"unknown loss {loss!r}")


def model_cost(params, x, labels, loss, rng=None, training=False):
    _, cache = forward_batch(params, x, rng=rng, training=training)
    cost, _ = loss_cost_and_grad(cache["logits"], labels, loss)
    return cost


def model_cost_and_grads(params, x, labels, loss, rng=None, training=False):
    _, cache = forward_batch(params, x, rng=rng, training=training)
    cost, grad_logits = loss_cost_and_grad(cache["logits"], labels, loss)
    grads = backward_batch(params, cache, grad_logits)
    return cost, grads


def grad_check(params: ModelParams, x, labels, loss=LOSS_PER_TAG_CE,
               epsilon=1e-4) -> float:
    """Worst relative error between backprop and central finite differences
    over every parameter."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    _, grads = model_cost_and_grads(params, x, labels, loss)
    worst = 0.0
    analytic = {("conv", i): g for i, g in enumerate(grads["conv"])}
    analytic.update({("dense", i): g for i, g in enumerate(grads["dense"])})
    layers = [("conv", i, l) for i, l in enumerate(params.conv)]
    layers += [("dense", i, l) for i, l in enumerate(params.dense)]
    for kind, i, layer in layers:
        for arr, g in zip((layer.weights, layer.bias), analytic[(kind, i)]):
            it = np.nditer(arr, flags=["multi_index"], op_flags=["readwrite"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + epsilon
                c_plus = model_cost(params, x, labels, loss)
                arr[idx] = orig - epsilon
                c_minus = model_cost(params, x, labels, loss)
                arr[idx] = orig
                g_fd = (c_plus - c_minus) / (2 * epsilon)
                g_bp = g[idx]
                rel = abs(g_bp - g_fd) / max(1e-8, abs(g_bp) + abs(g_fd))
                worst = max(worst, rel)
    return worst


# --- checkpoint I/O --------------------------------------------------------

def save_checkpoint(path, params: ModelParams) -> None:
    """SMM1 container: magic, u32 version, config JSON, f64 tensors."""
    meta = json.dumps({"config": params.config.to_dict(),
                       "rng_seed": params.rng_seed}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        for _, arr in params.param_arrays():
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, meta_len = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    meta = json.loads(raw[12:12 + meta_len])
    config = ModelConfig.from_dict(meta["config"])
    params = init_params(config, seed=meta["rng_seed"])
    pos = 12 + meta_len
    for _, arr in params.param_arrays():
        (ndim,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        if tuple(shape) != arr.shape:
            raise FormatError(f"{path}: tensor shape {shape} != expected {arr.shape}")
        count = int(np.prod(shape))
        arr[...] = np.frombuffer(raw, dtype="<f8", count=count,
                                 offset=pos).reshape(shape)
        pos += 8 * count
    if pos != len(raw):
        raise FormatError(f"{path}: trailing bytes after tensors")
    return params

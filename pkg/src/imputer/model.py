"""
The scoring network: a convolutional feature encoder whose output is summed with
embeddings of the partial alignment and sinusoidal positions, refined by a stack
of pre-norm self-attention layers, and projected to a per-slot log-softmax over
blank and the vocabulary tokens.

Forward and backward passes are written out by hand on numpy arrays. The
activations a backward pass needs are returned in an `ActivationCache`, so any
number of evaluations can share one read-only `ModelParams`.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from imputer.core_types import PartialAlignment, Vocab
from imputer.dp_engine import LogProbLattice, logsumexp
from imputer.errors import ConfigurationError, InvalidInput, NumericFailure, UsageError

LN_EPSILON = 1e-5


@dataclass(frozen=True)
class FeatureSeq:
    frames: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise InvalidInput(f"Features must be a T x d table with T >= 1, got {frames.shape}")
        if not np.isfinite(frames).all():
            raise InvalidInput("Features contain non-finite values")
        object.__setattr__(self, "frames", frames)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __len__(self):
        return self.T


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 16
    hidden: int = 64
    heads: int = 2
    layers: int = 2
    ffn_dim: int = 128
    kernel_width: int = 3
    conv_stride: int = 1
    vocab_size: int = 4
    dropout: float = 0.1
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("feature_dim", "hidden", "heads", "ffn_dim", "kernel_width", "vocab_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.layers < 0:
            raise ConfigurationError(f"layers must be nonnegative, got {self.layers}")
        if self.hidden % self.heads:
            raise ConfigurationError(
                f"hidden width {self.hidden} is not divisible by {self.heads} heads"
            )
        if self.hidden % 2:
            raise ConfigurationError("hidden width must be even for sinusoidal positions")
        if self.kernel_width % 2 == 0:
            raise ConfigurationError("kernel_width must be odd")
        if self.conv_stride not in (1, 2):
            raise ConfigurationError(f"conv_stride must be 1 or 2, got {self.conv_stride}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def vocab(self) -> Vocab:
        return Vocab.of_size(self.vocab_size)

    @property
    def num_symbols(self) -> int:
        return self.vocab_size + 1

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def encoder_length(self, T: int) -> int:
        return (T + self.conv_stride - 1) // self.conv_stride

    def to_dict(self) -> dict:
        return asdict(self)


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in declaration order"""
    h, f = config.hidden, config.ffn_dim
    shapes = {
        "encoder.conv.weight": (config.kernel_width, config.feature_dim, h),
        "encoder.conv.bias": (h,),
        # One extra row for the mask token
        "embedding.alignment": (config.num_symbols + 1, h),
    }
    for i in range(config.layers):
        prefix = f"layers.{i}"
        shapes.update(
            {
                f"{prefix}.ln1.gamma": (h,),
                f"{prefix}.ln1.beta": (h,),
                f"{prefix}.attn.wq": (h, h),
                f"{prefix}.attn.bq": (h,),
                f"{prefix}.attn.wk": (h, h),
                f"{prefix}.attn.bk": (h,),
                f"{prefix}.attn.wv": (h, h),
                f"{prefix}.attn.bv": (h,),
                f"{prefix}.attn.wo": (h, h),
                f"{prefix}.attn.bo": (h,),
                f"{prefix}.ln2.gamma": (h,),
                f"{prefix}.ln2.beta": (h,),
                f"{prefix}.ffn.w1": (h, f),
                f"{prefix}.ffn.b1": (f,),
                f"{prefix}.ffn.w2": (f, h),
                f"{prefix}.ffn.b2": (h,),
            }
        )
    shapes.update(
        {
            "final_ln.gamma": (h,),
            "final_ln.beta": (h,),
            "output.weight": (h, config.num_symbols),
            "output.bias": (config.num_symbols,),
        }
    )
    return shapes


class ModelParams:
    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        shapes = expected_shapes(config)
        if list(tensors) != list(shapes):
            raise InvalidInput(
                f"Parameter names do not match the config: got {list(tensors)[:4]}..."
            )
        for name, shape in shapes.items():
            if tensors[name].shape != shape:
                raise InvalidInput(
                    f"Parameter {name} has shape {tensors[name].shape}, expected {shape}"
                )
        self.config = config
        self.tensors = {
            name: np.asarray(value, dtype=config.np_dtype) for name, value in tensors.items()
        }

    @classmethod
    def initialize(cls, config: ModelConfig) -> "ModelParams":
        rng = np.random.default_rng(config.seed)
        tensors = {}
        for name, shape in expected_shapes(config).items():
            if name.endswith("gamma"):
                value = np.ones(shape)
            elif len(shape) == 1:
                value = np.zeros(shape)
            elif name == "embedding.alignment":
                value = rng.normal(0.0, 1.0, size=shape)
            elif name == "encoder.conv.weight":
                fan_in = shape[0] * shape[1]
                value = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
            else:
                value = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
            tensors[name] = value
        return cls(config, tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(value) for name, value in self.tensors.items()}

    def __repr__(self):
        count = sum(value.size for value in self.tensors.values())
        return f"{self.__class__.__name__}({len(self.tensors)} tensors, {count} values)"


@dataclass
class ActivationCache:
    ids: np.ndarray
    cols: np.ndarray
    conv_pre: np.ndarray
    input_dropout: np.ndarray | None
    layers: list[dict] = field(default_factory=list)
    final_ln: tuple = ()
    final_hidden: np.ndarray | None = None


def sinusoidal_positions(T: int, width: int) -> np.ndarray:
    position = np.arange(T)[:, None]
    div_term = np.exp(np.arange(0, width, 2) * -(np.log(10000.0) / width))
    encoding = np.zeros((T, width))
    encoding[:, 0::2] = np.sin(position * div_term)
    encoding[:, 1::2] = np.cos(position * div_term)
    return encoding


def _im2col(frames: np.ndarray, width: int, stride: int) -> np.ndarray:
    T, d = frames.shape
    pad = width // 2
    padded = np.zeros((T + 2 * pad, d), dtype=frames.dtype)
    padded[pad : pad + T] = frames
    starts = np.arange(0, T, stride)
    return np.stack([padded[s : s + width].reshape(-1) for s in starts])


def _dropout(x, rate, rng):
    if rng is None or rate == 0.0:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


def _layer_norm(x, gamma, beta):
    mean = x.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + LN_EPSILON)
    xhat = (x - mean) * inv_std
    return xhat * gamma + beta, (xhat, inv_std)


def _layer_norm_backward(dy, gamma, cache):
    xhat, inv_std = cache
    n = xhat.shape[-1]
    dxhat = dy * gamma
    dx = (inv_std / n) * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


def _softmax(scores):
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x, heads):
    T, h = x.shape
    return x.reshape(T, heads, h // heads).transpose(1, 0, 2)


def _merge_heads(x):
    H, T, dh = x.shape
    return x.transpose(1, 0, 2).reshape(T, H * dh)


def _attention(x, p, prefix, heads):
    q = _split_heads(x @ p[f"{prefix}.wq"] + p[f"{prefix}.bq"], heads)
    k = _split_heads(x @ p[f"{prefix}.wk"] + p[f"{prefix}.bk"], heads)
    v = _split_heads(x @ p[f"{prefix}.wv"] + p[f"{prefix}.bv"], heads)
    scale = 1.0 / np.sqrt(q.shape[-1])
    weights = _softmax((q @ k.transpose(0, 2, 1)) * scale)
    merged = _merge_heads(weights @ v)
    out = merged @ p[f"{prefix}.wo"] + p[f"{prefix}.bo"]
    return out, (x, q, k, v, weights, merged, scale)


def _attention_backward(dout, p, prefix, cache, grads):
    x, q, k, v, weights, merged, scale = cache
    heads = q.shape[0]
    grads[f"{prefix}.wo"] += merged.T @ dout
    grads[f"{prefix}.bo"] += dout.sum(axis=0)
    dctx = _split_heads(dout @ p[f"{prefix}.wo"].T, heads)
    dweights = dctx @ v.transpose(0, 2, 1)
    dv = weights.transpose(0, 2, 1) @ dctx
    dscores = weights * (dweights - (dweights * weights).sum(axis=-1, keepdims=True)) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 2, 1) @ q
    dx = np.zeros_like(x)
    for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
        dproj = _merge_heads(dproj)
        grads[f"{prefix}.w{name}"] += x.T @ dproj
        grads[f"{prefix}.b{name}"] += dproj.sum(axis=0)
        dx += dproj @ p[f"{prefix}.w{name}"].T
    return dx


def _feed_forward(x, p, prefix):
    pre = x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"]
    hidden = np.maximum(pre, 0.0)
    return hidden @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"], (x, pre, hidden)


def _feed_forward_backward(dout, p, prefix, cache, grads):
    x, pre, hidden = cache
    grads[f"{prefix}.w2"] += hidden.T @ dout
    grads[f"{prefix}.b2"] += dout.sum(axis=0)
    dpre = (dout @ p[f"{prefix}.w2"].T) * (pre > 0)
    grads[f"{prefix}.w1"] += x.T @ dpre
    grads[f"{prefix}.b1"] += dpre.sum(axis=0)
    return dpre @ p[f"{prefix}.w1"].T


def forward(
    params: ModelParams,
    x: FeatureSeq,
    partial: PartialAlignment,
    *,
    rng: np.random.Generator | None = None,
    return_cache: bool = False,
):
    """Per-slot log-probabilities given features and a partial alignment

    Dropout is applied only when an rng is supplied (training mode); without
    one the pass is deterministic.
    """
    config = params.config
    p = params.tensors
    dtype = config.np_dtype
    if x.dim != config.feature_dim:
        raise InvalidInput(f"Features have dimension {x.dim}, model expects {config.feature_dim}")
    T = config.encoder_length(x.T)
    if len(partial) != T:
        raise InvalidInput(
            f"Partial alignment has {len(partial)} slots, encoder produces {T} for {x.T} frames"
        )
    if partial.vocab != config.vocab:
        raise InvalidInput("Partial alignment vocabulary does not match the model")

    ids = np.asarray(partial.ids, dtype=np.int64)
    cols = _im2col(x.frames.astype(dtype), config.kernel_width, config.conv_stride)
    conv_weight = p["encoder.conv.weight"].reshape(-1, config.hidden)
    conv_pre = cols @ conv_weight + p["encoder.conv.bias"]
    hidden = np.maximum(conv_pre, 0.0) + p["embedding.alignment"][ids]
    hidden = hidden + sinusoidal_positions(T, config.hidden).astype(dtype)
    hidden, input_dropout = _dropout(hidden, config.dropout, rng)

    cache = ActivationCache(ids=ids, cols=cols, conv_pre=conv_pre, input_dropout=input_dropout)
    for i in range(config.layers):
        prefix = f"layers.{i}"
        normed, ln1 = _layer_norm(hidden, p[f"{prefix}.ln1.gamma"], p[f"{prefix}.ln1.beta"])
        attended, attn = _attention(normed, p, f"{prefix}.attn", config.heads)
        attended, attn_dropout = _dropout(attended, config.dropout, rng)
        hidden = hidden + attended
        normed, ln2 = _layer_norm(hidden, p[f"{prefix}.ln2.gamma"], p[f"{prefix}.ln2.beta"])
        fed, ffn = _feed_forward(normed, p, f"{prefix}.ffn")
        fed, ffn_dropout = _dropout(fed, config.dropout, rng)
        hidden = hidden + fed
        cache.layers.append(
            dict(
                ln1=ln1,
                attn=attn,
                attn_dropout=attn_dropout,
                ln2=ln2,
                ffn=ffn,
                ffn_dropout=ffn_dropout,
            )
        )

    final, cache.final_ln = _layer_norm(hidden, p["final_ln.gamma"], p["final_ln.beta"])
    cache.final_hidden = final
    scores = (final @ p["output.weight"] + p["output.bias"]).astype(np.float64)
    if not np.isfinite(scores).all():
        raise NumericFailure("Network produced non-finite scores; the parameters have diverged")
    lattice = LogProbLattice(scores - logsumexp(scores, axis=1)[:, None])
    if return_cache:
        return lattice, cache
    return lattice


def backward(
    params: ModelParams, cache: ActivationCache | None, grad_scores: np.ndarray
) -> dict[str, np.ndarray]:
    """Parameter gradients given the gradient with respect to the pre-softmax scores"""
    if cache is None or cache.final_hidden is None:
        raise UsageError("backward needs the activation cache from forward(return_cache=True)")
    config = params.config
    p = params.tensors
    grad_scores = np.asarray(grad_scores, dtype=config.np_dtype)
    if grad_scores.shape != (cache.final_hidden.shape[0], config.num_symbols):
        raise InvalidInput(f"Gradient has shape {grad_scores.shape}")

    grads = params.zeros_like()
    grads["output.weight"] += cache.final_hidden.T @ grad_scores
    grads["output.bias"] += grad_scores.sum(axis=0)
    dfinal = grad_scores @ p["output.weight"].T
    dhidden, dgamma, dbeta = _layer_norm_backward(dfinal, p["final_ln.gamma"], cache.final_ln)
    grads["final_ln.gamma"] += dgamma
    grads["final_ln.beta"] += dbeta

    for i in reversed(range(config.layers)):
        prefix = f"layers.{i}"
        layer = cache.layers[i]
        dfed = dhidden if layer["ffn_dropout"] is None else dhidden * layer["ffn_dropout"]
        dnormed = _feed_forward_backward(dfed, p, f"{prefix}.ffn", layer["ffn"], grads)
        dx, dgamma, dbeta = _layer_norm_backward(dnormed, p[f"{prefix}.ln2.gamma"], layer["ln2"])
        grads[f"{prefix}.ln2.gamma"] += dgamma
        grads[f"{prefix}.ln2.beta"] += dbeta
        dhidden = dhidden + dx

        dattended = dhidden if layer["attn_dropout"] is None else dhidden * layer["attn_dropout"]
        dnormed = _attention_backward(dattended, p, f"{prefix}.attn", layer["attn"], grads)
        dx, dgamma, dbeta = _layer_norm_backward(dnormed, p[f"{prefix}.ln1.gamma"], layer["ln1"])
        grads[f"{prefix}.ln1.gamma"] += dgamma
        grads[f"{prefix}.ln1.beta"] += dbeta
        dhidden = dhidden + dx

    if cache.input_dropout is not None:
        dhidden = dhidden * cache.input_dropout
    np.add.at(grads["embedding.alignment"], cache.ids, dhidden)
    dconv = dhidden * (cache.conv_pre > 0)
    grads["encoder.conv.weight"] += (cache.cols.T @ dconv).reshape(
        grads["encoder.conv.weight"].shape
    )
    grads["encoder.conv.bias"] += dconv.sum(axis=0)
    return grads


def log_parameter_summary(params: ModelParams):
    count = sum(value.size for value in params.tensors.values())
    logging.info(
        f"Model has {count} parameters across {len(params.tensors)} tensors "
        f"({params.config.layers} layers, width {params.config.hidden})"
    )

"""Multi-head attention pooling (MAP) head with a linear classifier.

One learned probe query attends over the N tokens of each example; the pooled
vector passes through a pre-norm residual MLP block and a classification
layer. Forward and backward passes are written out explicitly in numpy.

Weight matrices follow the ``x @ W`` convention (in x out) except the
classifier, which is stored as (S, C) and applied as ``y @ W.T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .checkpoint import load_tensors, save_tensors
from .errors import ValidationError
from .rng import generator, make_key

LN_EPS = 1e-6
_GELU_C = math.sqrt(2.0 / math.pi)

# Parameters excluded from decoupled weight decay.
NO_DECAY = ("bq", "bk", "bv", "bo", "ln_scale", "ln_bias", "mlp_b1", "mlp_b2", "cls_b")


@dataclass
class MapHeadParams:
    num_heads: int
    tensors: dict = field(default_factory=dict)

    @property
    def channels(self) -> int:
        return self.tensors["probe"].shape[0]

    @property
    def num_classes(self) -> int:
        return self.tensors["cls_b"].shape[0]

    def copy(self) -> "MapHeadParams":
        return MapHeadParams(self.num_heads, {k: v.copy() for k, v in self.tensors.items()})

    def __getitem__(self, name):
        return self.tensors[name]


def default_num_heads(C: int) -> int:
    h = max(1, C // 64)
    while C % h:
        h -= 1
    return h


def _xavier(rng, fan_in, fan_out, shape):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def init(C: int, S: int, num_heads: int | None = None, seed: int = 0) -> MapHeadParams:
    h = default_num_heads(C) if num_heads is None else num_heads
    if h < 1 or C % h:
        raise ValidationError(f"head count {h} does not divide C={C}")
    rng = generator(make_key("map-head-init", seed))
    z = lambda *s: np.zeros(s, dtype=np.float32)
    t = {
        "probe": _xavier(rng, 1, C, (C,)),
        "wq": _xavier(rng, C, C, (C, C)),
        "bq": z(C),
        "wk": _xavier(rng, C, C, (C, C)),
        "bk": z(C),
        "wv": _xavier(rng, C, C, (C, C)),
        "bv": z(C),
        "wo": _xavier(rng, C, C, (C, C)),
        "bo": z(C),
        "ln_scale": np.ones(C, dtype=np.float32),
        "ln_bias": z(C),
        "mlp_w1": _xavier(rng, C, 4 * C, (C, 4 * C)),
        "mlp_b1": z(4 * C),
        "mlp_w2": _xavier(rng, 4 * C, C, (4 * C, C)),
        "mlp_b2": z(C),
        "cls_w": z(S, C),
        "cls_b": z(S),
    }
    return MapHeadParams(h, t)


def _gelu_parts(x):
    """tanh-approximated GELU; also returns the tanh term for the backward pass."""
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def _gelu_grad(x, t):
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * (x * x))


def _forward(params: MapHeadParams, tokens: np.ndarray):
    p = params.tensors
    if tokens.ndim != 3:
        raise ValidationError(f"expected a (B, N, C) batch, got shape {tokens.shape}")
    B, N, C = tokens.shape
    if C != params.channels:
        raise ValidationError(f"channel mismatch: tokens have C={C}, head expects {params.channels}")
    h = params.num_heads
    d = C // h
    scale = 1.0 / math.sqrt(d)

    q = (p["probe"] @ p["wq"] + p["bq"]).reshape(h, d)
    k = (tokens @ p["wk"] + p["bk"]).reshape(B, N, h, d)
    v = (tokens @ p["wv"] + p["bv"]).reshape(B, N, h, d)
    s = np.einsum("hd,bnhd->bhn", q, k) * scale
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    a = e / e.sum(axis=-1, keepdims=True)
    o = np.einsum("bhn,bnhd->bhd", a, v).reshape(B, C)
    u = o @ p["wo"] + p["bo"]

    inv_c = np.float32(1.0 / C)
    xc = u - u.sum(axis=-1, keepdims=True) * inv_c
    inv_std = 1.0 / np.sqrt((xc * xc).sum(axis=-1, keepdims=True) * inv_c + LN_EPS)
    xhat = xc * inv_std
    ln = xhat * p["ln_scale"] + p["ln_bias"]
    h1 = ln @ p["mlp_w1"] + p["mlp_b1"]
    g, gelu_t = _gelu_parts(h1)
    y = u + g @ p["mlp_w2"] + p["mlp_b2"]
    logits = y @ p["cls_w"].T + p["cls_b"]
    cache = dict(tokens=tokens, q=q, k=k, v=v, a=a, o=o, xhat=xhat, inv_std=inv_std,
                 ln=ln, h1=h1, g=g, gelu_t=gelu_t, y=y, scale=scale)
    return y, logits, cache


def forward(params: MapHeadParams, tokens: np.ndarray):
    """Returns ``(pooled, logits)`` with shapes (B, C) and (B, S)."""
    y, logits, _ = _forward(params, tokens)
    return y, logits


def logits_of(params: MapHeadParams, tokens: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    """Logits for an (E, N, C) array, evaluated in chunks."""
    out = [forward(params, tokens[i : i + batch_size])[1] for i in range(0, len(tokens), batch_size)]
    return np.concatenate(out)


def loss_sigmoid_ce(logits: np.ndarray, targets: np.ndarray, weights=None) -> float:
    """Sigmoid cross-entropy summed over classes, averaged over the batch
    (or weighted by ``weights``, which should sum to one)."""
    per_class = np.maximum(logits, 0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    per_example = per_class.sum(axis=-1)
    if weights is None:
        return float(per_example.mean())
    return float(np.dot(weights, per_example))


_sigmoid = special.expit


def backward(params: MapHeadParams, tokens: np.ndarray, targets: np.ndarray, weights=None):
    """Loss and gradients for every parameter: ``(loss, {name: grad})``."""
    p = params.tensors
    y, logits, c = _forward(params, tokens)
    B, N, C = tokens.shape
    h = params.num_heads
    d = C // h
    if weights is None:
        weights = np.full(B, 1.0 / B, dtype=logits.dtype)
    weights = np.asarray(weights, dtype=logits.dtype)
    loss = loss_sigmoid_ce(logits, targets, weights)

    dlogits = (_sigmoid(logits) - targets) * weights[:, None]
    g = {}
    g["cls_w"] = dlogits.T @ y
    g["cls_b"] = dlogits.sum(axis=0)
    dy = dlogits @ p["cls_w"]

    # residual MLP branch
    g["mlp_w2"] = c["g"].T @ dy
    g["mlp_b2"] = dy.sum(axis=0)
    dh1 = (dy @ p["mlp_w2"].T) * _gelu_grad(c["h1"], c["gelu_t"])
    g["mlp_w1"] = c["ln"].T @ dh1
    g["mlp_b1"] = dh1.sum(axis=0)
    dln = dh1 @ p["mlp_w1"].T
    g["ln_scale"] = (dln * c["xhat"]).sum(axis=0)
    g["ln_bias"] = dln.sum(axis=0)
    dxhat = dln * p["ln_scale"]
    xhat = c["xhat"]
    du = dy + c["inv_std"] * (
        dxhat - dxhat.sum(axis=-1, keepdims=True) / C - xhat * ((dxhat * xhat).sum(axis=-1, keepdims=True) / C)
    )

    # attention pooling
    g["wo"] = c["o"].T @ du
    g["bo"] = du.sum(axis=0)
    do = (du @ p["wo"].T).reshape(B, h, d)
    a, k, v, q = c["a"], c["k"], c["v"], c["q"]
    da = np.einsum("bhd,bnhd->bhn", do, v)
    dv = np.einsum("bhn,bhd->bnhd", a, do).reshape(B * N, C)
    ds = a * (da - (a * da).sum(axis=-1, keepdims=True)) * c["scale"]
    dk = np.einsum("bhn,hd->bnhd", ds, q).reshape(B * N, C)
    dq = np.einsum("bhn,bnhd->hd", ds, k).reshape(C)

    x2 = tokens.reshape(B * N, C)
    g["wk"] = x2.T @ dk
    g["bk"] = dk.sum(axis=0)
    g["wv"] = x2.T @ dv
    g["bv"] = dv.sum(axis=0)
    g["wq"] = np.outer(p["probe"], dq)
    g["bq"] = dq
    g["probe"] = p["wq"] @ dq
    grads = {name: g[name].astype(p[name].dtype, copy=False) for name in p}
    return loss, grads


def save_params(params: MapHeadParams, path) -> None:
    save_tensors(path, params.tensors, {"kind": "map_head", "num_heads": params.num_heads})


def load_params(path) -> MapHeadParams:
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "map_head":
        raise ValidationError(f"{path} is not a MAP head checkpoint")
    return MapHeadParams(int(meta["num_heads"]), tensors)

"""Central finite differences for the MAP head, shared by unit and acceptance tests."""

import numpy as np

from frofa import map_head as mh


def perturbed_problem(seed, C=8, N=4, S=3, h=2, B=2):
    """A head with non-zero classifier (fresh init has zero classifier gradients
    upstream) plus a random batch."""
    params = mh.init(C, S, h, seed=seed)
    rng = np.random.default_rng(seed)
    params.tensors = {k: (v + rng.normal(0, 0.3, v.shape)).astype(np.float32) for k, v in params.tensors.items()}
    x = rng.normal(size=(B, N, C)).astype(np.float32)
    y = np.eye(S, dtype=np.float32)[rng.integers(0, S, B)]
    return params, x, y


def finite_difference(params, x, y, eps=1e-3):
    """Per-tensor central differences of the f32 loss."""
    out = {}
    for name, arr in params.tensors.items():
        arr = arr.copy()
        probe = mh.MapHeadParams(params.num_heads, dict(params.tensors, **{name: arr}))
        fd = np.zeros(arr.shape)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + np.float32(eps)
            plus = mh.loss_sigmoid_ce(mh.forward(probe, x)[1], y)
            arr[idx] = orig - np.float32(eps)
            minus = mh.loss_sigmoid_ce(mh.forward(probe, x)[1], y)
            arr[idx] = orig
            fd[idx] = (plus - minus) / (2 * eps)
        out[name] = fd
    return out


def max_norm_relative_error(params, x, y):
    """max |analytic - numeric| / max |numeric| over all parameters concatenated."""
    _, grads = mh.backward(params, x, y)
    fd = finite_difference(params, x, y)
    num = np.concatenate([fd[k].ravel() for k in params.tensors])
    ana = np.concatenate([grads[k].ravel() for k in params.tensors])
    return float(np.max(np.abs(num - ana)) / np.max(np.abs(num)))

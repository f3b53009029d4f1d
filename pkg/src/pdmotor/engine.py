"""Reverse-mode layer functions for the 7-layer window classifier.

Exactly the layers the network needs: valid strided 2-D convolution,
batch normalization, ReLU, global average pooling, a linear head, and
softmax cross-entropy, each as a forward/backward pair in the
(out, cache) / backward(dout, cache) style. Everything runs in float64;
layout is channels-last, (batch, height, width, channels), with
single-instance rank-3 inputs promoted to a batch of one.

Gradients are closed-form. `max_relative_gradient_error` is the
independent oracle: it re-derives every parameter gradient by central
finite differences and reports the worst relative disagreement.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBatchError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9  # fraction of the old running statistic kept per update


@dataclass
class LayerParams:
    """Learnable tensors of one Conv+BN block.

    kernel: (out_channels, in_channels, kh, kw); bias: (out_channels,);
    BN vectors are per out-channel. stride is (stride_h, stride_w).
    """

    kernel: np.ndarray
    bias: np.ndarray
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_running_mean: np.ndarray
    bn_running_var: np.ndarray
    stride: tuple[int, int] = (1, 1)

    def __post_init__(self):
        out_c = self.kernel.shape[0]
        for name in ("bias", "bn_gamma", "bn_beta", "bn_running_mean", "bn_running_var"):
            vec = getattr(self, name)
            if vec.shape != (out_c,):
                raise ShapeError(f"{name} must have shape ({out_c},), got {vec.shape}")
        if self.stride[0] < 1 or self.stride[1] < 1:
            raise ShapeError(f"stride entries must be positive, got {self.stride}")
        if np.any(self.bn_running_var <= 0):
            raise ShapeError("bn_running_var entries must be > 0")


def _to_batch(x):
    """Promote (H, W, C) to (1, H, W, C); return (array, had_batch_dim)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], False
    if x.ndim == 4:
        return x, True
    raise ShapeError(f"expected rank-3 or rank-4 input, got shape {x.shape}")


def conv_output_extent(in_extent: int, kernel: int, stride: int) -> int:
    """Valid (no padding) convolution: floor((in - k) / s) + 1."""
    if in_extent < kernel:
        raise ShapeError(f"input extent {in_extent} smaller than kernel {kernel}")
    return (in_extent - kernel) // stride + 1


def conv2d_forward(x, params: LayerParams):
    """Valid strided convolution, channels-last.

    out[n,oh,ow,oc] = sum_{i,j,c} x[n, i+sh*oh, j+sw*ow, c] * K[oc,c,i,j] + b[oc]
    """
    x, batched = _to_batch(x)
    k = params.kernel
    out_c, in_c, kh, kw = k.shape
    if x.shape[3] != in_c:
        raise ShapeError(
            f"input has {x.shape[3]} channels but kernel expects {in_c}"
        )
    sh, sw = params.stride
    oh = conv_output_extent(x.shape[1], kh, sh)
    ow = conv_output_extent(x.shape[2], kw, sw)

    out = np.empty((x.shape[0], oh, ow, out_c))
    out[:] = params.bias
    # One matmul per kernel tap: x slice (N,OH,OW,C) @ K[:,:,i,j].T (C,OC).
    for i in range(kh):
        for j in range(kw):
            xs = x[:, i : i + sh * (oh - 1) + 1 : sh, j : j + sw * (ow - 1) + 1 : sw, :]
            out += xs @ k[:, :, i, j].T
    cache = (x, params, batched, oh, ow)
    return (out if batched else out[0]), cache


def conv2d_backward(dout, cache):
    """Gradients of conv2d w.r.t. input, kernel, and bias."""
    x, params, batched, oh, ow = cache
    dout, _ = _to_batch(dout)
    k = params.kernel
    _, _, kh, kw = k.shape
    sh, sw = params.stride

    dbias = dout.sum(axis=(0, 1, 2))
    dkernel = np.zeros_like(k)
    dx = np.zeros_like(x)
    for i in range(kh):
        for j in range(kw):
            sl_h = slice(i, i + sh * (oh - 1) + 1, sh)
            sl_w = slice(j, j + sw * (ow - 1) + 1, sw)
            xs = x[:, sl_h, sl_w, :]
            # dK[oc,c,i,j] = sum_{n,oh,ow} dout[n,oh,ow,oc] * xs[n,oh,ow,c]
            dkernel[:, :, i, j] = np.tensordot(dout, xs, axes=([0, 1, 2], [0, 1, 2]))
            # Strided slices for a fixed tap are disjoint, so += is exact.
            dx[:, sl_h, sl_w, :] += dout @ k[:, :, i, j]
    return (dx if batched else dx[0]), dkernel, dbias


def batchnorm_forward(x, params: LayerParams, mode: str = "train", update_running: bool = True):
    """Per-channel batch normalization over (batch, height, width).

    Train mode uses population statistics of the current batch and, when
    update_running is set, folds them into the running statistics with
    momentum BN_MOMENTUM. Eval mode normalizes with the running statistics.
    """
    x, batched = _to_batch(x)
    gamma, beta = params.bn_gamma, params.bn_beta
    if mode == "train":
        if x.shape[0] < 2:
            raise DegenerateBatchError(
                f"batch normalization needs batch size >= 2 in train mode, got {x.shape[0]}"
            )
        mean = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
        if update_running:
            params.bn_running_mean = BN_MOMENTUM * params.bn_running_mean + (1 - BN_MOMENTUM) * mean
            params.bn_running_var = BN_MOMENTUM * params.bn_running_var + (1 - BN_MOMENTUM) * var
    elif mode == "eval":
        mean = params.bn_running_mean
        var = params.bn_running_var
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv_std
    out = gamma * xhat + beta
    cache = (xhat, gamma, inv_std, batched, mode, x.shape)
    return (out if batched else out[0]), cache


def batchnorm_backward(dout, cache):
    """Gradients of batchnorm w.r.t. input, gamma, beta."""
    xhat, gamma, inv_std, batched, mode, shape = cache
    dout, _ = _to_batch(dout)
    dgamma = (dout * xhat).sum(axis=(0, 1, 2))
    dbeta = dout.sum(axis=(0, 1, 2))
    if mode == "eval":
        dx = dout * gamma * inv_std
    else:
        m = shape[0] * shape[1] * shape[2]
        dx = (gamma * inv_std / m) * (m * dout - dbeta - xhat * dgamma)
    return (dx if batched else dx[0]), dgamma, dbeta


def relu_forward(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0)
    return out, (x > 0)


def relu_backward(dout, cache):
    return np.asarray(dout) * cache


def global_average_pool_forward(x):
    """Per-channel mean over the spatial axes: (..., H, W, C) -> (..., C)."""
    x, batched = _to_batch(x)
    out = x.mean(axis=(1, 2))
    cache = (x.shape, batched)
    return (out if batched else out[0]), cache


def global_average_pool_backward(dout, cache):
    shape, batched = cache
    n, h, w, c = shape
    dout = np.asarray(dout, dtype=np.float64).reshape(n, 1, 1, c)
    dx = np.broadcast_to(dout / (h * w), shape).copy()
    return dx if batched else dx[0]


def linear_forward(x, weight, bias):
    """Affine head: (n, C) @ weight.T + bias with weight (K, C)."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    x2 = x if batched else x[None]
    if x2.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"linear input extent {x2.shape[1]} does not match weight in-extent {weight.shape[1]}"
        )
    out = x2 @ weight.T + bias
    cache = (x2, weight, batched)
    return (out if batched else out[0]), cache


def linear_backward(dout, cache):
    x2, weight, batched = cache
    dout = np.asarray(dout, dtype=np.float64)
    dout2 = dout if dout.ndim == 2 else dout[None]
    dx = dout2 @ weight
    dweight = dout2.T @ x2
    dbias = dout2.sum(axis=0)
    return (dx if batched else dx[0]), dweight, dbias


def softmax(logits):
    """Row-wise softmax with max subtraction for stability."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy loss and its gradient w.r.t. the logits.

    logits (n, K) with labels (n,), or a single (K,) vector with an int
    label. loss = -log softmax(logits)[label]; dlogits = (softmax - onehot) / n.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    l2 = logits[None] if single else logits
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, k = l2.shape
    if y.shape != (n,):
        raise ShapeError(f"labels shape {y.shape} does not match logits batch {n}")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise IndexError(f"label out of range for {k} classes")
    probs = softmax(l2)
    loss = float(-np.log(probs[np.arange(n), y]).mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    return loss, (dlogits[0] if single else dlogits)


@dataclass
class AdamState:
    """Per-parameter Adam moment estimates.

    step_count is incremented before the bias correction, so the first
    step uses t=1.
    """

    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_param(cls, param: np.ndarray, lr: float = 0.001, **kw) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), lr=lr, **kw)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """One Adam update with bias-corrected moments; mutates param and state."""
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ShapeError(
            f"parameter/gradient/state shapes disagree: {param.shape}, {grad.shape}, {state.m.shape}"
        )
    state.step_count += 1
    t = state.step_count
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = state.m / (1 - state.beta1**t)
    v_hat = state.v / (1 - state.beta2**t)
    param -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return param


def relative_gradient_error(analytic: float, fd: float) -> float:
    return abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-8)


def max_relative_gradient_error(loss_and_grads, tensors: dict, h: float = 1e-5, loss_fn=None) -> float:
    """Finite-difference gradient oracle.

    loss_and_grads() must re-evaluate the loss and return
    (loss, {name: grad array}) for the current contents of `tensors`,
    without caching across calls. Every entry of every tensor is perturbed
    by +-h for a central difference; returns
    max |analytic - fd| / max(|analytic|, |fd|, 1e-8) over all entries.

    The loss surface of a ReLU network is only piecewise smooth: when a
    kink happens to fall inside the +-h interval, the central secant does
    not estimate the derivative at the evaluation point. Conversely, a
    parameter with a tiny (near-canceled) gradient needs a LARGER step
    before the secant rises above float64 rounding noise. A parameter
    whose first estimate disagrees is therefore re-measured on a step
    ladder (16h, h/8, h/64) and its best-agreeing estimate is kept. A
    genuinely wrong analytic gradient disagrees at every step size, so
    corrupted gradients are still detected.

    loss_fn, when given, is a cheaper loss-only evaluation used for the
    perturbed points (it must agree with loss_and_grads()[0]).
    """
    if loss_fn is None:
        loss_fn = lambda: loss_and_grads()[0]
    _, grads = loss_and_grads()
    worst = 0.0
    for name, tensor in tensors.items():
        analytic = grads[name].reshape(-1)
        if not tensor.flags.c_contiguous:
            raise ShapeError(f"tensor {name} must be contiguous for in-place perturbation")
        flat = tensor.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]

            def central(step):
                flat[idx] = orig + step
                loss_plus = loss_fn()
                flat[idx] = orig - step
                loss_minus = loss_fn()
                flat[idx] = orig
                return (loss_plus - loss_minus) / (2 * step)

            err = relative_gradient_error(analytic[idx], central(h))
            for factor in (16.0, 1 / 8, 1 / 64):
                if err <= 1e-5:
                    break
                err = min(err, relative_gradient_error(analytic[idx], central(h * factor)))
            worst = max(worst, err)
    return worst

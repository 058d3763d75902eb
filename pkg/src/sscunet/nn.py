"""Layers, losses and the Adam optimizer used by both autoencoder streams.

Every layer is a ``*_forward`` function returning ``(output, cache)`` and a
matching ``*_backward`` that turns an upstream gradient and the cache into
input (and parameter) gradients. Arrays are plain ``numpy`` float arrays;
batched inputs carry the batch on axis 0.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DegenerateInputError, DimensionError, DomainError, ParameterError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
SAD_CLAMP = 1e-7
LHALF_EPS = 1e-12
L1_EPS = 1e-9


# -- dense -----------------------------------------------------------------

def dense_forward(x, W):
    """y = W x for a vector, or row-wise for a (B, n_in) batch. No bias."""
    x = np.asarray(x, dtype=float)
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"dense: input {x.shape} does not match weight {W.shape}")
    return x @ W.T, (x, W)


def dense_backward(grad, cache):
    x, W = cache
    dx = grad @ W
    if x.ndim == 1:
        dW = np.outer(grad, x)
    else:
        dW = grad.T @ x
    return dx, dW


# -- conv / pool -----------------------------------------------------------

def conv1d_forward(x, kernels_):
    """Valid, stride-1 cross-correlation without bias.

    ``x`` is (C_in, L) or (B, C_in, L); ``kernels_`` is (C_out, C_in, k).
    """
    x = np.asarray(x, dtype=float)
    kernels_ = np.asarray(kernels_, dtype=float)
    single = x.ndim == 2
    xb = x[None] if single else x
    if xb.ndim != 3 or kernels_.ndim != 3 or xb.shape[1] != kernels_.shape[1]:
        raise DimensionError(f"conv1d: input {x.shape} incompatible with kernels {kernels_.shape}")
    if xb.shape[2] < kernels_.shape[2]:
        raise DimensionError(
            f"conv1d: sequence length {xb.shape[2]} shorter than kernel {kernels_.shape[2]}")
    xb = np.ascontiguousarray(xb)
    kernels_ = np.ascontiguousarray(kernels_)
    out = kernels.conv1d_forward(xb, kernels_)
    return (out[0] if single else out), (xb, kernels_, single)


def conv1d_backward(grad, cache):
    xb, k, single = cache
    g = np.ascontiguousarray(grad[None] if single else grad, dtype=float)
    dx, dk = kernels.conv1d_backward(g, xb, k)
    return (dx[0] if single else dx), dk


def maxpool1d_forward(x):
    """Max-pool with window 2 and stride 2 along the last axis.

    Returns ``(out, indices)``; an odd trailing element is dropped and ties
    resolve to the first position.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 2
    xb = x[None] if single else x
    if xb.ndim != 3:
        raise DimensionError(f"maxpool1d: expected (C, L) or (B, C, L), got {x.shape}")
    if xb.shape[2] < 2:
        raise DimensionError("maxpool1d: sequence length must be at least 2")
    out, idx = kernels.maxpool1d_forward(np.ascontiguousarray(xb))
    if single:
        return out[0], idx[0]
    return out, idx


def maxpool1d_backward(grad, idx, length):
    single = grad.ndim == 2
    g = grad[None] if single else grad
    i = idx[None] if single else idx
    dx = kernels.maxpool1d_backward(np.ascontiguousarray(g, dtype=float),
                                    np.ascontiguousarray(i, dtype=np.int64), length)
    return dx[0] if single else dx


# -- activations / regularizers --------------------------------------------

def relu_forward(x):
    x = np.asarray(x, dtype=float)
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def relu_backward(grad, mask):
    return grad * mask


@dataclass
class BatchNormState:
    """Affine parameters and running statistics over ``n`` features."""
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def create(cls, n):
        return cls(np.ones(n), np.zeros(n), np.zeros(n), np.ones(n))


def batchnorm_forward(X, state, mode="train"):
    """Per-feature batch normalization of a (B, n) batch.

    In train mode the batch statistics are used and the running statistics
    are updated in place; eval mode uses the running statistics only.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != state.gamma.shape[0]:
        raise DimensionError(f"batchnorm: input {X.shape} vs {state.gamma.shape[0]} features")
    if mode == "train":
        mu = X.mean(axis=0)
        var = X.var(axis=0)
        state.running_mean *= state.momentum
        state.running_mean += (1.0 - state.momentum) * mu
        state.running_var *= state.momentum
        state.running_var += (1.0 - state.momentum) * var
    elif mode == "eval":
        mu = state.running_mean
        var = state.running_var
    else:
        raise ParameterError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (X - mu) * inv_std
    out = state.gamma * xhat + state.beta
    return out, (xhat, inv_std, state.gamma.copy(), mode)


def batchnorm_backward(grad, cache):
    """Returns (dX, dgamma, dbeta)."""
    xhat, inv_std, gamma, mode = cache
    dgamma = (grad * xhat).sum(axis=0)
    dbeta = grad.sum(axis=0)
    dxhat = grad * gamma
    if mode == "eval":
        return dxhat * inv_std, dgamma, dbeta
    B = grad.shape[0]
    dX = inv_std / B * (B * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dX, dgamma, dbeta


def dropout_forward(x, rate, rng, mode="train", mask=None):
    """Inverted dropout. ``mask`` may be passed to replay a frozen draw."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    x = np.asarray(x, dtype=float)
    if mode == "eval" or rate == 0.0:
        return x.copy(), None
    if mask is None:
        mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(grad, mask):
    return grad if mask is None else grad * mask


def l1_normalize_forward(h, eps=L1_EPS):
    """x = h / (||h||_1 + eps) along the last axis (h is nonnegative)."""
    h = np.asarray(h, dtype=float)
    denom = h.sum(axis=-1, keepdims=True) + eps
    return h / denom, (h, denom)


def l1_normalize_backward(grad, cache):
    h, denom = cache
    return grad / denom - (grad * h).sum(axis=-1, keepdims=True) / denom ** 2


def l1_normalize(h, eps=L1_EPS):
    return l1_normalize_forward(h, eps)[0]


def softmax_forward(z):
    """Row-wise softmax along the last axis."""
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)
    return out, out


def softmax_backward(grad, out):
    return out * (grad - (grad * out).sum(axis=-1, keepdims=True))


# -- losses -----------------------------------------------------------------

def sad_forward(y, yhat, clamp=SAD_CLAMP):
    """Spectral angle (radians) between rows of ``y`` and ``yhat``.

    Works on single vectors or on (B, l) batches. The angle itself is exact;
    the backward pass evaluates the arccos derivative at a cosine clamped to
    [-1 + clamp, 1 - clamp] so it stays finite for (anti)parallel inputs.
    """
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise DimensionError(f"sad: shapes {y.shape} and {yhat.shape} differ")
    ny = np.linalg.norm(y, axis=-1)
    nh = np.linalg.norm(yhat, axis=-1)
    if np.any(ny == 0) or np.any(nh == 0):
        raise DegenerateInputError("sad: zero-norm spectrum")
    cos = np.clip((y * yhat).sum(axis=-1) / (ny * nh), -1.0, 1.0)
    c = np.clip(cos, -1 + clamp, 1 - clamp)
    return np.arccos(cos), (y, yhat, ny, nh, cos, c)


def sad_backward(grad, cache):
    """Gradient of the angle with respect to ``yhat``."""
    y, yhat, ny, nh, cos, c = cache
    dang_dcos = -1.0 / np.sqrt(1.0 - c * c)
    g = np.asarray(grad * dang_dcos)[..., None]
    dcos = y / (ny * nh)[..., None] - cos[..., None] * yhat / (nh * nh)[..., None]
    return g * dcos


def sad(y, yhat):
    return sad_forward(y, yhat)[0]


def mse_forward(y, yhat):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise DimensionError(f"mse: shapes {y.shape} and {yhat.shape} differ")
    diff = yhat - y
    return float(np.mean(diff * diff)), diff


def mse_backward(grad, diff):
    return grad * 2.0 * diff / diff.size


def mse(y, yhat):
    return mse_forward(y, yhat)[0]


def l_half_forward(x, eps=LHALF_EPS):
    """Smoothed L1/2 sparsity term sum_i sqrt(x_i + eps) - p sqrt(eps) per row."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("l_half: negative entry")
    root = np.sqrt(x + eps)
    return root.sum(axis=-1) - x.shape[-1] * np.sqrt(eps), root


def l_half_backward(grad, root):
    return np.asarray(grad, dtype=float)[..., None] * 0.5 / root


def l_half(x, eps=LHALF_EPS):
    return l_half_forward(x, eps)[0]


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update applied in place to ``params`` (a dict).

    Moment buffers are created lazily per key; ``state.t`` advances by one.
    """
    if lr <= 0:
        raise ParameterError("learning rate must be positive")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"adam: gradient for {name} has shape {g.shape}, param {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# -- gradient checking -----------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict
    tol: float

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self):
        return self.max_error < self.tol


def relative_error(a, b):
    """Norm-wise relative error max|a-b| / max(max|a|, max|b|)."""
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(a - b)) / scale)


def numerical_gradient(f, x, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def grad_check(f, inputs, analytic, tol=1e-4, h=1e-5):
    """Compare ``analytic`` gradients against central differences of ``f``.

    ``inputs`` maps names to arrays that ``f`` reads (they are perturbed in
    place and restored); ``analytic`` maps the same names to gradients.
    """
    errors = {}
    for name, x in inputs.items():
        num = numerical_gradient(f, x, h)
        errors[name] = relative_error(analytic[name], num)
    return GradCheckReport(errors, tol)

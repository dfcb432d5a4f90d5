"""Minimal neural network stack with exact backpropagation.

Layers operate on numpy arrays (batch-first: images are [B,C,H,W], feature
vectors [B,D]) and keep whatever forward state their backward pass needs.
Gradients accumulate into Param.grad so a shared subnetwork can receive
contributions from several loss paths within one optimizer step. Parameters
default to float32; gradient-check code builds float64 networks.

Convolutions are realized as one GEMM per layer over an im2col matrix laid
out (C*kh*kw, B*H*W) so both the patch copy and the matmul stay contiguous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_EPS = 1e-12


class ShapeError(ValueError):
    pass


def _check_shape(got, want, what):
    if tuple(got) != tuple(want):
        raise ShapeError(f"{what}: expected shape {tuple(want)}, got {tuple(got)}")


class Param:
    """A trainable array with an accumulating gradient buffer."""

    __slots__ = ("name", "data", "grad")

    def __init__(self, name, data):
        self.name = name
        self.data = np.ascontiguousarray(data)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Param({self.name}, shape={self.data.shape})"


def he_uniform(rng, shape, fan_in, dtype):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    def params(self):
        return []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy, need_input_grad=True):
        raise NotImplementedError


class FullyConnected(Layer):
    def __init__(self, in_dim, out_dim, rng, dtype=np.float32, name="fc"):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.w = Param(f"{name}.w", he_uniform(rng, (out_dim, in_dim), in_dim, dtype))
        self.b = Param(f"{name}.b", np.zeros(out_dim, dtype=dtype))
        self._x = None

    def params(self):
        return [self.w, self.b]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"{self.w.name}: expected input (B, {self.in_dim}), got {x.shape}")
        self._x = x
        return x @ self.w.data.T + self.b.data

    def backward(self, dy, need_input_grad=True):
        self.w.grad += dy.T @ self._x
        self.b.grad += dy.sum(axis=0)
        return dy @ self.w.data if need_input_grad else None


class Conv2D(Layer):
    """3x3-style convolution, stride 1, zero padding.

    Internally the padded input lives channel-major as (C, B, Hp, Wp) so the
    im2col matrix (C*k*k, B*H*W) is built from nine contiguous block copies
    and the convolution itself is a single GEMM.
    """

    def __init__(self, in_ch, out_ch, k=3, stride=1, pad=1, rng=None, dtype=np.float32, name="conv"):
        if stride != 1:
            raise ValueError("only stride 1 is supported")
        self.in_ch, self.out_ch, self.k, self.pad = in_ch, out_ch, k, pad
        self.w = Param(f"{name}.w", he_uniform(rng, (out_ch, in_ch, k, k), in_ch * k * k, dtype))
        self.b = Param(f"{name}.b", np.zeros(out_ch, dtype=dtype))
        self._col = None
        self._x_shape = None

    def params(self):
        return [self.w, self.b]

    def _w_matrix(self):
        # rows ordered (di, dj, c) to match im2col block layout
        return self.w.data.transpose(0, 2, 3, 1).reshape(self.out_ch, -1)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(f"{self.w.name}: expected input (B, {self.in_ch}, H, W), got {x.shape}")
        b, c, h, w = x.shape
        p, k = self.pad, self.k
        out_h, out_w = h + 2 * p - k + 1, w + 2 * p - k + 1
        xp = np.zeros((c, b, h + 2 * p, w + 2 * p), dtype=x.dtype)
        xp[:, :, p : p + h, p : p + w] = x.transpose(1, 0, 2, 3)
        col = np.empty((k * k * c, b * out_h * out_w), dtype=x.dtype)
        for di in range(k):
            for dj in range(k):
                block = xp[:, :, di : di + out_h, dj : dj + out_w]
                col[(di * k + dj) * c : (di * k + dj + 1) * c] = block.reshape(c, -1)
        self._col = col
        self._x_shape = x.shape
        out = self._w_matrix() @ col
        out += self.b.data[:, None]
        return out.reshape(self.out_ch, b, out_h, out_w).transpose(1, 0, 2, 3)

    def backward(self, dy, need_input_grad=True):
        b, _, out_h, out_w = dy.shape
        _, c, h, w = self._x_shape
        p, k = self.pad, self.k
        dy_flat = np.ascontiguousarray(dy.transpose(1, 0, 2, 3)).reshape(self.out_ch, -1)
        dwm = dy_flat @ self._col.T
        self.w.grad += dwm.reshape(self.out_ch, k, k, c).transpose(0, 3, 1, 2)
        self.b.grad += dy_flat.sum(axis=1)
        if not need_input_grad:
            self._col = None
            return None
        dcol = self._w_matrix().T @ dy_flat
        dxp = np.zeros((c, b, h + 2 * p, w + 2 * p), dtype=dy_flat.dtype)
        for di in range(k):
            for dj in range(k):
                block = dcol[(di * k + dj) * c : (di * k + dj + 1) * c].reshape(c, b, out_h, out_w)
                dxp[:, :, di : di + out_h, dj : dj + out_w] += block
        self._col = None
        return dxp[:, :, p : p + h, p : p + w].transpose(1, 0, 2, 3)


class ReLU(Layer):
    def forward(self, x):
        np.maximum(x, 0.0, out=x)  # conv/fc outputs are ours to clobber
        self._y = x
        return x

    def backward(self, dy, need_input_grad=True):
        dy = dy * (self._y > 0)
        return dy


class MaxPool2(Layer):
    """2x2 max pooling, stride 2; a trailing odd row/column is dropped.

    Gradient routes to the first window position attaining the max, in fixed
    (top-left, top-right, bottom-left, bottom-right) order.
    """

    def forward(self, x):
        b, c, h, w = x.shape
        oh, ow = h // 2, w // 2
        views = (
            x[:, :, 0 : oh * 2 : 2, 0 : ow * 2 : 2],
            x[:, :, 0 : oh * 2 : 2, 1 : ow * 2 : 2],
            x[:, :, 1 : oh * 2 : 2, 0 : ow * 2 : 2],
            x[:, :, 1 : oh * 2 : 2, 1 : ow * 2 : 2],
        )
        out = np.maximum(np.maximum(views[0], views[1]), np.maximum(views[2], views[3]))
        self._views = views
        self._out = out
        self._x_shape = x.shape
        return out

    def backward(self, dy, need_input_grad=True):
        b, c, h, w = self._x_shape
        oh, ow = h // 2, w // 2
        dx = np.zeros((b, c, h, w), dtype=dy.dtype)
        targets = (
            dx[:, :, 0 : oh * 2 : 2, 0 : ow * 2 : 2],
            dx[:, :, 0 : oh * 2 : 2, 1 : ow * 2 : 2],
            dx[:, :, 1 : oh * 2 : 2, 0 : ow * 2 : 2],
            dx[:, :, 1 : oh * 2 : 2, 1 : ow * 2 : 2],
        )
        remaining = np.ones(dy.shape, dtype=bool)
        for view, target in zip(self._views, targets):
            hit = (view == self._out) & remaining
            target[...] = dy * hit
            remaining &= ~hit
        self._views = self._out = None
        return dx


class Flatten(Layer):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy, need_input_grad=True):
        return dy.reshape(self._shape)


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy, need_input_grad=True):
        for i in range(len(self.layers) - 1, -1, -1):
            dy = self.layers[i].backward(dy, need_input_grad=need_input_grad or i > 0)
        return dy


def softmax(logits):
    """Row-wise softmax, computed with max subtraction."""
    x = np.asarray(logits)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def weighted_cross_entropy(pred, gold, weights=None):
    """Mean of -w[gold] * log(pred[gold] + eps) over the batch.

    `pred` holds probability rows; `gold` integer categories.
    """
    p = np.atleast_2d(np.asarray(pred))
    g = np.atleast_1d(np.asarray(gold, dtype=np.int64))
    if np.any(p < -1e-6) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-4):
        raise ValueError("pred rows must be probability distributions")
    if g.min() < 0 or g.max() >= p.shape[-1]:
        raise ValueError(f"gold labels out of range [0, {p.shape[-1]})")
    w = np.ones(p.shape[-1]) if weights is None else np.asarray(weights, dtype=np.float64)
    picked = p[np.arange(len(g)), g].astype(np.float64)
    return float(np.mean(-w[g] * np.log(picked + LOG_EPS)))


def softmax_ce_grad(probs, gold, weights=None, scale=1.0):
    """Gradient of the weighted CE (batch mean) wrt the pre-softmax logits."""
    p = np.atleast_2d(probs)
    g = np.atleast_1d(np.asarray(gold, dtype=np.int64))
    w = np.ones(p.shape[-1], dtype=p.dtype) if weights is None else np.asarray(weights, dtype=p.dtype)
    dlogits = p.copy()
    dlogits[np.arange(len(g)), g] -= 1.0
    dlogits *= (w[g] * (scale / len(g)))[:, None]
    return dlogits


def multitask_loss(l_tsr, l_ctc, lam):
    """(1 - lam) * l_tsr + lam * l_ctc."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0,1], got {lam}")
    return (1.0 - lam) * l_tsr + lam * l_ctc


def class_weights_from_counts(counts):
    """Inverse-frequency weights, mean 1 on balanced data: total / (k * count)."""
    c = np.asarray(counts, dtype=np.float64)
    if c.min() < 0 or c.sum() == 0:
        raise ValueError("counts must be nonnegative with at least one positive")
    return c.sum() / (len(c) * np.maximum(c, 1.0))


def sgd_step(data, grad, velocity, lr, momentum):
    """In-place momentum update: v <- momentum*v + g; p <- p - lr*v."""
    velocity *= momentum
    velocity += grad
    data -= lr * velocity


class SGD:
    def __init__(self, params, lr=0.01, momentum=0.9):
        if lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0,1)")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p, v in zip(self.params, self.velocity):
            _check_shape(p.grad.shape, p.data.shape, p.name)
            sgd_step(p.data, p.grad, v, self.lr, self.momentum)


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    worst_param: str
    checked: int

    @property
    def passed(self):
        return self.max_rel_error < self.tol


def grad_check(loss_fn, grad_fn, params, eps=1e-5, tol=1e-4, samples_per_param=8, rng=None):
    """Compare analytic gradients against central finite differences.

    `loss_fn()` evaluates the scalar loss; `grad_fn()` evaluates it and
    fills every Param.grad. A random sample of entries per parameter is
    perturbed by +-eps. Relative error is |num - ana| / max(|num|+|ana|, 1e-8).
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    grad_fn()
    analytic = {p.name: p.grad.copy() for p in params}

    worst, worst_name, checked = 0.0, "", 0
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.shape[0]
        idxs = np.arange(n) if n <= samples_per_param else rng.choice(n, size=samples_per_param, replace=False)
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + eps
            lp = loss_fn()
            flat[idx] = orig - eps
            lm = loss_fn()
            flat[idx] = orig
            num = (lp - lm) / (2.0 * eps)
            ana = float(analytic[p.name].reshape(-1)[idx])
            rel = abs(num - ana) / max(abs(num) + abs(ana), 1e-8)
            checked += 1
            if rel > worst:
                worst, worst_name = rel, f"{p.name}[{idx}]"
    return GradCheckReport(max_rel_error=worst, tol=tol, worst_param=worst_name, checked=checked)

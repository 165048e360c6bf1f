"""Dense float64 kernels with hand-derived backward passes, plus Adam.

Forward functions are pure.  Each ``*_backward`` takes whatever the forward
saw (inputs or outputs, as noted), together with the upstream gradient, and
returns exact analytic gradients.  Everything is plain numpy in double
precision so central-difference checks hold to tight tolerances.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = [
    "LN_EPS",
    "BCE_CLIP",
    "linear",
    "linear_backward",
    "relu",
    "relu_backward",
    "layer_norm",
    "layer_norm_backward",
    "softmax_rows",
    "softmax_rows_backward",
    "sigmoid",
    "sigmoid_backward",
    "bce_loss",
    "bce_loss_backward",
    "bmm",
    "bmm_backward",
    "Adam",
    "grad_check",
]

LN_EPS = 1e-5      # inside the layer-norm square root
BCE_CLIP = 1e-12   # probability clamp before taking logs
_LN2 = float(np.log(2.0))


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map ``x @ w + b`` with a (1, cols) bias row."""
    return x @ w + b


def linear_backward(x, w, grad):
    """Gradients (dx, dw, db) of ``linear`` given the upstream gradient."""
    return grad @ w.T, x.T @ grad, grad.sum(axis=0, keepdims=True)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x, grad):
    # Subgradient at 0 is taken as 0.
    return np.where(x > 0, grad, 0.0)


def layer_norm(x: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    """Per-row standardization, no learned affine terms."""
    mu = x.mean(axis=-1, keepdims=True)
    var = np.square(x - mu).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def layer_norm_backward(x, grad, eps: float = LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    var = np.square(x - mu).mean(axis=-1, keepdims=True)
    sig = np.sqrt(var + eps)
    y = (x - mu) / sig
    gm = grad.mean(axis=-1, keepdims=True)
    gym = (grad * y).mean(axis=-1, keepdims=True)
    return (grad - gm - y * gym) / sig


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by subtracting the row maximum."""
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def softmax_rows_backward(p, grad):
    """Backward through softmax given its output ``p``."""
    return p * (grad - (grad * p).sum(axis=-1, keepdims=True))


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid_backward(y, grad):
    """Backward through sigmoid given its output ``y``."""
    return grad * y * (1.0 - y)


def bce_loss(o: np.ndarray, target: np.ndarray) -> float:
    """Mean base-2 binary cross-entropy over all entries.

    Probabilities are clamped to ``[BCE_CLIP, 1 - BCE_CLIP]`` so binary
    targets never produce infinities.
    """
    if o.shape != target.shape:
        raise ValueError(f"shape mismatch: {o.shape} vs {target.shape}")
    oc = np.clip(o, BCE_CLIP, 1.0 - BCE_CLIP)
    return float(-(target * np.log2(oc) + (1.0 - target) * np.log2(1.0 - oc)).mean())


def bce_loss_backward(o, target):
    """Gradient of :func:`bce_loss` with respect to the probabilities."""
    if o.shape != target.shape:
        raise ValueError(f"shape mismatch: {o.shape} vs {target.shape}")
    oc = np.clip(o, BCE_CLIP, 1.0 - BCE_CLIP)
    return (oc - target) / (oc * (1.0 - oc) * _LN2 * o.size)


def bmm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stacked matrix product: (B, n, m) @ (B, m, k) -> (B, n, k)."""
    return a @ b


def bmm_backward(a, b, grad):
    """Gradients (da, db) of ``bmm`` given the upstream gradient."""
    return grad @ b.swapaxes(-2, -1), a.swapaxes(-2, -1) @ grad


class Adam:
    """Bias-corrected Adam over a dict of named parameter arrays.

    State is keyed by parameter name and created lazily on the first step;
    updates happen in place.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def grad_check(
    f: Callable,
    params: np.ndarray | dict[str, np.ndarray],
    h: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Worst relative error of analytic vs central-difference gradients.

    ``f(params)`` must return ``(value, grads)`` where ``grads`` mirrors the
    structure of ``params`` (one array, or a dict of arrays).  Parameters
    are perturbed in place and restored.  The relative error denominator is
    floored so coordinates with near-zero gradients do not dominate.
    """
    single = isinstance(params, np.ndarray)
    arrays = {"x": params} if single else params
    _, grads = f(params)
    if single:
        grads = {"x": grads}
    worst = 0.0
    for name, arr in arrays.items():
        g = grads[name]
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            fp = f(params)[0]
            arr[idx] = orig - h
            fm = f(params)[0]
            arr[idx] = orig
            num = (fp - fm) / (2.0 * h)
            ana = float(g[idx])
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
    return worst

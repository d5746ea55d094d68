"""Minimal deterministic neural-network kernel.

Everything is float64 and batch-first: sequence tensors are [batch, time,
channels], flat tensors [batch, features].  Each layer caches what its exact
analytic backward pass needs; there is no autograd.  All randomness flows
through numpy Generators (PCG64) handed in explicitly, so identical seeds give
bit-identical runs.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError, ParameterError, ShapeError

LOG_EPS = 1e-12        # floor inside the cross-entropy log
ADAM_EPS = 1e-8        # added outside the square root


def glorot_uniform(shape, fan_in, fan_out, rng) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _sigmoid(z):
    # two-branch form keeps exp() off large positive arguments
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Layer:
    """Common surface: forward caches, backward consumes the cache once."""

    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class Conv1D(Layer):
    """Valid-padding 1-D convolution.

    out[b, t, o] = bias[o] + sum_{k, c} w[o, c, k] * in[b, t*stride + k, c]
    """

    def __init__(self, in_channels, out_channels, kernel_width, stride=1, rng=None):
        super().__init__()
        if kernel_width < 1 or stride < 1:
            raise ParameterError("kernel_width and stride must be >= 1")
        if rng is None:
            rng = np.random.default_rng(0)
        fan_in = in_channels * kernel_width
        fan_out = out_channels * kernel_width
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_width = kernel_width
        self.stride = stride
        self.params = {
            "w": glorot_uniform((out_channels, in_channels, kernel_width), fan_in, fan_out, rng),
            "b": np.zeros(out_channels),
        }
        self._cache = None

    def out_length(self, t: int) -> int:
        if t < self.kernel_width:
            raise ShapeError(
                f"input length {t} shorter than kernel width {self.kernel_width}"
            )
        return (t - self.kernel_width) // self.stride + 1

    def forward(self, x, train=False):
        b, t, c = x.shape
        if c != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} channels, got {c}")
        t_out = self.out_length(t)
        k, s = self.kernel_width, self.stride
        idx = (np.arange(t_out) * s)[:, None] + np.arange(k)[None, :]
        windows = x[:, idx, :]                              # [b, t_out, k, c]
        w_mat = self.params["w"].transpose(2, 1, 0).reshape(k * c, self.out_channels)
        y = windows.reshape(b, t_out, k * c) @ w_mat + self.params["b"]
        self._cache = (x.shape, windows)
        return y

    def backward(self, grad):
        (bshape, windows) = self._cache
        b, t, c = bshape
        k, s = self.kernel_width, self.stride
        t_out = grad.shape[1]
        flat_win = windows.reshape(b * t_out, k * c)
        flat_grad = grad.reshape(b * t_out, self.out_channels)
        dw_mat = flat_win.T @ flat_grad                     # [k*c, o]
        self.grads = {
            "w": dw_mat.reshape(k, c, self.out_channels).transpose(2, 1, 0),
            "b": grad.sum(axis=(0, 1)),
        }
        dx = np.zeros(bshape)
        w = self.params["w"]
        for kk in range(k):
            # every window touches in[t*s + kk]; slices are disjoint per kk
            dx[:, kk : kk + t_out * s : s, :] += grad @ w[:, :, kk]
        return dx


class MaxPool1D(Layer):
    """Non-padded max pooling; gradient routes to the first maximum per window."""

    def __init__(self, width, stride=None):
        super().__init__()
        if width < 1:
            raise ParameterError("pool width must be >= 1")
        self.width = width
        self.stride = stride if stride is not None else width
        if self.stride < 1:
            raise ParameterError("pool stride must be >= 1")
        self._cache = None

    def out_length(self, t: int) -> int:
        if t < self.width:
            raise ShapeError(f"input length {t} shorter than pool width {self.width}")
        return (t - self.width) // self.stride + 1

    def forward(self, x, train=False):
        b, t, c = x.shape
        t_out = self.out_length(t)
        idx = (np.arange(t_out) * self.stride)[:, None] + np.arange(self.width)[None, :]
        windows = x[:, idx, :]                              # [b, t_out, w, c]
        arg = windows.argmax(axis=2)                        # first max on ties
        y = np.take_along_axis(windows, arg[:, :, None, :], axis=2)[:, :, 0, :]
        self._cache = (x.shape, idx, arg)
        return y

    def backward(self, grad):
        bshape, idx, arg = self._cache
        b, t, c = bshape
        t_out = grad.shape[1]
        dx = np.zeros(bshape)
        # time position of each routed gradient: window start + argmax offset
        starts = (np.arange(t_out) * self.stride)[None, :, None]
        time_pos = starts + arg                             # [b, t_out, c]
        b_idx = np.arange(b)[:, None, None]
        c_idx = np.arange(c)[None, None, :]
        np.add.at(dx, (np.broadcast_to(b_idx, arg.shape),
                       time_pos,
                       np.broadcast_to(c_idx, arg.shape)), grad)
        return dx


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x, train=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._mask, grad, 0.0)


class Dropout(Layer):
    """Inverted dropout: active units are rescaled by 1/(1-rate) at train time
    so inference is the identity."""

    def __init__(self, rate, rng=None):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ParameterError(f"dropout rate {rate} outside [0, 1)")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._mask = None

    def forward(self, x, train=False):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) >= self.rate) / keep
        return x * self._mask

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask


class Dense(Layer):
    def __init__(self, in_dim, out_dim, rng=None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.params = {
            "w": glorot_uniform((in_dim, out_dim), in_dim, out_dim, rng),
            "b": np.zeros(out_dim),
        }
        self._x = None

    def forward(self, x, train=False):
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"expected {self.in_dim} inputs, got {x.shape[-1]}")
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, grad):
        self.grads = {
            "w": self._x.T @ grad,
            "b": grad.sum(axis=0),
        }
        return grad @ self.params["w"].T


class LSTM(Layer):
    """Single-direction LSTM with standard gating.

    z = x_t Wx + h_{t-1} Wh + b, gate slices ordered (input, forget,
    candidate, output); c_t = f*c + i*g, h_t = o*tanh(c_t).  Initial h and c
    are zero.  Weights init uniform +-1/sqrt(hidden); forget bias starts at 1.
    """

    def __init__(self, input_size, hidden_size, return_sequences=False, rng=None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        H = hidden_size
        limit = 1.0 / np.sqrt(H)
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0
        self.input_size = input_size
        self.hidden_size = H
        self.return_sequences = return_sequences
        self.params = {
            "wx": rng.uniform(-limit, limit, size=(input_size, 4 * H)),
            "wh": rng.uniform(-limit, limit, size=(H, 4 * H)),
            "b": b,
        }
        self._cache = None

    def forward(self, x, train=False):
        bsz, T, F = x.shape
        if F != self.input_size:
            raise ShapeError(f"expected {self.input_size} features, got {F}")
        if T < 1:
            raise ShapeError("LSTM needs at least one time step")
        H = self.hidden_size
        wx, wh, bias = self.params["wx"], self.params["wh"], self.params["b"]
        h = np.zeros((bsz, H))
        c = np.zeros((bsz, H))
        steps = []
        hs = np.empty((bsz, T, H))
        for t in range(T):
            z = x[:, t, :] @ wx + h @ wh + bias
            i = _sigmoid(z[:, :H])
            f = _sigmoid(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = _sigmoid(z[:, 3 * H:])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            steps.append((h, i, f, g, o, c_prev, tc))   # h here is h_{t-1}
            h = o * tc
            hs[:, t, :] = h
        self._cache = (x, steps, hs)
        return hs if self.return_sequences else hs[:, -1, :]

    def backward(self, grad):
        x, steps, hs = self._cache
        bsz, T, F = x.shape
        H = self.hidden_size
        wx, wh = self.params["wx"], self.params["wh"]
        if self.return_sequences:
            dh_seq = grad
        else:
            dh_seq = np.zeros((bsz, T, H))
            dh_seq[:, -1, :] = grad
        dwx = np.zeros_like(wx)
        dwh = np.zeros_like(wh)
        db = np.zeros(4 * H)
        dx = np.empty_like(x)
        dh_next = np.zeros((bsz, H))
        dc_next = np.zeros((bsz, H))
        for t in range(T - 1, -1, -1):
            h_prev, i, f, g, o, c_prev, tc = steps[t]
            dh = dh_seq[:, t, :] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dc_next = dc * f
            dz = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g * g),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            dwx += x[:, t, :].T @ dz
            dwh += h_prev.T @ dz
            db += dz.sum(axis=0)
            dx[:, t, :] = dz @ wx.T
            dh_next = dz @ wh.T
        self.grads = {"wx": dwx, "wh": dwh, "b": db}
        return dx


class Softmax(Layer):
    """Row-wise softmax with max subtraction for stability."""

    def __init__(self):
        super().__init__()
        self._p = None

    def forward(self, x, train=False):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        self._p = e / e.sum(axis=-1, keepdims=True)
        return self._p

    def backward(self, grad):
        p = self._p
        return p * (grad - (grad * p).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, targets: np.ndarray):
    """Mean categorical cross-entropy and its gradient at the logits.

    Expects softmax output rows (sum 1 within 1e-9) and one-hot targets; the
    fused gradient (p - y) / batch assumes probs came from a softmax.
    """
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if probs.shape != targets.shape or probs.ndim != 2:
        raise ShapeError(f"probs {probs.shape} vs targets {targets.shape}")
    if np.abs(probs.sum(axis=1) - 1.0).max() > 1e-9:
        raise InputError("probability rows must sum to 1")
    one_hot = np.all((targets == 0.0) | (targets == 1.0)) and np.all(
        targets.sum(axis=1) == 1.0
    )
    if not one_hot:
        raise InputError("targets must be one-hot rows")
    n = probs.shape[0]
    loss = float(-(targets * np.log(probs + LOG_EPS)).sum() / n)
    dlogits = (probs - targets) / n
    return loss, dlogits


class Adam:
    """Adam over a named parameter dict; updates happen in place.

    theta -= lr * m_hat / (sqrt(v_hat) + eps), the epsilon outside the root.
    """

    def __init__(self, params: dict, lr=0.001, beta1=0.9, beta2=0.999, eps=ADAM_EPS):
        if lr <= 0:
            raise ParameterError("learning rate must be > 0")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ParameterError("betas must lie in [0, 1)")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            p = self.params[name]
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / bias1
            v_hat = v / bias2
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def grad_check(forward, params: np.ndarray, analytic: np.ndarray, h=1e-5):
    """Max relative error between analytic gradients and central differences.

    `forward` maps the flat parameter vector to a scalar loss.  Used by the
    test-suite oracles; lives here so every layer is checked the same way.
    """
    params = params.astype(np.float64)
    numeric = np.empty_like(params)
    for j in range(params.size):
        orig = params[j]
        params[j] = orig + h
        up = forward(params)
        params[j] = orig - h
        down = forward(params)
        params[j] = orig
        numeric[j] = (up - down) / (2.0 * h)
    worst = 0.0
    for a, n in zip(analytic.ravel(), numeric.ravel()):
        scale = max(abs(a), abs(n))
        if scale < 1e-7:
            continue
        worst = max(worst, abs(a - n) / scale)
    return worst

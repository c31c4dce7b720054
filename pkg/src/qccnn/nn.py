"""Classical layers with explicit forward/backward passes, loss and Adam.

Every layer exposes ``params`` and ``grads`` dicts (name -> ndarray),
``forward(x, training)`` and ``backward(grad_out) -> grad_in``. Layers cache
what they need from the last forward call. All arithmetic is float64.
"""

import logging

import numpy as np

from .errors import ConfigurationError, UsageError

log = logging.getLogger(__name__)


def conv_param_count(k, in_channels, out_channels, dims=2, groups=1):
    """``(k**dims * in_channels / groups + 1) * out_channels``."""
    if in_channels % groups or out_channels % groups:
        raise ConfigurationError(f"channels ({in_channels}, {out_channels}) not divisible by groups={groups}")
    return (k**dims * (in_channels // groups) + 1) * out_channels


def linear_param_count(n_in, n_out):
    return (n_in + 1) * n_out


class Layer:
    def __init__(self):
        self.params = {}
        self.grads = {}

    def param_count(self):
        return sum(p.size for p in self.params.values())

    def output_shape(self, in_shape):
        return in_shape

    def zero_grad(self):
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape)


class Conv(Layer):
    """N-d cross-correlation (no padding, no kernel flip) with optional groups.

    ``weight`` has shape ``(out_channels, in_channels // groups, *[k]*dims)``.
    The forward pass accumulates in a fixed order (input channel of the
    group, then kernel offset row-major, then bias), matching a plain
    nested-loop evaluation bit for bit.
    """

    def __init__(self, dims, in_channels, out_channels, kernel, stride=1, groups=1, rng=None):
        super().__init__()
        if dims not in (2, 3):
            raise ConfigurationError(f"dims must be 2 or 3, got {dims}")
        if in_channels % groups or out_channels % groups:
            raise ConfigurationError(
                f"in_channels={in_channels} and out_channels={out_channels} must be divisible by groups={groups}"
            )
        self.dims = dims
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.groups = groups
        cpg = in_channels // groups
        wshape = (out_channels, cpg) + (kernel,) * dims
        if rng is None:
            self.params["weight"] = np.zeros(wshape)
            self.params["bias"] = np.zeros(out_channels)
        else:
            bound = np.sqrt(1.0 / (cpg * kernel**dims))
            self.params["weight"] = _uniform(rng, bound, wshape)
            self.params["bias"] = _uniform(rng, bound, out_channels)
        self.zero_grad()
        self._x = None

    def output_shape(self, in_shape):
        c, *spatial = in_shape
        if c != self.in_channels:
            raise ConfigurationError(f"expected {self.in_channels} channels, got {c}")
        if len(spatial) != self.dims or any(s < self.kernel for s in spatial):
            raise ConfigurationError(f"spatial extent {tuple(spatial)} incompatible with kernel {self.kernel}")
        return (self.out_channels,) + tuple((s - self.kernel) // self.stride + 1 for s in spatial)

    def _out_spatial(self, spatial):
        return tuple((s - self.kernel) // self.stride + 1 for s in spatial)

    def _slice(self, offset, out_spatial):
        s = self.stride
        return tuple(slice(o, o + s * (n - 1) + 1, s) for o, n in zip(offset, out_spatial))

    def _check(self, x):
        if x.ndim != self.dims + 2 or x.shape[1] != self.in_channels:
            raise UsageError(f"expected (N, {self.in_channels}, {self.dims} spatial) input, got {x.shape}")
        if any(s < self.kernel for s in x.shape[2:]):
            raise UsageError(f"spatial extent {x.shape[2:]} smaller than kernel {self.kernel}")

    def forward(self, x, training=False):
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        self._x = x
        N = x.shape[0]
        g, cpg = self.groups, self.in_channels // self.groups
        opg = self.out_channels // g
        out_spatial = self._out_spatial(x.shape[2:])
        w = self.params["weight"].reshape((g, opg, cpg) + (self.kernel,) * self.dims)
        xg = x.reshape((N, g, cpg) + x.shape[2:])
        acc = np.zeros((N, g, opg) + out_spatial)
        tail = (None,) * self.dims
        for j in range(cpg):
            xj = xg[:, :, j][:, :, None]
            for offset in np.ndindex(*(self.kernel,) * self.dims):
                wj = w[(slice(None), slice(None), j) + offset]
                acc += wj[(None, Ellipsis) + tail] * xj[(Ellipsis,) + self._slice(offset, out_spatial)]
        acc = acc.reshape((N, self.out_channels) + out_spatial)
        acc += self.params["bias"][(None, slice(None)) + tail]
        return acc

    def backward(self, grad):
        x = self._x
        N = x.shape[0]
        g, cpg = self.groups, self.in_channels // self.groups
        opg = self.out_channels // g
        out_spatial = grad.shape[2:]
        spatial_axes = tuple(range(2, 2 + self.dims))
        self.grads["bias"] = grad.sum(axis=(0,) + spatial_axes)

        w = self.params["weight"].reshape((g, opg, cpg) + (self.kernel,) * self.dims)
        gg = grad.reshape((N, g, opg) + out_spatial)
        xg = x.reshape((N, g, cpg) + x.shape[2:])
        gw = np.zeros_like(w)
        gx = np.zeros_like(xg)
        sum_axes = (0,) + tuple(range(3, 3 + self.dims))
        tail = (None,) * self.dims
        for j in range(cpg):
            xj = xg[:, :, j][:, :, None]
            for offset in np.ndindex(*(self.kernel,) * self.dims):
                sl = self._slice(offset, out_spatial)
                gw[(slice(None), slice(None), j) + offset] = (gg * xj[(Ellipsis,) + sl]).sum(axis=sum_axes)
                wj = w[(slice(None), slice(None), j) + offset]
                gx[(slice(None), slice(None), j) + sl] += (gg * wj[(None, Ellipsis) + tail]).sum(axis=2)
        self.grads["weight"] = gw.reshape(self.params["weight"].shape)
        return gx.reshape(x.shape)

    def __repr__(self):
        grp = f", groups={self.groups}" if self.groups > 1 else ""
        return (
            f"Conv{self.dims}d({self.in_channels}->{self.out_channels}, k={self.kernel}, "
            f"s={self.stride}{grp})"
        )


class ReLU(Layer):
    def forward(self, x, training=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._mask, grad, 0.0)

    def __repr__(self):
        return "ReLU()"


class MaxPool(Layer):
    """Window = stride = ``size``; trailing rows that do not fill a window are dropped.

    Gradient goes to the first maximum in row-major window order.
    """

    def __init__(self, dims, size=2):
        super().__init__()
        self.dims = dims
        self.size = size

    def output_shape(self, in_shape):
        c, *spatial = in_shape
        if any(s < self.size for s in spatial):
            raise ConfigurationError(f"spatial extent {tuple(spatial)} smaller than pool size {self.size}")
        return (c,) + tuple(s // self.size for s in spatial)

    def _windows(self, x):
        k = self.size
        N, C = x.shape[:2]
        out = tuple(s // k for s in x.shape[2:])
        crop = x[(slice(None), slice(None)) + tuple(slice(0, o * k) for o in out)]
        split = crop.reshape((N, C) + sum(((o, k) for o in out), ()))
        d = self.dims
        order = (0, 1) + tuple(2 + 2 * i for i in range(d)) + tuple(3 + 2 * i for i in range(d))
        return split.transpose(order).reshape((N, C) + out + (k**d,)), out

    def forward(self, x, training=False):
        if x.ndim != self.dims + 2 or any(s < self.size for s in x.shape[2:]):
            raise UsageError(f"cannot pool shape {x.shape} with window {self.size}")
        self._shape = x.shape
        win, out = self._windows(x)
        self._arg = np.argmax(win, axis=-1)
        return np.take_along_axis(win, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        k, d = self.size, self.dims
        N, C = self._shape[:2]
        out = grad.shape[2:]
        win = np.zeros(grad.shape + (k**d,))
        np.put_along_axis(win, self._arg[..., None], grad[..., None], axis=-1)
        win = win.reshape((N, C) + out + (k,) * d)
        order = [0, 1]
        for i in range(d):
            order += [2 + i, 2 + d + i]
        full = win.transpose(order).reshape((N, C) + tuple(o * k for o in out))
        gx = np.zeros(self._shape)
        gx[(slice(None), slice(None)) + tuple(slice(0, o * k) for o in out)] = full
        return gx

    def __repr__(self):
        return f"MaxPool{self.dims}d({self.size})"


class BatchNorm(Layer):
    """Per-channel normalisation over batch and spatial axes.

    Training mode uses batch statistics and updates running estimates with
    momentum 0.1 (running variance uses the unbiased estimate); eval mode
    uses the running estimates.
    """

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.zero_grad()
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.tracked = False

    def output_shape(self, in_shape):
        if in_shape[0] != self.channels:
            raise ConfigurationError(f"expected {self.channels} channels, got {in_shape[0]}")
        return in_shape

    def _bc(self, v, ndim):
        return v.reshape((1, -1) + (1,) * (ndim - 2))

    def forward(self, x, training=False):
        if x.ndim < 2 or x.shape[1] != self.channels:
            raise UsageError(f"expected {self.channels} channels, got shape {x.shape}")
        axes = (0,) + tuple(range(2, x.ndim))
        m = x.size // self.channels
        if training:
            if m <= 1:
                raise UsageError("batch statistics need more than one value per channel")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            mom = self.momentum
            self.running_mean = (1 - mom) * self.running_mean + mom * mean
            self.running_var = (1 - mom) * self.running_var + mom * var * m / (m - 1)
            self.tracked = True
        else:
            if not self.tracked:
                log.warning("BatchNorm evaluated before any training batch; using mean 0, variance 1")
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bc(mean, x.ndim)) * self._bc(inv, x.ndim)
        self._cache = (xhat, inv, training, axes, m)
        return xhat * self._bc(self.params["gamma"], x.ndim) + self._bc(self.params["beta"], x.ndim)

    def backward(self, grad):
        xhat, inv, training, axes, m = self._cache
        nd = grad.ndim
        self.grads["gamma"] = (grad * xhat).sum(axis=axes)
        self.grads["beta"] = grad.sum(axis=axes)
        dxhat = grad * self._bc(self.params["gamma"], nd)
        if not training:
            return dxhat * self._bc(inv, nd)
        s1 = self._bc(dxhat.sum(axis=axes), nd)
        s2 = self._bc((dxhat * xhat).sum(axis=axes), nd)
        return self._bc(inv, nd) / m * (m * dxhat - s1 - xhat * s2)

    def __repr__(self):
        return f"BatchNorm({self.channels})"


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by ``1 / (1 - p)`` in training."""

    def __init__(self, p, rng=None):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ConfigurationError(f"dropout rate must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng()
        self._mask = None

    def forward(self, x, training=False):
        if not training or self.p == 0.0:
            self._mask = None
            return x
        self._mask = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask

    def __repr__(self):
        return f"Dropout({self.p})"


class Flatten(Layer):
    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)

    def __repr__(self):
        return "Flatten()"


class Linear(Layer):
    def __init__(self, n_in, n_out, rng=None):
        super().__init__()
        self.n_in = n_in
        self.n_out = n_out
        if rng is None:
            self.params["weight"] = np.zeros((n_out, n_in))
            self.params["bias"] = np.zeros(n_out)
        else:
            bound = np.sqrt(1.0 / n_in)
            self.params["weight"] = _uniform(rng, bound, (n_out, n_in))
            self.params["bias"] = _uniform(rng, bound, n_out)
        self.zero_grad()

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.n_in,):
            raise ConfigurationError(f"expected {self.n_in} input features, got {tuple(in_shape)}")
        return (self.n_out,)

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise UsageError(f"expected (N, {self.n_in}) input, got {x.shape}")
        self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, grad):
        self.grads["weight"] = grad.T @ self._x
        self.grads["bias"] = grad.sum(axis=0)
        return grad @ self.params["weight"]

    def __repr__(self):
        return f"Linear({self.n_in}->{self.n_out})"


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def named_params(self):
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def named_grads(self):
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.grads.items()}

    def param_count(self):
        return sum(layer.param_count() for layer in self.layers)

    def output_shape(self, in_shape):
        shape = tuple(in_shape)
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy_items(logits, labels):
    """Per-item losses ``-log softmax(logits)[label]``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise UsageError(f"logits {logits.shape} and labels {labels.shape} disagree")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise UsageError("label out of range for logits")
    return -log_softmax(logits)[np.arange(labels.size), labels]


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    losses = cross_entropy_items(logits, labels)
    n = labels.size
    grad = np.exp(log_softmax(logits))
    grad[np.arange(n), labels] -= 1.0
    return float(losses.mean()), grad / n


def predict(logits):
    return np.argmax(logits, axis=1)


class Adam:
    """Bias-corrected Adam over a dict of named arrays, updated in place."""

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

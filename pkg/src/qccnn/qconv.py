"""Quantum convolutional layers over 2D and 3D feature maps.

Each input channel gets its own filter circuit (same architecture, separate
angles). Channel ``c`` of the input produces output channels
``c*n .. c*n + n - 1`` where ``n = k**dims`` is the qubit count. No padding,
no activation.

Patches are flattened row-major over the spatial axes, i.e. ``(h, w)`` for 2D
and ``(d, h, w)`` for 3D, so within a 2x2 patch qubit 0 is the top-left pixel
and qubit 1 its right neighbour.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import qfilter
from .errors import ConfigurationError, UsageError

# rows of (channel, patch) pairs simulated per chunk; bounds peak memory
DEFAULT_CHUNK_ROWS = 4096


@dataclass(frozen=True)
class QuantumConvSpec:
    dims: int
    kernel: int
    stride: int
    in_channels: int
    filter: qfilter.FilterSpec

    def __post_init__(self):
        if self.dims not in (2, 3):
            raise ConfigurationError(f"dims must be 2 or 3, got {self.dims}")
        if self.kernel < 1 or self.stride < 1 or self.in_channels < 1:
            raise ConfigurationError("kernel, stride and in_channels must be positive")
        if self.filter.n_qubits != self.kernel**self.dims:
            raise ConfigurationError(
                f"filter has {self.filter.n_qubits} qubits but a {self.kernel}^{self.dims} patch "
                f"has {self.kernel ** self.dims} values"
            )

    @property
    def n_qubits(self):
        return self.filter.n_qubits

    @property
    def out_channels(self):
        return self.in_channels * self.n_qubits

    @property
    def params_per_channel(self):
        return qfilter.parameter_count(self.filter)

    def output_spatial(self, spatial):
        return tuple((s - self.kernel) // self.stride + 1 for s in spatial)


def extract_patches(x, k, s, dims=None):
    """Sliding windows of a (N, C, *spatial) array.

    Returns ``(patches, out_spatial)`` where ``patches`` has shape
    ``(N, C, L, k**dims)`` and ``L`` runs over output positions row-major.
    """
    x = np.asarray(x)
    dims = x.ndim - 2 if dims is None else dims
    if x.ndim != dims + 2:
        raise UsageError(f"expected a (N, C, {dims} spatial) array, got shape {x.shape}")
    spatial = x.shape[2:]
    if any(n < k for n in spatial):
        raise UsageError(f"spatial extent {spatial} smaller than kernel {k}")
    axes = tuple(range(2, 2 + dims))
    win = sliding_window_view(x, (k,) * dims, axis=axes)
    win = win[(slice(None), slice(None)) + (slice(None, None, s),) * dims]
    out_spatial = win.shape[2 : 2 + dims]
    L = int(np.prod(out_spatial))
    patches = win.reshape(x.shape[:2] + (L, k**dims))
    return patches, out_spatial


def scatter_patches(grad_patches, k, s, spatial):
    """Adjoint of ``extract_patches``: sum patch gradients back onto the input grid."""
    N, C, L, m = grad_patches.shape
    dims = len(spatial)
    out_spatial = tuple((n - k) // s + 1 for n in spatial)
    g = grad_patches.reshape((N, C) + out_spatial + (k,) * dims)
    out = np.zeros((N, C) + tuple(spatial))
    for offset in np.ndindex(*(k,) * dims):
        sl = tuple(slice(o, o + s * (n - 1) + 1, s) for o, n in zip(offset, out_spatial))
        out[(slice(None), slice(None)) + sl] += g[(Ellipsis,) + offset]
    return out


def _check_input(spec, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != spec.dims + 2:
        raise UsageError(f"expected a {spec.dims + 2}-d input, got shape {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise UsageError(f"expected {spec.in_channels} input channels, got {x.shape[1]}")
    return x


def _to_rows(patches):
    # (N, C, L, n) -> (C, N*L, n)
    N, C, L, n = patches.shape
    return np.ascontiguousarray(patches.transpose(1, 0, 2, 3).reshape(C, N * L, n))


def _from_rows(rows, N, L):
    C, _, n = rows.shape
    return rows.reshape(C, N, L, n).transpose(1, 0, 2, 3)


def _chunks(total, size):
    return [(a, min(a + size, total)) for a in range(0, total, size)]


def _map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def qconv_forward(spec, params, x, workers=1, chunk_rows=DEFAULT_CHUNK_ROWS):
    """Forward pass; ``params`` has shape (in_channels, params_per_channel)."""
    x = _check_input(spec, x)
    params = np.asarray(params, dtype=np.float64)
    patches, out_spatial = extract_patches(x, spec.kernel, spec.stride, spec.dims)
    N, C, L, n = patches.shape
    rows = _to_rows(patches)
    step = max(1, chunk_rows // C)
    parts = _map(
        lambda ab: qfilter.evaluate_batch(spec.filter, params, rows[:, ab[0] : ab[1]]),
        _chunks(N * L, step),
        workers,
    )
    values = np.concatenate(parts, axis=1)
    out = _from_rows(values, N, L)  # (N, C, L, n)
    out = out.transpose(0, 1, 3, 2).reshape((N, C * n) + out_spatial)
    return np.ascontiguousarray(out)


def qconv_backward(spec, params, x, upstream, input_grad=True, workers=1, chunk_rows=DEFAULT_CHUNK_ROWS):
    """Returns ``(grad_params, grad_input)``; ``grad_input`` is None if not requested.

    Parameter gradients are reduced over chunks in a fixed order, so results
    do not depend on the worker count.
    """
    x = _check_input(spec, x)
    params = np.asarray(params, dtype=np.float64)
    patches, out_spatial = extract_patches(x, spec.kernel, spec.stride, spec.dims)
    N, C, L, n = patches.shape
    upstream = np.asarray(upstream, dtype=np.float64)
    expected = (N, C * n) + tuple(out_spatial)
    if upstream.shape != expected:
        raise UsageError(f"upstream shape {upstream.shape} != forward output shape {expected}")
    rows = _to_rows(patches)
    up = upstream.reshape(N, C, n, L).transpose(0, 1, 3, 2)
    up_rows = _to_rows(up)

    def work(ab):
        a, b = ab
        return qfilter.backward_batch(
            spec.filter, params, rows[:, a:b], up_rows[:, a:b], input_grad=input_grad
        )

    step = max(1, chunk_rows // C)
    parts = _map(work, _chunks(N * L, step), workers)
    grad_params = np.zeros(params.shape)
    for gp, _ in parts:
        grad_params += gp
    grad_input = None
    if input_grad:
        gx_rows = np.concatenate([gx for _, gx in parts], axis=1)
        grad_input = scatter_patches(_from_rows(gx_rows, N, L), spec.kernel, spec.stride, x.shape[2:])
    return grad_params, grad_input


class QuantumConv:
    """Layer wrapper holding the filter angles, one row per input channel."""

    def __init__(self, spec, rng=None, params=None, workers=1, chunk_rows=DEFAULT_CHUNK_ROWS):
        self.spec = spec
        if params is None:
            if rng is None:
                raise UsageError("QuantumConv needs either rng or params")
            params = np.stack([qfilter.init_params(spec.filter, rng) for _ in range(spec.in_channels)])
        params = np.array(params, dtype=np.float64)
        if params.shape != (spec.in_channels, spec.params_per_channel):
            raise UsageError(f"params shape {params.shape} does not match spec")
        self.params = {"angles": params}
        self.grads = {"angles": np.zeros_like(params)}
        self.workers = workers
        self.chunk_rows = chunk_rows
        self.input_grad = True
        self.check_range = False
        self.observed_range = [np.inf, -np.inf]
        self._x = None

    def param_count(self):
        return self.params["angles"].size

    def output_shape(self, in_shape):
        c, *spatial = in_shape
        if c != self.spec.in_channels:
            raise ConfigurationError(f"expected {self.spec.in_channels} channels, got {c}")
        if any(s < self.spec.kernel for s in spatial):
            raise ConfigurationError(f"spatial extent {tuple(spatial)} smaller than kernel {self.spec.kernel}")
        return (self.spec.out_channels,) + self.spec.output_spatial(spatial)

    def forward(self, x, training=False):
        self._x = x
        out = qconv_forward(self.spec, self.params["angles"], x, self.workers, self.chunk_rows)
        if self.check_range:
            lo, hi = float(out.min()), float(out.max())
            self.observed_range = [min(self.observed_range[0], lo), max(self.observed_range[1], hi)]
            if not (np.all(np.isfinite(out)) and lo >= -1.0 and hi <= 1.0):
                raise AssertionError(f"quantum activations left [-1, 1]: min {lo}, max {hi}")
        return out

    def backward(self, grad):
        gp, gx = qconv_backward(
            self.spec, self.params["angles"], self._x, grad, self.input_grad, self.workers, self.chunk_rows
        )
        self.grads["angles"] = gp
        return gx

    def __repr__(self):
        f = self.spec.filter
        return (
            f"QuantumConv{self.spec.dims}d({self.spec.in_channels}x{f.n_qubits}q, k={self.spec.kernel}, "
            f"s={self.spec.stride}, {f.encoding.kind}, {f.ansatz.kind}x{f.ansatz.n_layers})"
        )

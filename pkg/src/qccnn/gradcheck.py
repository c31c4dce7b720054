"""Finite-difference self-checks for the quantum filter, quantum conv and classical layers.

Each check compares an analytic gradient with central differences of a
scalar objective ``sum(u * f(x))`` for a random upstream ``u``. The reported
error for one configuration is the norm-wise relative error
``|g - g_fd| / max(|g|, |g_fd|)`` (0 when both vanish).
"""

from dataclasses import dataclass

import numpy as np

from . import nn, qconv, qfilter

FD_STEP = 1e-5
QUANTUM_TOL = 1e-6
CLASSICAL_TOL = 1e-5


@dataclass
class CheckResult:
    component: str
    name: str
    worst: float
    tol: float
    cases: int

    @property
    def passed(self):
        return bool(np.isfinite(self.worst) and self.worst <= self.tol)


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def central_diff(fn, x, h=FD_STEP):
    """Central differences of scalar ``fn`` w.r.t. every entry of ``x`` (perturbed in place)."""
    grad = np.zeros(x.shape)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = fn()
        flat[i] = keep - h
        down = fn()
        flat[i] = keep
        out[i] = (up - down) / (2.0 * h)
    return grad


# ---------------------------------------------------------------------------
# quantum filter


def filter_specs(n_qubits=4, n_layers=1):
    """Every encoding/ansatz pairing."""
    return [
        qfilter.FilterSpec(n_qubits, qfilter.Encoding(e), qfilter.Ansatz(a, n_layers))
        for e in qfilter.ENCODINGS
        for a in qfilter.ANSATZE
    ]


def filter_case(spec, rng, h=FD_STEP, method="adjoint"):
    """Relative errors ``(params, inputs)`` for one random configuration.

    The input error is None for threshold encoding; there the analytic input
    gradient must be exactly zero, which is returned as ``zero_ok``.
    """
    n = spec.n_qubits
    params = qfilter.init_params(spec, rng)[None, :]
    x = rng.uniform(-np.pi, np.pi, size=(1, 1, n))
    u = rng.normal(size=(1, 1, n))
    gp, gx = qfilter.backward_batch(spec, params, x, u, input_grad=True, method=method)

    def objective():
        return float(np.sum(u * qfilter.evaluate_batch(spec, params, x)))

    err_p = relative_error(gp, central_diff(objective, params, h))
    if not spec.encoding.differentiable:
        return err_p, None, bool(np.all(gx == 0.0))
    err_x = relative_error(gx, central_diff(objective, x, h))
    return err_p, err_x, True


def check_qfilter(rng, n_configs=100, n_qubits=4, n_layers=1, tol=QUANTUM_TOL, method="adjoint"):
    results = []
    for spec in filter_specs(n_qubits, n_layers):
        label = f"{spec.encoding.kind}/{spec.ansatz.kind}"
        worst_p = worst_x = 0.0
        zeros = True
        for _ in range(n_configs):
            ep, ex, zero_ok = filter_case(spec, rng, method=method)
            worst_p = max(worst_p, ep)
            if ex is not None:
                worst_x = max(worst_x, ex)
            zeros = zeros and zero_ok
        results.append(CheckResult("qfilter", f"{label} params", worst_p, tol, n_configs))
        if spec.encoding.differentiable:
            results.append(CheckResult("qfilter", f"{label} inputs", worst_x, tol, n_configs))
        else:
            # defined as exactly zero; any nonzero entry is a failure
            results.append(CheckResult("qfilter", f"{label} inputs (== 0)", 0.0 if zeros else np.inf, 0.0, n_configs))
    return results


# ---------------------------------------------------------------------------
# quantum convolution


def qconv_case(dims, rng, encoding="angle", ansatz="strong", h=FD_STEP, in_channels=2, size=4):
    """Errors ``(params, input)`` of a k=2, s=1 quantum conv on a ``size``^dims input.

    For threshold encoding the input entry is 0.0 when the analytic input
    gradient is exactly zero and inf otherwise.
    """
    spec = qconv.QuantumConvSpec(
        dims,
        2,
        1,
        in_channels,
        qfilter.FilterSpec(2**dims, qfilter.Encoding(encoding), qfilter.Ansatz(ansatz, 1)),
    )
    params = np.stack([qfilter.init_params(spec.filter, rng) for _ in range(in_channels)])
    x = rng.normal(size=(1, in_channels) + (size,) * dims)
    out = qconv.qconv_forward(spec, params, x)
    u = rng.normal(size=out.shape)
    gp, gx = qconv.qconv_backward(spec, params, x, u)

    def objective():
        return float(np.sum(u * qconv.qconv_forward(spec, params, x)))

    err_p = relative_error(gp, central_diff(objective, params, h))
    if not spec.filter.encoding.differentiable:
        return err_p, 0.0 if np.all(gx == 0.0) else np.inf
    return err_p, relative_error(gx, central_diff(objective, x, h))


def check_qconv(rng, tol=QUANTUM_TOL):
    """Every encoding/ansatz pairing on a 4x4 (2D) and 4x4x4 (3D) input."""
    results = []
    for dims in (2, 3):
        for enc in qfilter.ENCODINGS:
            for ans in qfilter.ANSATZE:
                ep, ex = qconv_case(dims, rng, enc, ans)
                label = f"{dims}d {enc}/{ans}"
                results.append(CheckResult("qconv", f"{label} params", ep, tol, 1))
                in_tol = 0.0 if enc == "threshold" else tol
                suffix = " (== 0)" if enc == "threshold" else ""
                results.append(CheckResult("qconv", f"{label} input{suffix}", ex, in_tol, 1))
    return results


# ---------------------------------------------------------------------------
# classical layers


def layer_case(layer, x, rng, training=True, h=FD_STEP):
    """Worst relative error over the input and every parameter of ``layer``.

    Stochastic layers must give the same output on repeated training calls;
    callers pass a Dropout whose mask is pinned (see ``_PinnedDropout``).
    """
    x = np.array(x, dtype=np.float64)
    out = layer.forward(x, training)
    u = rng.normal(size=out.shape)
    layer.forward(x, training)
    gx = layer.backward(u)
    grads = {k: v.copy() for k, v in layer.grads.items()}

    def objective():
        return float(np.sum(u * layer.forward(x, training)))

    errs = [relative_error(gx, central_diff(objective, x, h))]
    for name, p in layer.params.items():
        errs.append(relative_error(grads[name], central_diff(objective, p, h)))
    return max(errs)


class _PinnedDropout(nn.Dropout):
    """Dropout that reuses one mask, so finite differences see a fixed function."""

    def __init__(self, p, rng, shape):
        super().__init__(p, rng)
        self._pinned = (rng.random(shape) >= p) / (1.0 - p)

    def forward(self, x, training=False):
        self._mask = self._pinned if training else None
        return x * self._pinned if training else x


def _spread(rng, shape, gap=1e-2):
    """Distinct values at least ``gap`` apart and away from 0 (no ReLU kinks, no pooling ties)."""
    n = int(np.prod(shape))
    vals = (np.arange(n) - n / 2.0 + 0.5) * gap
    return rng.permutation(vals).reshape(shape)


def classical_cases(rng):
    """(name, layer, input, training) tuples covering every classical layer type."""
    cases = [
        ("conv2d", nn.Conv(2, 2, 3, 2, stride=2, rng=rng), rng.normal(size=(2, 2, 6, 6)), True),
        ("conv3d grouped", nn.Conv(3, 4, 8, 2, stride=1, groups=2, rng=rng), rng.normal(size=(2, 4, 3, 3, 3)), True),
        ("conv3d k5 s2", nn.Conv(3, 1, 2, 5, stride=2, rng=rng), rng.normal(size=(1, 1, 7, 7, 7)), True),
        ("relu", nn.ReLU(), _spread(rng, (2, 3, 4, 4)), True),
        ("maxpool2d", nn.MaxPool(2, 2), _spread(rng, (2, 2, 5, 4)), True),
        ("maxpool3d", nn.MaxPool(3, 2), _spread(rng, (1, 2, 4, 4, 5)), True),
        ("batchnorm train", nn.BatchNorm(3), rng.normal(size=(4, 3, 2, 2)), True),
        ("flatten", nn.Flatten(), rng.normal(size=(2, 3, 2, 2)), True),
        ("linear", nn.Linear(5, 3, rng=rng), rng.normal(size=(4, 5)), True),
        ("dropout", _PinnedDropout(0.3, rng, (3, 4, 2)), rng.normal(size=(3, 4, 2)), True),
    ]
    bn = nn.BatchNorm(3)
    bn.forward(rng.normal(size=(4, 3, 2, 2)), training=True)
    bn.params["gamma"][...] = rng.uniform(0.5, 1.5, 3)
    cases.append(("batchnorm eval", bn, rng.normal(size=(4, 3, 2, 2)), False))
    for _, layer, _, _ in cases:
        if isinstance(layer, nn.BatchNorm):
            layer.params["beta"][...] = rng.normal(size=layer.channels)
    return cases


def loss_case(rng, h=FD_STEP):
    logits = rng.normal(size=(5, 4))
    labels = rng.integers(0, 4, size=5)
    _, grad = nn.softmax_cross_entropy(logits, labels)
    fd = central_diff(lambda: nn.softmax_cross_entropy(logits, labels)[0], logits, h)
    return relative_error(grad, fd)


def check_nn(rng, tol=CLASSICAL_TOL):
    results = []
    for name, layer, x, training in classical_cases(rng):
        results.append(CheckResult("nn", name, layer_case(layer, x, rng, training), tol, 1))
    results.append(CheckResult("nn", "softmax cross-entropy", loss_case(rng), tol, 1))
    return results


def run_all(seed=0, n_configs=100):
    """All suites; returns a list of ``CheckResult``."""
    rng = np.random.default_rng(seed)
    return check_qfilter(rng, n_configs) + check_qconv(rng) + check_nn(rng)


def worst_by_component(results):
    out = {}
    for r in results:
        out[r.component] = max(out.get(r.component, 0.0), r.worst)
    return out

"""Quantum convolutional filter: encoding, variational ansatz, Z readout.

A filter maps a flattened patch of ``n`` real inputs onto ``n`` qubits,
applies a trainable ansatz and returns ``(<Z_0>, ..., <Z_{n-1}>)`` with no
activation on top.

Encodings
    ``threshold``     RX(pi) on qubit i iff ``x_i >= t`` (a bit flip up to phase)
    ``angle``         RX(x_i) on qubit i
    ``higher-order``  H and RZ(x_i) on every qubit, then for every pair i < j
                      CNOT(i, j) RZ(x_i * x_j) on j CNOT(i, j)

Ansatz layers
    ``basic``   RX(theta_q) on every qubit, then the CNOT ring
    ``strong``  RX, RY, RZ on every qubit, then the CNOT ring

The CNOT ring is ``CNOT(i, (i + 1) % n)`` for ``i = 0 .. n-1`` (omitted for a
single qubit). Strong-layer angles are ordered per qubit as (x, y, z), qubits
ascending, layers outermost.

Gradients use the two-point parameter-shift rule
``dE/dtheta = (E(theta + pi/2) - E(theta - pi/2)) / 2``, which is exact for
every rotation here since all generators have eigenvalues +-1/2.
"""

from dataclasses import dataclass

import numpy as np

from . import qsim
from .errors import ConfigurationError, UsageError
from .qsim import Gate

ENCODINGS = ("threshold", "angle", "higher-order")
ANSATZE = ("basic", "strong")

# Read at call time so a self-check can perturb it as a negative control.
SHIFT = np.pi / 2


@dataclass(frozen=True)
class Encoding:
    kind: str
    threshold: float = 0.0

    def __post_init__(self):
        if self.kind not in ENCODINGS:
            raise ConfigurationError(f"unknown encoding {self.kind!r}; expected one of {ENCODINGS}")
        if not np.isfinite(self.threshold):
            raise ConfigurationError("threshold must be finite")

    @property
    def differentiable(self):
        return self.kind != "threshold"


@dataclass(frozen=True)
class Ansatz:
    kind: str
    n_layers: int = 1

    def __post_init__(self):
        if self.kind not in ANSATZE:
            raise ConfigurationError(f"unknown ansatz {self.kind!r}; expected one of {ANSATZE}")
        if int(self.n_layers) < 1:
            raise ConfigurationError(f"ansatz needs at least one layer, got {self.n_layers}")

    @property
    def rotations_per_qubit(self):
        return 1 if self.kind == "basic" else 3


@dataclass(frozen=True)
class FilterSpec:
    n_qubits: int
    encoding: Encoding
    ansatz: Ansatz

    def __post_init__(self):
        if not 1 <= int(self.n_qubits) <= qsim.MAX_QUBITS:
            raise ConfigurationError(f"filter qubit count must be in 1..{qsim.MAX_QUBITS}")


def parameter_count(spec):
    return spec.ansatz.rotations_per_qubit * spec.n_qubits * spec.ansatz.n_layers


def init_params(spec, rng):
    """Independent uniform angles on [0, 2*pi)."""
    return rng.uniform(0.0, 2.0 * np.pi, size=parameter_count(spec))


def _ring(n):
    if n == 1:
        return []
    return [(i, (i + 1) % n) for i in range(n)]


def encode(kind, inputs):
    """Encoding gate list for one patch."""
    x = np.asarray(inputs, dtype=np.float64).reshape(-1)
    n = x.size
    if kind.kind == "threshold":
        return [qsim.rx(i, np.pi) for i in range(n) if x[i] >= kind.threshold]
    if kind.kind == "angle":
        return [qsim.rx(i, x[i]) for i in range(n)]
    gates = [qsim.h(i) for i in range(n)]
    gates += [qsim.rz(i, x[i]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            gates += [qsim.cnot(i, j), qsim.rz(j, x[i] * x[j]), qsim.cnot(i, j)]
    return gates


def ansatz_gates(kind, params, n_qubits):
    theta = np.asarray(params, dtype=np.float64).reshape(-1)
    expected = kind.rotations_per_qubit * n_qubits * kind.n_layers
    if theta.size != expected:
        raise UsageError(f"ansatz expects {expected} angles, got {theta.size}")
    gates = []
    k = 0
    for _ in range(kind.n_layers):
        for q in range(n_qubits):
            if kind.kind == "basic":
                gates.append(qsim.rx(q, theta[k]))
                k += 1
            else:
                gates += [qsim.rx(q, theta[k]), qsim.ry(q, theta[k + 1]), qsim.rz(q, theta[k + 2])]
                k += 3
        gates += [qsim.cnot(c, t) for c, t in _ring(n_qubits)]
    return gates


def circuit(spec, params, inputs):
    """The full filter circuit for one patch, as a ``qsim.Circuit``."""
    _check_single(spec, params, inputs)
    gates = encode(spec.encoding, inputs) + ansatz_gates(spec.ansatz, params, spec.n_qubits)
    return qsim.Circuit(spec.n_qubits, gates)


# ---------------------------------------------------------------------------
# batched evaluation
#
# Batched calls take ``params`` of shape (C, P) and ``inputs`` of shape
# (C, R, n): C independent filters (one per input channel), each evaluated on
# R patches.


@dataclass
class _Op:
    kind: str
    qubits: tuple
    angle: object = None
    param: int | None = None
    # (input index, coefficient) pairs, for input gradients
    inputs: tuple = ()


def _encoding_ops(encoding, x):
    n = x.shape[-1]
    if encoding.kind == "threshold":
        return [_Op("RX", (i,), np.where(x[..., i] >= encoding.threshold, np.pi, 0.0)) for i in range(n)]
    if encoding.kind == "angle":
        return [_Op("RX", (i,), x[..., i], inputs=((i, 1.0),)) for i in range(n)]
    ops = [_Op("H", (i,)) for i in range(n)]
    ops += [_Op("RZ", (i,), x[..., i], inputs=((i, 1.0),)) for i in range(n)]
    # CNOT . RZ(phi) on j . CNOT is exactly RZZ(phi)
    for i in range(n):
        for j in range(i + 1, n):
            ops.append(
                _Op("RZZ", (i, j), x[..., i] * x[..., j], inputs=((i, x[..., j]), (j, x[..., i])))
            )
    return ops


def _ansatz_ops(ansatz, params, n):
    ops = []
    k = 0
    axes = ("RX",) if ansatz.kind == "basic" else ("RX", "RY", "RZ")
    for _ in range(ansatz.n_layers):
        for q in range(n):
            for kind in axes:
                ops.append(_Op(kind, (q,), params[:, k][:, None], param=k))
                k += 1
        ops += [_Op("CNOT", (c, t)) for c, t in _ring(n)]
    return ops


def _check_batch(spec, params, inputs):
    params = np.asarray(params, dtype=np.float64)
    inputs = np.asarray(inputs, dtype=np.float64)
    P = parameter_count(spec)
    if params.ndim != 2 or params.shape[1] != P:
        raise UsageError(f"params must have shape (C, {P}), got {params.shape}")
    if inputs.ndim != 3 or inputs.shape[0] != params.shape[0] or inputs.shape[2] != spec.n_qubits:
        raise UsageError(
            f"inputs must have shape ({params.shape[0]}, R, {spec.n_qubits}), got {inputs.shape}"
        )
    if not (np.all(np.isfinite(params)) and np.all(np.isfinite(inputs))):
        raise UsageError("filter params and inputs must be finite")
    return params, inputs


def _run_ops(states, ops):
    for op in ops:
        qsim.apply_batch(states, op.kind, op.qubits, op.angle)
    return states


def evaluate_batch(spec, params, inputs):
    """Z expectations, shape (C, R, n)."""
    params, inputs = _check_batch(spec, params, inputs)
    ops = _encoding_ops(spec.encoding, inputs) + _ansatz_ops(spec.ansatz, params, spec.n_qubits)
    states = qsim.zero_states(inputs.shape[:2], spec.n_qubits)
    return qsim.expectation_z_all(_run_ops(states, ops))


def _inverse(states, op):
    angle = None if op.angle is None else -np.asarray(op.angle)
    qsim.apply_batch(states, op.kind, op.qubits, angle)


def _shift_terms_simulated(ops, lead, n, upstream, wanted, shift):
    """Half shift differences by re-simulating both shifted circuits per gate."""
    terms = {}
    psi = qsim.zero_states(lead, n)
    for g, op in enumerate(ops):
        if wanted[g]:
            # branch 0 is the +shift copy, branch 1 the -shift copy
            branch = np.stack([psi, psi])
            angle = np.asarray(op.angle)
            qsim.apply_batch(branch, op.kind, op.qubits, np.stack([angle + shift, angle - shift]))
            _run_ops(branch, ops[g + 1 :])
            e = qsim.expectation_z_all(branch)
            terms[g] = np.sum(upstream * (e[0] - e[1]), axis=-1) / 2.0
        qsim.apply_batch(psi, op.kind, op.qubits, op.angle)
    return terms


def _shift_terms_adjoint(ops, lead, n, upstream, wanted, shift):
    """The same half shift differences from one forward and one reverse sweep.

    For a gate exp(-i theta P / 2) with state psi after it and
    lam = V^dag Z_u V psi (V: the remaining gates, Z_u = sum_q u_q Z_q),
    (E(theta + s) - E(theta - s)) / 2 = -sin(s) Im <P psi | lam>.
    """
    terms = {}
    psi = _run_ops(qsim.zero_states(lead, n), ops)
    lam = psi * (upstream @ qsim._z_signs(n).T)
    for g in range(len(ops) - 1, -1, -1):
        op = ops[g]
        if wanted[g]:
            p_psi = qsim.apply_pauli(psi.copy(), op.kind, op.qubits)
            overlap = np.einsum("...i,...i->...", p_psi.conj(), lam)
            terms[g] = -np.sin(shift) * overlap.imag
        _inverse(psi, op)
        _inverse(lam, op)
    return terms


def backward_batch(spec, params, inputs, upstream, input_grad=True, method="adjoint"):
    """Parameter-shift gradients of ``sum(upstream * evaluate_batch(...))``.

    Returns ``(grad_params, grad_inputs)`` with shapes (C, P) and (C, R, n);
    ``grad_inputs`` is None when ``input_grad`` is false. Threshold encoding
    has an identically zero input gradient.

    ``method="shift"`` evaluates both shifted circuits for every gate;
    ``method="adjoint"`` obtains the identical shift differences in closed
    form from a reverse sweep, at the cost of about three forward passes.
    """
    params, inputs = _check_batch(spec, params, inputs)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != inputs.shape:
        raise UsageError(f"upstream shape {upstream.shape} != output shape {inputs.shape}")
    n = spec.n_qubits
    ops = _encoding_ops(spec.encoding, inputs) + _ansatz_ops(spec.ansatz, params, n)
    want_inputs = input_grad and spec.encoding.differentiable
    wanted = [op.param is not None or (want_inputs and bool(op.inputs)) for op in ops]
    if method == "adjoint":
        terms = _shift_terms_adjoint(ops, inputs.shape[:2], n, upstream, wanted, SHIFT)
    elif method == "shift":
        terms = _shift_terms_simulated(ops, inputs.shape[:2], n, upstream, wanted, SHIFT)
    else:
        raise UsageError(f"unknown gradient method {method!r}")

    grad_params = np.zeros(params.shape)
    grad_inputs = np.zeros(inputs.shape) if input_grad else None
    for g, op in enumerate(ops):
        if not wanted[g]:
            continue
        d = terms[g]
        if op.param is not None:
            grad_params[:, op.param] = np.sum(d, axis=1)
        else:
            for i, coef in op.inputs:
                grad_inputs[..., i] += coef * d
    return grad_params, grad_inputs


# ---------------------------------------------------------------------------
# single-patch API


def _check_single(spec, params, inputs):
    params = np.asarray(params, dtype=np.float64).reshape(-1)
    inputs = np.asarray(inputs, dtype=np.float64).reshape(-1)
    if params.size != parameter_count(spec):
        raise UsageError(f"expected {parameter_count(spec)} filter params, got {params.size}")
    if inputs.size != spec.n_qubits:
        raise UsageError(f"expected {spec.n_qubits} inputs, got {inputs.size}")
    return params, inputs


def evaluate(spec, params, inputs):
    params, inputs = _check_single(spec, params, inputs)
    return evaluate_batch(spec, params[None, :], inputs[None, None, :])[0, 0]


def grad_params(spec, params, inputs, upstream, method="adjoint"):
    params, inputs = _check_single(spec, params, inputs)
    up = np.asarray(upstream, dtype=np.float64).reshape(1, 1, -1)
    gp, _ = backward_batch(spec, params[None, :], inputs[None, None, :], up, input_grad=False, method=method)
    return gp[0]


def grad_inputs(spec, params, inputs, upstream, method="adjoint"):
    params, inputs = _check_single(spec, params, inputs)
    up = np.asarray(upstream, dtype=np.float64).reshape(1, 1, -1)
    _, gx = backward_batch(spec, params[None, :], inputs[None, None, :], up, input_grad=True, method=method)
    return gx[0, 0]

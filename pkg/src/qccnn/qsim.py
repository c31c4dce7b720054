"""Dense statevector simulation for few-qubit circuits.

Basis ordering is little-endian: qubit 0 is the least significant bit of the
basis-state index, so ``|q2 q1 q0>`` with ``q0 = 1`` is index 1.

Rotations follow ``R_A(theta) = exp(-i theta A / 2)`` for
``A in {X, Y, Z, Z⊗Z}``. Global phase is kept as-is.

Two layers of API live here:

* ``StateVector``, ``Gate``, ``Circuit`` and the functions ``zero_state``,
  ``apply_gate``, ``run``, ``expectation_z`` operate on single states.
* ``apply_batch`` and ``expectation_z_all`` operate in place on stacked
  amplitude arrays of shape ``(..., 2**n)`` with per-row angles. The quantum
  filter and convolution layers run on these.

``dense_unitary`` builds the full matrix from Kronecker products and is kept
independent of the batched kernels so it can serve as a test oracle.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, UsageError

MAX_QUBITS = 12
MAX_DENSE_QUBITS = 8
SINGLE_QUBIT_KINDS = ("H", "RX", "RY", "RZ")
TWO_QUBIT_KINDS = ("CNOT", "RZZ")
PARAMETRIC_KINDS = ("RX", "RY", "RZ", "RZZ")
GATE_KINDS = SINGLE_QUBIT_KINDS + TWO_QUBIT_KINDS


@dataclass(frozen=True)
class Gate:
    """One gate. ``qubits`` is ``(control, target)`` for CNOT."""

    kind: str
    qubits: tuple
    angle: float | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise UsageError(f"unknown gate kind {self.kind!r}")
        qubits = tuple(int(q) for q in self.qubits)
        object.__setattr__(self, "qubits", qubits)
        arity = 1 if self.kind in SINGLE_QUBIT_KINDS else 2
        if len(qubits) != arity:
            raise UsageError(f"{self.kind} acts on {arity} qubit(s), got {qubits}")
        if any(q < 0 for q in qubits):
            raise UsageError(f"negative qubit index in {qubits}")
        if len(set(qubits)) != len(qubits):
            raise UsageError(f"{self.kind} needs distinct qubits, got {qubits}")
        if self.kind in PARAMETRIC_KINDS:
            if self.angle is None or not np.isfinite(self.angle):
                raise UsageError(f"{self.kind} needs a finite angle")
            object.__setattr__(self, "angle", float(self.angle))
        elif self.angle is not None:
            raise UsageError(f"{self.kind} takes no angle")


def h(q):
    return Gate("H", (q,))


def rx(q, theta):
    return Gate("RX", (q,), theta)


def ry(q, theta):
    return Gate("RY", (q,), theta)


def rz(q, theta):
    return Gate("RZ", (q,), theta)


def cnot(control, target):
    return Gate("CNOT", (control, target))


def rzz(q0, q1, theta):
    return Gate("RZZ", (q0, q1), theta)


@dataclass
class Circuit:
    n_qubits: int
    gates: list = field(default_factory=list)

    def __post_init__(self):
        _check_qubit_count(self.n_qubits)
        self.gates = list(self.gates)
        for gate in self.gates:
            _check_gate_fits(gate, self.n_qubits)

    def append(self, gate):
        _check_gate_fits(gate, self.n_qubits)
        self.gates.append(gate)
        return self

    def extend(self, gates):
        for gate in gates:
            self.append(gate)
        return self

    def __len__(self):
        return len(self.gates)


class StateVector:
    """Amplitudes of an ``n_qubits`` register as one complex128 array."""

    def __init__(self, amplitudes):
        amps = np.array(amplitudes, dtype=np.complex128).reshape(-1)
        n = int(amps.size).bit_length() - 1
        if amps.size < 2 or (1 << n) != amps.size:
            raise UsageError(f"amplitude count {amps.size} is not a power of two >= 2")
        _check_qubit_count(n)
        if not np.all(np.isfinite(amps)):
            raise UsageError("amplitudes must be finite")
        self.amplitudes = amps
        self.n_qubits = n

    def norm(self):
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def probabilities(self):
        return np.abs(self.amplitudes) ** 2

    def copy(self):
        return StateVector(self.amplitudes.copy())

    def __repr__(self):
        return f"StateVector(n_qubits={self.n_qubits})"


def _check_qubit_count(n):
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= MAX_QUBITS:
        raise ConfigurationError(f"qubit count must be in 1..{MAX_QUBITS}, got {n!r}")


def _check_gate_fits(gate, n_qubits):
    if any(q >= n_qubits for q in gate.qubits):
        raise UsageError(f"{gate.kind} on qubits {gate.qubits} out of range for {n_qubits} qubits")


def zero_state(n_qubits):
    _check_qubit_count(n_qubits)
    amps = np.zeros(1 << n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(amps)


# ---------------------------------------------------------------------------
# batched kernels


@lru_cache(maxsize=None)
def _z_signs(n_qubits):
    """(2**n, n) array of +1/-1: column q is the Z eigenvalue of qubit q."""
    idx = np.arange(1 << n_qubits)
    bits = (idx[:, None] >> np.arange(n_qubits)[None, :]) & 1
    signs = 1.0 - 2.0 * bits
    signs.setflags(write=False)
    return signs


def n_qubits_of(states):
    dim = states.shape[-1]
    n = int(dim).bit_length() - 1
    if (1 << n) != dim:
        raise UsageError(f"last axis {dim} is not a power of two")
    return n


def _pair_view(states, q, n):
    lead = states.shape[:-1]
    view = states.reshape(lead + (1 << (n - 1 - q), 2, 1 << q))
    return view[..., 0, :], view[..., 1, :]


def _quad_view(states, qubits, n):
    """View with axes (..., hi, bit_a, mid, bit_b, lo) for qubits a > b."""
    a, b = max(qubits), min(qubits)
    lead = states.shape[:-1]
    return states.reshape(lead + (1 << (n - 1 - a), 2, 1 << (a - b - 1), 2, 1 << b))


def _angle_factor(angle, lead, extra_dims):
    a = np.asarray(angle, dtype=np.float64)
    if a.ndim:
        a = np.broadcast_to(a, lead)
        a = a.reshape(lead + (1,) * extra_dims)
    return a


def apply_batch(states, kind, qubits, angle=None):
    """Apply one gate in place to every row of ``states``.

    ``states`` has shape ``(..., 2**n)`` and must be C-contiguous. ``angle``
    is a scalar or an array broadcastable to ``states.shape[:-1]``.
    """
    if not states.flags.c_contiguous:
        raise UsageError("state array must be C-contiguous")
    n = n_qubits_of(states)
    if any(q >= n or q < 0 for q in qubits):
        raise UsageError(f"{kind} on qubits {tuple(qubits)} out of range for {n} qubits")
    lead = states.shape[:-1]

    if kind == "CNOT":
        c, t = qubits
        blocks = _quad_view(states, qubits, n)
        if c > t:
            lo, hi = blocks[..., 1, :, 0, :], blocks[..., 1, :, 1, :]
        else:
            lo, hi = blocks[..., 0, :, 1, :], blocks[..., 1, :, 1, :]
        tmp = lo.copy()
        lo[...] = hi
        hi[...] = tmp
        return states
    if kind == "RZZ":
        half = _angle_factor(angle, lead, 3) * 0.5
        even = np.exp(-1j * half)
        odd = np.conj(even)
        blocks = _quad_view(states, qubits, n)
        blocks[..., 0, :, 0, :] *= even
        blocks[..., 1, :, 1, :] *= even
        blocks[..., 0, :, 1, :] *= odd
        blocks[..., 1, :, 0, :] *= odd
        return states

    q = qubits[0]
    a0, a1 = _pair_view(states, q, n)
    if kind == "H":
        s = 1.0 / np.sqrt(2.0)
        t = a0.copy()
        a0 += a1
        a0 *= s
        t -= a1
        t *= s
        a1[...] = t
        return states

    half = _angle_factor(angle, lead, 2) * 0.5
    if kind == "RZ":
        a0 *= np.exp(-1j * half)
        a1 *= np.exp(1j * half)
        return states
    c = np.cos(half)
    s = np.sin(half)
    t0 = a0.copy()
    if kind == "RX":
        # [[c, -is], [-is, c]]
        a0 *= c
        a0 += (-1j * s) * a1
        a1 *= c
        a1 += (-1j * s) * t0
    elif kind == "RY":
        # [[c, -s], [s, c]]
        a0 *= c
        a0 -= s * a1
        a1 *= c
        a1 += s * t0
    else:
        raise UsageError(f"unknown gate kind {kind!r}")
    return states


def apply_pauli(states, kind, qubits):
    """Apply the Pauli generator of a rotation gate in place.

    ``kind`` is the rotation kind: RX -> X, RY -> Y, RZ -> Z, RZZ -> Z⊗Z.
    """
    n = n_qubits_of(states)
    if kind == "RZZ":
        blocks = _quad_view(states, qubits, n)
        blocks[..., 0, :, 1, :] *= -1.0
        blocks[..., 1, :, 0, :] *= -1.0
        return states
    a0, a1 = _pair_view(states, qubits[0], n)
    if kind == "RZ":
        a1 *= -1.0
        return states
    t = a0.copy()
    if kind == "RX":
        a0[...] = a1
        a1[...] = t
    elif kind == "RY":
        # Y = [[0, -i], [i, 0]]
        a0[...] = -1j * a1
        a1[...] = 1j * t
    else:
        raise UsageError(f"{kind} has no Pauli generator")
    return states


def expectation_z_all(states):
    """<Z_q> for every qubit: shape ``states.shape[:-1] + (n,)``."""
    n = n_qubits_of(states)
    probs = states.real**2 + states.imag**2
    return probs @ _z_signs(n)


def zero_states(lead_shape, n_qubits):
    _check_qubit_count(n_qubits)
    states = np.zeros(tuple(lead_shape) + (1 << n_qubits,), dtype=np.complex128)
    states[..., 0] = 1.0
    return states


# ---------------------------------------------------------------------------
# single-state API


def apply_gate(state, gate):
    _check_gate_fits(gate, state.n_qubits)
    amps = state.amplitudes.copy()
    apply_batch(amps, gate.kind, gate.qubits, gate.angle)
    return StateVector(amps)


def run(circuit, initial=None):
    if initial is None:
        amps = zero_state(circuit.n_qubits).amplitudes
    else:
        if initial.n_qubits != circuit.n_qubits:
            raise UsageError(
                f"initial state has {initial.n_qubits} qubits, circuit has {circuit.n_qubits}"
            )
        amps = initial.amplitudes.copy()
    for gate in circuit.gates:
        apply_batch(amps, gate.kind, gate.qubits, gate.angle)
    return StateVector(amps)


def expectation_z(state, qubit):
    if not 0 <= qubit < state.n_qubits:
        raise UsageError(f"qubit {qubit} out of range for {state.n_qubits} qubits")
    value = float(state.probabilities() @ _z_signs(state.n_qubits)[:, qubit])
    return min(1.0, max(-1.0, value))


# ---------------------------------------------------------------------------
# dense oracle

_I2 = np.eye(2, dtype=np.complex128)
_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
_Z = np.diag([1.0, -1.0]).astype(np.complex128)
_P0 = np.diag([1.0, 0.0]).astype(np.complex128)
_P1 = np.diag([0.0, 1.0]).astype(np.complex128)
_H = np.array([[1, 1], [1, -1]], dtype=np.complex128) / np.sqrt(2.0)


def _kron_chain(factors, n):
    """Tensor product with ``factors[q]`` on qubit q (default identity)."""
    out = np.ones((1, 1), dtype=np.complex128)
    for q in reversed(range(n)):
        out = np.kron(out, factors.get(q, _I2))
    return out


def gate_matrix(gate, n_qubits):
    """Full 2**n x 2**n matrix of ``gate`` embedded in an n-qubit register."""
    _check_gate_fits(gate, n_qubits)
    kind, qs, theta = gate.kind, gate.qubits, gate.angle
    if kind == "H":
        return _kron_chain({qs[0]: _H}, n_qubits)
    if kind in ("RX", "RY", "RZ"):
        pauli = {"RX": _X, "RY": _Y, "RZ": _Z}[kind]
        m = np.cos(theta / 2) * _I2 - 1j * np.sin(theta / 2) * pauli
        return _kron_chain({qs[0]: m}, n_qubits)
    if kind == "CNOT":
        c, t = qs
        return _kron_chain({c: _P0}, n_qubits) + _kron_chain({c: _P1, t: _X}, n_qubits)
    if kind == "RZZ":
        zz = _kron_chain({qs[0]: _Z, qs[1]: _Z}, n_qubits)
        eye = np.eye(1 << n_qubits, dtype=np.complex128)
        return np.cos(theta / 2) * eye - 1j * np.sin(theta / 2) * zz
    raise UsageError(f"unknown gate kind {kind!r}")


def dense_unitary(circuit):
    n = circuit.n_qubits
    if n > MAX_DENSE_QUBITS:
        raise ConfigurationError(f"dense unitary limited to {MAX_DENSE_QUBITS} qubits, got {n}")
    u = np.eye(1 << n, dtype=np.complex128)
    for gate in circuit.gates:
        u = gate_matrix(gate, n) @ u
    return u

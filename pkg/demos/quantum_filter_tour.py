"""
A quantum filter, step by step
==============================

Build the 4-qubit filters used by the 2D hybrid network, look at what they
output and check the shift-rule gradient against finite differences.
"""

import numpy as np

from qccnn import gradcheck, qfilter, qsim

# a Bell pair, little-endian: qubit 0 is the low bit of the index
bell = qsim.run(qsim.Circuit(2, [qsim.h(0), qsim.cnot(0, 1)]))
print("bell amplitudes", np.round(bell.amplitudes, 4))

# the ZZ rotation is the same thing as CNOT . RZ . CNOT
theta = 0.7
a = qsim.dense_unitary(qsim.Circuit(2, [qsim.rzz(0, 1, theta)]))
b = qsim.dense_unitary(qsim.Circuit(2, [qsim.cnot(0, 1), qsim.rz(1, theta), qsim.cnot(0, 1)]))
print("RZZ vs CNOT.RZ.CNOT max diff", np.abs(a - b).max())

# one filter per encoding, basic ansatz, zero angles
patch = np.array([0.3, -1.2, 0.8, 0.0])
for enc in qfilter.ENCODINGS:
    spec = qfilter.FilterSpec(4, qfilter.Encoding(enc), qfilter.Ansatz("basic", 1))
    out = qfilter.evaluate(spec, np.zeros(qfilter.parameter_count(spec)), patch)
    print(f"{enc:>13}: <Z> = {np.round(out, 4)}")

# parameter counts of the two ansatze
for ans, n, layers in [("basic", 4, 1), ("strong", 4, 1), ("strong", 8, 2)]:
    spec = qfilter.FilterSpec(n, qfilter.Encoding("angle"), qfilter.Ansatz(ans, layers))
    print(f"{ans} x{layers} on {n} qubits: {qfilter.parameter_count(spec)} angles")

# gradients: shift rule vs central differences
rng = np.random.default_rng(0)
for spec in gradcheck.filter_specs():
    ep, ex, _ = gradcheck.filter_case(spec, rng, method="shift")
    ex = "exact zeros" if ex is None else f"{ex:.1e}"
    print(f"{spec.encoding.kind}/{spec.ansatz.kind}: params rel err {ep:.1e}, inputs {ex}")

"""
Where the parameters live
=========================

Per-layer counts for the four reference architectures.
"""

from qccnn import train

cases = [
    ("classical2d", {}, (1, 28, 28), 11),
    ("qccnn2d", {}, (1, 28, 28), 11),
    ("qccnn2d", {"ansatz": "strong"}, (1, 28, 28), 11),
    ("classical3d", {}, (1, 32, 32, 16), 2),
    ("qccnn3d", {"n_layers": 1}, (1, 32, 32, 16), 2),
    ("qccnn3d", {"n_layers": 2}, (1, 128, 128, 64), 2),
]

for kind, kw, shape, k in cases:
    arch = train.ArchitectureSpec(kind, **kw)
    rows, total = train.parameter_audit(arch, shape, k)
    print(f"\n{arch.label()} on {shape}")
    for i, name, out_shape, count in rows:
        if count:
            print(f"  {i:>2} {name:<50} {count:>7}")
    print(f"  total {total}")

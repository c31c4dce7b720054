"""
Training a hybrid network on stripes
====================================

Small synthetic run: horizontal vs vertical stripes, the classical 2D net
against its quantum twin, two seeds each. Takes about a minute.
"""

import tempfile

from qccnn import data, train

full = data.synth_2d("stripes", 240, seed=0)
tr, va = data.SplitSpec(200, 40).apply(full)

with tempfile.TemporaryDirectory() as tmp:
    for kind in ("classical2d", "qccnn2d"):
        config = train.TrainConfig(arch=kind, epochs=3, batch=8, seeds=(0, 1), out=f"{tmp}/{kind}", debug_range=True)
        result = train.run_experiment(config, tr, va)
        print(f"\n{result.manifest['arch.resolved']}")
        for row in result.aggregate:
            if row.metric == "accuracy":
                print(f"  epoch {row.epoch} {row.split:<5} acc {row.mean:.3f} +- {row.std:.3f}")

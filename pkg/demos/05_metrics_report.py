"""
Confusion matrices and result tables
====================================
"""

import numpy as np

from chestnet.metrics import EvalReport, accuracy, class_counts, confusion, emit_report

rng = np.random.default_rng(0)
names = ["COVID", "Lung_Opacity", "Normal", "Viral Pneumonia"]
truths = rng.integers(0, 4, 400)
preds = np.where(rng.random(400) < 0.9, truths, rng.integers(0, 4, 400))

cm = confusion(preds, truths, 4, names)
print(cm.counts)
print("accuracy", accuracy(cm))

# One-vs-rest counts for each class; they always partition the samples.
for c, name in enumerate(names):
    cc = class_counts(cm, c)
    print(f"{name:<16} tp={cc.tp:<4} tn={cc.tn:<4} fp={cc.fp:<3} fn={cc.fn:<3} "
          f"precision={cc.precision:.3f} recall={cc.recall:.3f}")

runs = [EvalReport.from_confusion("paper-cnn", cm, duration_s=898, epochs=5),
        EvalReport("mini-resnet", 0.941, cm, duration_s=1993, epochs=1)]
print(emit_report(runs, "markdown"))
print(emit_report(runs, "csv"))

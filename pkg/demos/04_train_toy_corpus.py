"""
Training on a synthetic corpus
==============================

Generate four classes of geometric patterns, overfit a small network,
evaluate it and round trip the checkpoint.
"""

import tempfile
from pathlib import Path

from chestnet import TrainConfig, evaluate, load_checkpoint, predict_image, train
from chestnet.synthetic import make_pattern_corpus

work = Path(tempfile.mkdtemp())
corpus = make_pattern_corpus(work / "corpus", per_class=3, size=64)

config = TrainConfig(model="paper-cnn", data=str(corpus), input_size=64, ratio=0.7, epochs=200,
                     batch=8, lr=0.001, target_train_accuracy=1.0, out=str(work / "toy.ckpt"))
result = train(config)
h = result.history
print(f"{h.epochs_completed} epochs, {h.iterations} iterations, final loss {h.train_loss[-1]:.4f}")
print("train accuracy:", h.final_train_accuracy)

# Held-out side: one image per class.
model = load_checkpoint(work / "toy.ckpt")
report = evaluate(model, result.dataset, result.manifest.test)
print("test accuracy:", report.accuracy)
print(report.confusion.counts)

image = next((corpus / "Normal").iterdir())
label, probs = predict_image(model, image)
print(f"{image.name}: {label}", probs.round(3))

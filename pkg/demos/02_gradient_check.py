"""
Checking gradients numerically
==============================

Compare analytic backward passes with centered finite differences in
float64.
"""

import numpy as np

from chestnet.models import Model, build_paper_cnn
from chestnet.nn import InceptionBlock, ResidualBlock, grad_check, gradient_probes, relative_error, roundoff_floor

rng = np.random.default_rng(0)

# Single blocks: the worst relative error over every input and parameter.
res = ResidualBlock(2, 3, stride=2, rng=rng, dtype=np.float64)
print("residual block :", grad_check(res, rng.standard_normal((1, 2, 5, 5))))
inc = InceptionBlock(2, 2, (2, 2), (1, 2), 1, rng=rng, dtype=np.float64)
print("inception block:", grad_check(inc, rng.standard_normal((1, 2, 5, 5))))

# A whole network, probed at a few coordinates per tensor through the
# cross-entropy loss.
model = Model(build_paper_cnn(1, 32), seed=7, dtype=np.float64)
x = rng.uniform(0, 1, (2, 1, 32, 32))
pairs, loss = gradient_probes(model, x, labels=np.array([1, 3]), max_probes=4)

# Derivatives much smaller than the round-off of the loss itself cannot be
# measured to 1e-6 relative with eps = 1e-5; report them separately.
floor = roundoff_floor(loss, 1e-5)
big = np.abs(pairs).max(axis=1) >= floor * 1e6
print(f"loss {loss:.6f}, round-off floor {floor:.2e}")
print("resolvable probes :", big.sum(), "max rel err", relative_error(*pairs[big].T).max())
print("tiny probes       :", (~big).sum(), "max abs err", np.abs(pairs[~big, 0] - pairs[~big, 1]).max())

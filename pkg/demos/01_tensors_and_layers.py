"""
Tensors and layers
==================

A tour of the array wrapper and the layer objects every model is built from.
"""

import numpy as np

from chestnet import Tensor, tensor_new
from chestnet.nn import Conv2d, MaxPool2d, ReLU
from chestnet.tensor import matmul, reshape, transpose2d

# Tensors wrap a float32 (or float64) array and never change after creation.
a = tensor_new((2, 3), init="uniform", low=-1, high=1, seed=0)
b = tensor_new((3, 2), init="constant", value=0.5)
print("a @ b =", matmul(a, b).tolist())

# Reshape and transpose round trips are exact.
assert reshape(reshape(a, (3, 2)), (2, 3)).equal(a)
assert transpose2d(transpose2d(a)).equal(a)
print("strides of a:", a.strides)

# Layers consume plain N x C x H x W arrays.
rng = np.random.default_rng(0)
x = rng.uniform(0, 1, (1, 1, 9, 9)).astype(np.float32)
conv = Conv2d(1, 4, 3, padding=1, rng=rng)
pool = MaxPool2d(3, 2)
y = pool(ReLU()(conv(x)))
print("conv -> relu -> pool:", x.shape, "->", y.shape)

# Backward returns the gradient with respect to the input and stores
# parameter gradients on the layer.
g = conv.backward(np.ones((1, 4, 9, 9), np.float32))
print("input grad", g.shape, "weight grad", conv.grads["weight"].shape)

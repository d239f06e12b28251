"""Layers with paired forward/backward passes.

Every layer caches what its backward pass needs during ``forward`` (the
forward context). A backward call consumes the context of the most recent
forward call; calling ``backward`` twice for one forward is an error.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# cap on im2col buffer elements per chunk, keeps 299px batches of 64 in memory
_IM2COL_BUDGET = 1 << 25


def conv_output_size(n: int, k: int, s: int = 1, p: int = 0) -> int:
    """Spatial size after a conv or pool window: floor((n + 2p - k) / s) + 1."""
    if n + 2 * p < k:
        raise ValueError(f"window {k} larger than padded input {n}+2*{p}")
    return (n + 2 * p - k) // s + 1


class Layer:
    """Base class. Subclasses fill ``params`` and write ``grads`` in backward."""

    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.frozen = False
        self._ctx = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x, train=False):
        return self.forward(np.asarray(x), train=train)

    def _take_ctx(self):
        ctx = self._ctx
        if ctx is None:
            raise RuntimeError(f"{self.kind}: backward without a matching forward")
        self._ctx = None
        return ctx

    def children(self) -> list[tuple[str, "Layer"]]:
        return []

    def named_layers(self, prefix=""):
        """Yield (qualified name, layer) for this layer and every sublayer."""
        yield prefix, self
        for name, child in self.children():
            yield from child.named_layers(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix=""):
        """Yield (qualified name, owning layer, parameter name)."""
        for qual, layer in self.named_layers(prefix):
            for pname in layer.params:
                yield (f"{qual}.{pname}" if qual else pname), layer, pname

    def set_frozen(self, frozen: bool = True):
        for _, layer in self.named_layers():
            layer.frozen = frozen

    def astype(self, dtype):
        for _, layer in self.named_layers():
            for k, v in layer.params.items():
                layer.params[k] = v.astype(dtype)
        return self


def _he_uniform(rng, shape, fan_in, dtype):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Layer):
    """2-D convolution (cross-correlation) with square kernels and zero padding.

    Weights are ``[out_channels, in_channels, k, k]``, bias ``[out_channels]``.
    """

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0,
                 rng=None, dtype=np.float32):
        super().__init__()
        if min(in_channels, out_channels, kernel_size, stride) < 1 or padding < 0:
            raise ValueError("invalid conv2d configuration")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel_size * kernel_size
        self.params["weight"] = _he_uniform(
            rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in, dtype)
        self.params["bias"] = np.zeros(out_channels, dtype=dtype)

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ValueError(f"conv2d expects {self.in_channels} channels, got {c}")
        k, s, p = self.kernel_size, self.stride, self.padding
        return self.out_channels, conv_output_size(h, k, s, p), conv_output_size(w, k, s, p)

    def _windows(self, xp):
        k, s = self.kernel_size, self.stride
        # (N, C, H', W', k, k) view, no copy
        return sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]

    def _chunk(self, n, per_sample):
        return max(1, min(n, _IM2COL_BUDGET // max(per_sample, 1)))

    def forward(self, x, train=False):
        x = np.asarray(x)
        if x.ndim != 4:
            raise ValueError(f"conv2d expects N x C x H x W input, got shape {x.shape}")
        n, c, h, w = x.shape
        _, ho, wo = self.output_shape((c, h, w))
        p = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        wmat = self.params["weight"].reshape(self.out_channels, -1)
        out = np.empty((n, self.out_channels, ho, wo), dtype=np.result_type(x, wmat))
        step = self._chunk(n, ho * wo * wmat.shape[1])
        for i in range(0, n, step):
            win = self._windows(xp[i:i + step])
            cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(-1, wmat.shape[1])
            res = cols @ wmat.T
            out[i:i + step] = res.reshape(-1, ho, wo, self.out_channels).transpose(0, 3, 1, 2)
        out += self.params["bias"].reshape(1, -1, 1, 1)
        self._ctx = (xp, x.shape)
        return out

    def backward(self, grad):
        xp, in_shape = self._take_ctx()
        n, c, h, w = in_shape
        k, s, p = self.kernel_size, self.stride, self.padding
        _, ho, wo = self.output_shape((c, h, w))
        if grad.shape != (n, self.out_channels, ho, wo):
            raise ValueError(f"conv2d grad shape {grad.shape} does not match forward output")
        wmat = self.params["weight"].reshape(self.out_channels, -1)
        gw = np.zeros_like(wmat)
        dxp = np.zeros(xp.shape, dtype=np.result_type(grad, wmat))
        step = self._chunk(n, ho * wo * wmat.shape[1])
        for i in range(0, n, step):
            g = grad[i:i + step].transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
            cols = self._windows(xp[i:i + step]).transpose(0, 2, 3, 1, 4, 5).reshape(-1, wmat.shape[1])
            gw += g.T @ cols
            dcols = (g @ wmat).reshape(-1, ho, wo, c, k, k).transpose(0, 3, 1, 2, 4, 5)
            dsub = dxp[i:i + step]
            for u in range(k):
                for v in range(k):
                    dsub[:, :, u:u + s * (ho - 1) + 1:s, v:v + s * (wo - 1) + 1:s] += dcols[..., u, v]
        self.grads["weight"] = gw.reshape(self.params["weight"].shape)
        self.grads["bias"] = grad.sum(axis=(0, 2, 3))
        if p:
            return dxp[:, :, p:p + h, p:p + w]
        return dxp


class MaxPool2d(Layer):
    """Max pooling over k x k windows. Gradient ties go to the first window
    position in row-major order."""

    kind = "maxpool2d"

    def __init__(self, kernel_size=3, stride=2, padding=0):
        super().__init__()
        if kernel_size < 1 or stride < 1 or padding < 0:
            raise ValueError("invalid maxpool2d configuration")
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding

    def output_shape(self, in_shape):
        c, h, w = in_shape
        k, s, p = self.kernel_size, self.stride, self.padding
        return c, conv_output_size(h, k, s, p), conv_output_size(w, k, s, p)

    def forward(self, x, train=False):
        x = np.asarray(x)
        n, c, h, w = x.shape
        _, ho, wo = self.output_shape((c, h, w))
        k, s, p = self.kernel_size, self.stride, self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        win = win.reshape(n, c, ho, wo, k * k)
        arg = win.argmax(axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        self._ctx = (arg, x.shape, xp.shape)
        return out

    def backward(self, grad):
        arg, in_shape, padded_shape = self._take_ctx()
        if grad.shape != arg.shape:
            raise ValueError("maxpool2d grad shape does not match forward output")
        k, s, p = self.kernel_size, self.stride, self.padding
        _, _, ho, wo = arg.shape
        dxp = np.zeros(padded_shape, dtype=grad.dtype)
        for u in range(k):
            for v in range(k):
                hit = arg == u * k + v
                if hit.any():
                    dxp[:, :, u:u + s * (ho - 1) + 1:s, v:v + s * (wo - 1) + 1:s] += np.where(hit, grad, 0)
        if p:
            h, w = in_shape[2:]
            return dxp[:, :, p:p + h, p:p + w]
        return dxp


class ReLU(Layer):
    kind = "relu"

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x, train=False):
        x = np.asarray(x)
        mask = x > 0
        self._ctx = mask
        return np.where(mask, x, x.dtype.type(0))

    def backward(self, grad):
        mask = self._take_ctx()
        return np.where(mask, grad, grad.dtype.type(0))


class Linear(Layer):
    """Fully connected layer: ``out = x @ W.T + b`` with ``W`` of shape [out, in]."""

    kind = "fully_connected"

    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        super().__init__()
        if in_features < 1 or out_features < 1:
            raise ValueError("invalid fully_connected configuration")
        self.in_features = in_features
        self.out_features = out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = _he_uniform(rng, (out_features, in_features), in_features, dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise ValueError(f"fully_connected expects ({self.in_features},), got {tuple(in_shape)}")
        return (self.out_features,)

    def forward(self, x, train=False):
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"fully_connected expects N x {self.in_features}, got {x.shape}")
        self._ctx = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, grad):
        x = self._take_ctx()
        if grad.shape != (x.shape[0], self.out_features):
            raise ValueError("fully_connected grad shape does not match forward output")
        self.grads["weight"] = grad.T @ x
        self.grads["bias"] = grad.sum(axis=0)
        return grad @ self.params["weight"]


class Dropout(Layer):
    """Inverted dropout. Eval mode is the identity.

    The mask for the t-th training forward is drawn from ``(seed, t)`` so runs
    replay exactly. Set ``reuse_mask`` to keep the last mask (gradient checks).
    """

    kind = "dropout"

    def __init__(self, rate=0.5, seed=0):
        super().__init__()
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.seed = seed
        self.calls = 0
        self.reuse_mask = False
        self._mask = None

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x, train=False):
        x = np.asarray(x)
        if not train or self.rate == 0:
            self._ctx = "identity"
            return x
        if not (self.reuse_mask and self._mask is not None and self._mask.shape == x.shape):
            rng = np.random.default_rng([*np.atleast_1d(self.seed).tolist(), self.calls])
            self.calls += 1
            keep = rng.random(x.shape) >= self.rate
            self._mask = keep.astype(x.dtype) / x.dtype.type(1 - self.rate)
        self._ctx = self._mask
        return x * self._mask

    def backward(self, grad):
        mask = self._take_ctx()
        if isinstance(mask, str):
            return grad
        return grad * mask


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False):
        x = np.asarray(x)
        self._ctx = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._take_ctx())


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def output_shape(self, in_shape):
        return (in_shape[0],)

    def forward(self, x, train=False):
        x = np.asarray(x)
        self._ctx = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        n, c, h, w = self._take_ctx()
        share = grad / grad.dtype.type(h * w)
        return np.broadcast_to(share[:, :, None, None], (n, c, h, w)).copy()


class ResidualBlock(Layer):
    """conv3x3(stride) -> ReLU -> conv3x3 plus a skip path, then ReLU.

    The skip is the identity when stride is 1 and channel counts match,
    otherwise a 1x1 strided projection conv. Pass ``projection`` to force
    either choice.
    """

    kind = "residual_block"

    def __init__(self, in_channels, out_channels, stride=1, projection=None,
                 rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        if projection is None:
            projection = stride != 1 or in_channels != out_channels
        elif not projection and (stride != 1 or in_channels != out_channels):
            raise ValueError("identity skip needs stride 1 and equal channel counts")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.conv1 = Conv2d(in_channels, out_channels, 3, stride, 1, rng=rng, dtype=dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(out_channels, out_channels, 3, 1, 1, rng=rng, dtype=dtype)
        self.shortcut = Conv2d(in_channels, out_channels, 1, stride, 0, rng=rng, dtype=dtype) if projection else None
        self.relu_out = ReLU()

    def children(self):
        kids = [("conv1", self.conv1), ("relu1", self.relu1), ("conv2", self.conv2)]
        if self.shortcut is not None:
            kids.append(("shortcut", self.shortcut))
        kids.append(("relu_out", self.relu_out))
        return kids

    def output_shape(self, in_shape):
        shape = self.conv2.output_shape(self.conv1.output_shape(in_shape))
        skip = self.shortcut.output_shape(in_shape) if self.shortcut else tuple(in_shape)
        if tuple(skip) != tuple(shape):
            raise ValueError(f"residual branch {shape} and skip {skip} shapes differ")
        return shape

    def forward(self, x, train=False):
        x = np.asarray(x)
        branch = self.conv2.forward(self.relu1.forward(self.conv1.forward(x, train), train), train)
        skip = self.shortcut.forward(x, train) if self.shortcut is not None else x
        if branch.shape != skip.shape:
            raise ValueError(f"residual branch {branch.shape} and skip {skip.shape} shapes differ")
        self._ctx = True
        return self.relu_out.forward(branch + skip, train)

    def backward(self, grad):
        self._take_ctx()
        g = self.relu_out.backward(grad)
        gx = self.conv1.backward(self.relu1.backward(self.conv2.backward(g)))
        if self.shortcut is not None:
            return gx + self.shortcut.backward(g)
        return gx + g


class InceptionBlock(Layer):
    """Four parallel stride-1 branches concatenated on the channel axis.

    Branches: 1x1 conv; 1x1 -> 3x3 (p=1); 1x1 -> 5x5 (p=2);
    3x3 max pool (s=1, p=1) -> 1x1. Every conv is followed by ReLU.
    """

    kind = "inception_block"

    def __init__(self, in_channels, branch1, branch3, branch5, pool_proj,
                 rng=None, dtype=np.float32):
        super().__init__()
        widths = [branch1, *branch3, *branch5, pool_proj]
        if len(branch3) != 2 or len(branch5) != 2 or min(widths) < 1:
            raise ValueError("every inception branch needs at least one channel per conv")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.branch_channels = (branch1, branch3[1], branch5[1], pool_proj)

        def conv(cin, cout, k):
            return Conv2d(cin, cout, k, 1, k // 2, rng=rng, dtype=dtype)

        self.branches = [
            [conv(in_channels, branch1, 1), ReLU()],
            [conv(in_channels, branch3[0], 1), ReLU(), conv(branch3[0], branch3[1], 3), ReLU()],
            [conv(in_channels, branch5[0], 1), ReLU(), conv(branch5[0], branch5[1], 5), ReLU()],
            [MaxPool2d(3, 1, 1), conv(in_channels, pool_proj, 1), ReLU()],
        ]

    @property
    def out_channels(self):
        return sum(self.branch_channels)

    def children(self):
        return [(f"b{i}.{j}", layer) for i, branch in enumerate(self.branches)
                for j, layer in enumerate(branch)]

    def _branch_shapes(self, in_shape):
        shapes = []
        for branch in self.branches:
            shape = tuple(in_shape)
            for layer in branch:
                shape = layer.output_shape(shape)
            shapes.append(shape)
        return shapes

    def output_shape(self, in_shape):
        shapes = self._branch_shapes(in_shape)
        if len({s[1:] for s in shapes}) != 1:
            raise ValueError(f"inception branch spatial sizes differ: {shapes}")
        return (sum(s[0] for s in shapes), *shapes[0][1:])

    def forward(self, x, train=False):
        x = np.asarray(x)
        outs = []
        for branch in self.branches:
            y = x
            for layer in branch:
                y = layer.forward(y, train)
            outs.append(y)
        if len({o.shape[2:] for o in outs}) != 1:
            raise ValueError("inception branch spatial sizes differ")
        self._ctx = [o.shape[1] for o in outs]
        return np.concatenate(outs, axis=1)

    def backward(self, grad):
        widths = self._take_ctx()
        gx = None
        start = 0
        for branch, width in zip(self.branches, widths):
            g = grad[:, start:start + width]
            start += width
            for layer in reversed(branch):
                g = layer.backward(g)
            gx = g if gx is None else gx + g
        return gx


class Sequential(Layer):
    """Ordered composition of layers; parameters are named ``<index>.<name>``."""

    kind = "sequential"

    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def children(self):
        return [(str(i), layer) for i, layer in enumerate(self.layers)]

    def output_shape(self, in_shape):
        shape = tuple(in_shape)
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def forward(self, x, train=False):
        x = np.asarray(x)
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

"""Architecture descriptors, builders and the transfer-learning freeze.

A :class:`ModelSpec` is a JSON-friendly description (input shape plus an
ordered list of layer descriptors). :class:`Model` instantiates it, with
fully-connected input widths inferred by shape propagation.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .nn import layers as L

NUM_CLASSES = 4


@dataclass
class ModelSpec:
    name: str
    input_shape: tuple  # (C, H, W)
    layers: list = field(default_factory=list)
    num_classes: int = NUM_CLASSES

    def to_dict(self):
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "layers": copy.deepcopy(self.layers),
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], tuple(d["input_shape"]), copy.deepcopy(d["layers"]), d["num_classes"])

    def trace(self):
        """Output shape after every layer descriptor (raises on inconsistency)."""
        shapes = []
        shape = tuple(self.input_shape)
        for desc in self.layers:
            shape = tuple(_layer_output_shape(desc, shape))
            shapes.append(shape)
        return shapes

    def spatial_trace(self, kind=None):
        """Spatial size after each layer, or only after layers of ``kind``."""
        sizes = []
        for desc, shape in zip(self.layers, self.trace()):
            if len(shape) == 3 and (kind is None or desc["kind"] == kind):
                sizes.append(shape[1])
        return sizes

    def output_shape(self):
        return self.trace()[-1]

    def weighted_layer_count(self):
        """Conv and FC layers along the deepest path.

        Projection shortcuts are not counted; an inception block counts as its
        two-conv depth.
        """
        count = 0
        for desc in self.layers:
            kind = desc["kind"]
            if kind in ("conv2d", "fully_connected"):
                count += 1
            elif kind == "residual_block":
                count += 2
            elif kind == "inception_block":
                count += 2
        return count

    def validate(self):
        out = self.output_shape()
        if tuple(out) != (self.num_classes,):
            raise ValueError(f"{self.name}: final output {out}, expected ({self.num_classes},)")
        return self


def _layer_output_shape(desc, shape):
    """Shape rule for one descriptor without allocating parameters."""
    kind = desc["kind"]
    if kind == "conv2d":
        c, h, w = shape
        k, s, p = desc["kernel"], desc.get("stride", 1), desc.get("padding", 0)
        return desc["out_channels"], L.conv_output_size(h, k, s, p), L.conv_output_size(w, k, s, p)
    if kind == "maxpool2d":
        c, h, w = shape
        k, s, p = desc.get("kernel", 3), desc.get("stride", 2), desc.get("padding", 0)
        return c, L.conv_output_size(h, k, s, p), L.conv_output_size(w, k, s, p)
    if kind in ("relu", "dropout"):
        return tuple(shape)
    if kind == "flatten":
        return (int(np.prod(shape)),)
    if kind == "global_avg_pool":
        return (shape[0],)
    if kind == "fully_connected":
        if len(shape) != 1:
            raise ValueError(f"fully_connected needs a flat input, got {shape}")
        return (desc["out_features"],)
    if kind == "residual_block":
        c, h, w = shape
        s, out = desc.get("stride", 1), desc["out_channels"]
        if desc.get("projection") is False and (s != 1 or c != out):
            raise ValueError("identity skip needs stride 1 and equal channel counts")
        return out, L.conv_output_size(h, 3, s, 1), L.conv_output_size(w, 3, s, 1)
    if kind == "inception_block":
        widths = [desc["branch1"], *desc["branch3"], *desc["branch5"], desc["pool_proj"]]
        if min(widths) < 1:
            raise ValueError("every inception branch needs at least one channel per conv")
        return desc["branch1"] + desc["branch3"][1] + desc["branch5"][1] + desc["pool_proj"], shape[1], shape[2]
    raise ValueError(f"unknown layer kind {kind!r}")


def _make_layer(desc, in_shape, rng, dtype, seed, index):
    kind = desc["kind"]
    if kind == "conv2d":
        return L.Conv2d(in_shape[0], desc["out_channels"], desc["kernel"], desc.get("stride", 1),
                        desc.get("padding", 0), rng=rng, dtype=dtype)
    if kind == "maxpool2d":
        return L.MaxPool2d(desc.get("kernel", 3), desc.get("stride", 2), desc.get("padding", 0))
    if kind == "relu":
        return L.ReLU()
    if kind == "flatten":
        return L.Flatten()
    if kind == "global_avg_pool":
        return L.GlobalAvgPool()
    if kind == "dropout":
        return L.Dropout(desc.get("rate", 0.5), seed=[seed, index])
    if kind == "fully_connected":
        if len(in_shape) != 1:
            raise ValueError(f"fully_connected needs a flat input, got {in_shape}")
        return L.Linear(in_shape[0], desc["out_features"], rng=rng, dtype=dtype)
    if kind == "residual_block":
        return L.ResidualBlock(in_shape[0], desc["out_channels"], desc.get("stride", 1),
                               desc.get("projection"), rng=rng, dtype=dtype)
    if kind == "inception_block":
        return L.InceptionBlock(in_shape[0], desc["branch1"], tuple(desc["branch3"]),
                                tuple(desc["branch5"]), desc["pool_proj"], rng=rng, dtype=dtype)
    raise ValueError(f"unknown layer kind {kind!r}")


def _instantiate(spec, seed, dtype):
    shape = tuple(spec.input_shape)
    built = []
    for i, desc in enumerate(spec.layers):
        rng = np.random.default_rng([seed, i])
        layer = _make_layer(desc, shape, rng, dtype, seed, i)
        shape = tuple(layer.output_shape(shape))
        built.append(layer)
    return built


class Model(L.Sequential):
    """A :class:`Sequential` built from a :class:`ModelSpec`.

    Weights use a He-style uniform fan-in init, biases start at zero. The
    init of layer ``i`` draws from ``default_rng([seed, i])``.
    """

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32):
        spec.validate()
        super().__init__(_instantiate(spec, seed, np.dtype(dtype)))
        self.spec = spec
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.metadata: dict = {}

    def predict_logits(self, x, batch_size=64):
        x = np.asarray(x)
        outs = [self.forward(x[i:i + batch_size].astype(self.dtype, copy=False), train=False)
                for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)

    def state(self):
        """Mapping of qualified parameter name to array."""
        return {name: layer.params[pname] for name, layer, pname in self.named_parameters()}

    def parameter_count(self):
        return sum(v.size for v in self.state().values())

    def final_fc(self):
        for layer in reversed(self.layers):
            if isinstance(layer, L.Linear):
                return layer
        return None


# -- builders ----------------------------------------------------------------

def _conv(out_channels, kernel, stride=1, padding=0):
    return {"kind": "conv2d", "out_channels": out_channels, "kernel": kernel,
            "stride": stride, "padding": padding}


def _pool(kernel=3, stride=2, padding=0):
    return {"kind": "maxpool2d", "kernel": kernel, "stride": stride, "padding": padding}


RELU = {"kind": "relu"}
FLATTEN = {"kind": "flatten"}
GAP = {"kind": "global_avg_pool"}


def _fc(out_features):
    return {"kind": "fully_connected", "out_features": out_features}


PAPER_CNN_STAGES = ((32, 8), (64, 3), (128, 5), (256, 5), (512, 5), (1024, 5))


def build_paper_cnn(input_channels=1, input_size=299, num_classes=NUM_CLASSES) -> ModelSpec:
    """Six conv(k, pad k//2) -> ReLU -> maxpool(3, 2) stages, flatten, FC.

    At 299 px the post-pool sizes are 149, 74, 36, 17, 8, 3 and the FC sees
    1024*3*3 = 9216 features. Below 127 px the later stages would shrink
    under the 3x3 pool window; such pools are omitted so the six convs stay.
    """
    if input_channels not in (1, 3):
        raise ValueError("paper-cnn takes 1 or 3 input channels")
    layers = []
    size = input_size
    for filters, k in PAPER_CNN_STAGES:
        layers += [_conv(filters, k, 1, k // 2), RELU]
        size = L.conv_output_size(size, k, 1, k // 2)
        if size >= 3:
            layers.append(_pool(3, 2))
            size = L.conv_output_size(size, 3, 2)
    layers += [FLATTEN, _fc(num_classes)]
    return ModelSpec("paper-cnn", (input_channels, input_size, input_size), layers, num_classes).validate()


def build_mini_alexnet(input_size=227, num_classes=NUM_CLASSES, dropout=0.5) -> ModelSpec:
    """Five convs and three FCs in the AlexNet pattern at reduced width."""
    layers = [
        _conv(16, 11, 4), RELU, _pool(),
        _conv(32, 5, 1, 2), RELU, _pool(),
        _conv(48, 3, 1, 1), RELU,
        _conv(48, 3, 1, 1), RELU,
        _conv(32, 3, 1, 1), RELU, _pool(),
        FLATTEN,
        _fc(256), RELU, {"kind": "dropout", "rate": dropout},
        _fc(128), RELU, {"kind": "dropout", "rate": dropout},
        _fc(num_classes),
    ]
    return ModelSpec("mini-alexnet", (3, input_size, input_size), layers, num_classes).validate()


def build_mini_resnet(input_channels=3, input_size=224, num_classes=NUM_CLASSES) -> ModelSpec:
    """ResNet-18 layout at widths 8/16/32/64: stem, 4 stages x 2 blocks, GAP, FC."""
    layers = [_conv(8, 7, 2, 3), RELU, _pool(3, 2, 1)]
    for stage, width in enumerate((8, 16, 32, 64)):
        for block in range(2):
            stride = 2 if stage > 0 and block == 0 else 1
            layers.append({"kind": "residual_block", "out_channels": width, "stride": stride})
    layers += [GAP, _fc(num_classes)]
    return ModelSpec("mini-resnet", (input_channels, input_size, input_size), layers, num_classes).validate()


def _inception(b1=8, b3=(8, 12), b5=(4, 8), pool_proj=8):
    return {"kind": "inception_block", "branch1": b1, "branch3": list(b3),
            "branch5": list(b5), "pool_proj": pool_proj}


def build_mini_inception(input_channels=3, input_size=299, num_classes=NUM_CLASSES) -> ModelSpec:
    """Stem conv(8, 3x3, s2) -> pool -> two 36-channel inception blocks -> GAP -> FC."""
    layers = [_conv(8, 3, 2), RELU, _pool(), _inception(), _inception(), GAP, _fc(num_classes)]
    return ModelSpec("mini-inception", (input_channels, input_size, input_size), layers, num_classes).validate()


BUILDERS = {
    "paper-cnn": (build_paper_cnn, 1, 299),
    "mini-alexnet": (build_mini_alexnet, 3, 227),
    "mini-resnet": (build_mini_resnet, 3, 224),
    "mini-inception": (build_mini_inception, 3, 299),
}


def build_spec(name, input_channels=None, input_size=None, num_classes=NUM_CLASSES) -> ModelSpec:
    """Look up a builder by CLI name, applying optional overrides."""
    try:
        builder, channels, size = BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(BUILDERS)}") from None
    size = input_size or size
    if name == "mini-alexnet":
        if input_channels not in (None, 3):
            raise ValueError("mini-alexnet takes 3-channel input")
        return builder(input_size=size, num_classes=num_classes)
    return builder(input_channels=input_channels or channels, input_size=size, num_classes=num_classes)


def fine_tune_setup(model: Model, mode="freeze_all_but_final_fc"):
    """Freeze every parameter except the final FC head, or unfreeze all.

    ``mode`` is ``"freeze_all_but_final_fc"`` (alias ``"head"``) or ``"none"``.
    """
    head = model.final_fc()
    if head is None:
        raise ValueError("model has no fully connected head")
    if mode == "none":
        model.set_frozen(False)
    elif mode in ("freeze_all_but_final_fc", "head"):
        model.set_frozen(True)
        model.frozen = False
        head.frozen = False
    else:
        raise ValueError(f"unknown fine-tune mode {mode!r}")
    return model


def trainable_parameters(model: Model):
    return [name for name, layer, _ in model.named_parameters() if not layer.frozen]

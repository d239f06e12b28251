from dataclasses import dataclass, field

import numpy as np


@dataclass
class SgdConfig:
    learning_rate: float = 0.001
    momentum: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


@dataclass
class SGD:
    """Plain SGD with optional heavy-ball momentum: ``v = mu*v + g; w -= lr*v``.

    Parameters of frozen layers are skipped and never touched.
    """

    config: SgdConfig = field(default_factory=SgdConfig)
    velocity: dict = field(default_factory=dict)

    def step(self, model):
        lr = self.config.learning_rate
        mu = self.config.momentum
        for name, layer, pname in model.named_parameters():
            if layer.frozen:
                continue
            if pname not in layer.grads:
                raise KeyError(f"no gradient for {name}; run backward first")
            w = layer.params[pname]
            g = layer.grads[pname]
            if g.shape != w.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {w.shape} for {name}")
            if mu:
                v = self.velocity.get(name)
                v = g.astype(w.dtype) if v is None else mu * v + g
                self.velocity[name] = v
                step = v
            else:
                step = g
            layer.params[pname] = (w - w.dtype.type(lr) * step.astype(w.dtype)).astype(w.dtype)
        return model


def sgd_step(model, config: SgdConfig = None, state: SGD = None):
    """Apply one update to ``model`` from the gradients left by ``backward``."""
    opt = state if state is not None else SGD(config or SgdConfig())
    return opt.step(model)

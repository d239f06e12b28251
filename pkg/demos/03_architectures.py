"""
The four architectures
======================

Print each builder's layer-by-layer shape trace and parameter count.
"""

from chestnet.models import BUILDERS, Model, build_spec

for name in sorted(BUILDERS):
    spec = build_spec(name)
    model = Model(spec)
    print(f"\n{name}: input {spec.input_shape}, {spec.weighted_layer_count()} weighted layers, "
          f"{model.parameter_count():,} parameters")
    for desc, shape in zip(spec.layers, spec.trace()):
        print(f"  {desc['kind']:<16} -> {shape}")

# A smaller input rescales the first fully connected layer automatically.
small = build_spec("paper-cnn", input_size=64)
print("\npaper-cnn at 64 px, flatten ->", small.trace()[-2])

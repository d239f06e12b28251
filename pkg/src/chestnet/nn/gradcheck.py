"""Finite-difference gradient checking."""
import numpy as np

from .layers import Dropout
from .loss import softmax_cross_entropy


def relative_error(analytic, numeric):
    """``|a - n| / max(|a|, |n|, 1e-12)``, elementwise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return np.abs(analytic - numeric) / denom


def gradient_probes(layer, x, eps=1e-5, labels=None, max_probes=None, seed=0, train=True,
                    min_magnitude=0.0):
    """Analytic vs centered-difference derivatives at sampled coordinates.

    The scalar objective is softmax cross-entropy when ``labels`` is given,
    otherwise ``sum(out * R)`` for a fixed random projection ``R``. The input
    and every parameter tensor are probed; ``max_probes`` caps the sampled
    coordinates per tensor and ``min_magnitude`` restricts sampling to
    coordinates whose analytic derivative is at least that large.

    Returns:
        (pairs, objective) where ``pairs`` is an ``M x 2`` array of
        (analytic, numeric) and ``objective`` the unperturbed value.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    for name, owner, pname in layer.named_parameters():
        if owner.params[pname].dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters; {name} is {owner.params[pname].dtype}")
    rng = np.random.default_rng(seed)
    dropouts = [l for _, l in layer.named_layers() if isinstance(l, Dropout)]
    for d in dropouts:
        d.reuse_mask = True
    try:
        y = layer.forward(x, train=train)
        if labels is not None:
            f0, _, g = softmax_cross_entropy(y, labels)
        else:
            g = rng.standard_normal(y.shape)
            f0 = float(np.sum(y * g))
        proj = g
        gx = layer.backward(g)

        def objective():
            out = layer.forward(x, train=train)
            if labels is not None:
                return softmax_cross_entropy(out, labels)[0]
            return float(np.sum(out * proj))

        targets = [(x, gx)]
        targets += [(owner.params[pname], owner.grads[pname].copy())
                    for _, owner, pname in layer.named_parameters()]
        pairs = []
        for arr, grad in targets:
            eligible = np.flatnonzero(np.abs(grad) >= min_magnitude)
            if max_probes is not None and eligible.size > max_probes:
                eligible = rng.choice(eligible, max_probes, replace=False)
            for flat in eligible:
                idx = np.unravel_index(flat, arr.shape)
                orig = arr[idx]
                arr[idx] = orig + eps
                fp = objective()
                arr[idx] = orig - eps
                fm = objective()
                arr[idx] = orig
                pairs.append((grad[idx], (fp - fm) / (2 * eps)))
    finally:
        for d in dropouts:
            d.reuse_mask = False
    pairs = np.array(pairs, dtype=np.float64).reshape(-1, 2)
    if not np.isfinite(pairs).all() or not np.isfinite(f0):
        raise FloatingPointError("non-finite value during gradient check")
    return pairs, f0


def grad_check(layer, x, eps=1e-5, labels=None, max_probes=None, seed=0, train=True,
               min_magnitude=0.0):
    """Max relative error between analytic and centered-difference gradients.

    See :func:`gradient_probes` for the arguments.
    """
    pairs, _ = gradient_probes(layer, x, eps, labels, max_probes, seed, train, min_magnitude)
    if pairs.size == 0:
        return 0.0
    return float(relative_error(pairs[:, 0], pairs[:, 1]).max())


def roundoff_floor(objective, eps):
    """Absolute error a float64 centered difference cannot resolve below.

    Two evaluations each carry about one ulp of the objective; dividing by
    ``2 * eps`` gives the derivative noise. A factor 8 leaves headroom for
    accumulated rounding.
    """
    return 8 * np.spacing(abs(objective)) / (2 * eps)

"""Shared builders for the heavier tests."""

import numpy as np

from skycount.gradcheck import grad_check
from skycount.model import Variant, build_model, forward
from skycount.synthetic import tiny_config
from skycount.tensor import Tensor, mul, tsum


def perturbed_tiny_model(variant=Variant.FULL, seed=0):
    """Tiny model moved off its init so every block contributes to the output.

    Attention scales become non-zero and offsets fractional, so bilinear
    sampling sits away from the grid lines where it has kinks.
    """
    rng = np.random.default_rng(seed)
    config = tiny_config(variant, init_scheme="he")
    params = build_model(config, rng)
    for name, t in params.items():
        if name.endswith(".bias"):
            t.data[:] = rng.normal(0.0, 0.05, size=t.shape)
        elif name.endswith((".lam", ".mu")):
            t.data[:] = 0.5
        elif name.endswith(".offset_weight"):
            t.data[:] = rng.normal(0.0, 0.01, size=t.shape)
        elif name.endswith(".offset_bias"):
            t.data[:] = rng.uniform(0.2, 0.8, size=t.shape)
    return config, params


def model_grad_check(variant=Variant.FULL, size=32, per_tensor=6, seed=0, tol=1e-3):
    config, params = perturbed_tiny_model(variant, seed)
    rng = np.random.default_rng(seed + 1)
    image = Tensor(rng.uniform(0.0, 1.0, size=(1, 3, size, size)))
    weight = Tensor(rng.normal(size=(1, 1, size // 8, size // 8)))
    names = list(params)

    def f(tensors):
        p = dict(zip(names, tensors[1:]))
        return tsum(mul(forward(p, config, tensors[0]), weight))

    return grad_check(f, [image] + [params[n] for n in names], tol=tol, atol=1e-6,
                      max_entries=per_tensor, rng=rng)

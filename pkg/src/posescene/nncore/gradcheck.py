"""Central-difference gradient verification for any scalar loss."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, NumericError
from .params import ParamStore


def grad_check(f, store: ParamStore, eps: float = 1e-4,
               max_per_param: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between tape gradients and central differences.

    f() must rebuild its graph from the store's current values and return a
    scalar Tensor. With max_per_param set, that many coordinates per
    parameter are probed (rng-chosen); otherwise every coordinate is.
    """
    if not (1e-6 <= eps <= 1e-3):
        raise ConfigError(f"eps must be in [1e-6, 1e-3], got {eps}")
    if max_per_param is not None and rng is None:
        rng = np.random.default_rng(0)

    loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericError("non-finite loss in grad_check")
    store.zero_grad()
    loss.backward()
    analytic = {
        name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        for name, p in store.trainable()
    }

    worst = 0.0
    for name, p in store.trainable():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_per_param is not None and n > max_per_param:
            coords = rng.choice(n, size=max_per_param, replace=False)
        else:
            coords = range(n)
        a_flat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f().data)
            flat[i] = orig - eps
            lo = float(f().data)
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError(f"non-finite loss while probing {name!r}")
            numeric = (hi - lo) / (2.0 * eps)
            a = a_flat[i]
            rel = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-8)
            worst = max(worst, rel)
    return worst

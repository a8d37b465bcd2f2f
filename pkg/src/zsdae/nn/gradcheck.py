"""Central finite differences against reverse-mode gradients."""

from __future__ import annotations

import numpy as np


def relative_error(a, b, floor=1e-7):
    return abs(a - b) / max(abs(a) + abs(b), floor)


def sample_gradcheck(loss_fn, params, n=50, eps=1e-5, seed=0):
    """Compare ``backward`` with central differences on ``n`` random scalar entries.

    ``loss_fn()`` must rebuild the graph from ``params`` each call and return
    a scalar Tensor. Run it on float64 parameters. Returns a list of
    ``(name, flat_index, analytic, numeric, rel_error)``.
    """
    for t in params.values():
        t.grad = None
    loss = loss_fn()
    loss.backward()
    grads = {k: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for k, t in params.items()}
    names = sorted(params)
    sizes = np.array([params[k].data.size for k in names], dtype=np.float64)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        flat = params[name].data.reshape(-1)
        i = int(rng.integers(flat.size))
        orig = flat[i]
        flat[i] = orig + eps
        up = float(loss_fn().data)
        flat[i] = orig - eps
        down = float(loss_fn().data)
        flat[i] = orig
        num = (up - down) / (2 * eps)
        ana = float(grads[name].reshape(-1)[i])
        out.append((name, i, ana, num, relative_error(ana, num)))
    return out

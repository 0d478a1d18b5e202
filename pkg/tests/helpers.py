"""Shared oracles for the trainer and acceptance suites."""

import numpy as np

from lrvq.linalg import make_rng
from lrvq.trainer import forward, loss_and_grads


def directional_gradcheck(
    net, x, y, n_directions=10, eps=1e-5, tol=1e-4, seed=2024, max_tries=1000
):
    """Central-difference check along random unit directions per parameter.

    The loss is piecewise-smooth in the parameters; a finite difference
    across a relu sign change does not estimate the derivative, so
    directions whose +/-eps endpoints flip any activation mask are redrawn.
    Returns the worst relative error observed.
    """
    loss, grads = loss_and_grads(net, x, y)
    params = net.trainables()
    worst = 0.0
    rng = make_rng(seed)
    for p, g in zip(params, grads):
        accepted = 0
        tries = 0
        while accepted < n_directions:
            tries += 1
            if tries > max_tries:
                raise RuntimeError("could not find a kink-free direction")
            v = rng.normal(size=p.shape)
            v /= np.linalg.norm(v)
            p += eps * v
            _, loss_plus, cache_plus = forward(net, x, y)
            p -= 2 * eps * v
            _, loss_minus, cache_minus = forward(net, x, y)
            p += eps * v
            clean = all(
                np.array_equal(cp["mask"], cm["mask"])
                for cp, cm in zip(cache_plus["conv"], cache_minus["conv"])
            )
            if not clean:
                continue
            accepted += 1
            analytic = float(np.sum(g * v))
            numeric = (loss_plus - loss_minus) / (2 * eps)
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-10)
            worst = max(worst, rel)
            assert rel < tol, f"gradient check failed: rel error {rel:.3e}"
    return worst

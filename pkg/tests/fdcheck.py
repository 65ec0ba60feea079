"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np

from dodrom.autodiff import Tape, Tensor


def numeric_grad(f, params, step=1e-6):
    """Central differences of scalar ``f()`` with respect to each tensor in ``params``."""
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        it = np.nditer(p.data, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p.data[i]
            p.data[i] = old + step
            fp = float(np.asarray(f().data).sum())
            p.data[i] = old - step
            fm = float(np.asarray(f().data).sum())
            p.data[i] = old
            g[i] = (fp - fm) / (2 * step)
        out.append(g)
    return out


def tape_grad(f, params):
    with Tape() as tape:
        y = f()
    return tape.gradient(y, params)


def rel_err(a, b):
    a, b = np.concatenate([x.ravel() for x in a]), np.concatenate([x.ravel() for x in b])
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-8)


def check(f, params, tol=1e-5):
    """Max relative disagreement between tape and finite-difference gradients."""
    err = rel_err(tape_grad(f, params), numeric_grad(f, params))
    assert err <= tol, f"gradient mismatch {err:.2e}"
    return err


def param(rng, *shape, positive=False):
    x = rng.standard_normal(shape)
    if positive:
        x = np.abs(x) + 0.5
    return Tensor(x, requires_grad=True)

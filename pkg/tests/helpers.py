"""Shared test utilities: finite differences and small builders."""

import numpy as np

from spikegrad.autodiff import Tape


def central_fd(f, x0, eps=1e-6):
    """Central finite-difference gradient of scalar f over a flat f64 vector."""
    x0 = np.asarray(x0, dtype=np.float64)
    g = np.zeros_like(x0)
    for k in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[k] += eps
        xm[k] -= eps
        g[k] = (f(xp) - f(xm)) / (2.0 * eps)
    return g


def tape_grad(build, x0):
    """Gradient of ``build(tape, leaves) -> scalar Var`` w.r.t. flat leaves."""
    x0 = np.asarray(x0, dtype=np.float64)
    with Tape() as tape:
        leaves = [tape.leaf(float(v)) for v in x0]
        out = build(tape, leaves)
        grads = tape.backward(out)
        return np.array([grads[v] for v in leaves]), out.value


def rel_err(a, b):
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    scale = np.maximum(np.abs(a), np.abs(b))
    scale[scale == 0.0] = 1.0
    return float(np.max(np.abs(a - b) / scale))

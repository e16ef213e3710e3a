"""Pure numpy Picard pyramid, numerically matched to the compiled kernel."""

import numpy as np

ACTIVATIONS = {
    0: lambda x: x,
    1: np.tanh,
    2: lambda x: np.where(x > 0.0, x, 0.0),
    3: lambda x: 1.0 / (1.0 + np.exp(-x)),
}


def pyramid_stencil(eps, delta, offsets, weights, beta, activation, iterations, init, trace=False):
    eps = np.ascontiguousarray(eps, dtype=np.float64)
    R, shape = eps.shape[0], eps.shape[1:]
    kappa = len(shape)
    offsets = np.asarray(offsets, dtype=np.int64).reshape(-1, kappa)
    weights = np.asarray(weights, dtype=np.float64)
    final_shape = tuple(n - 2 * iterations * h for n, h in zip(shape, delta))
    if any(s < 1 for s in final_shape):
        raise ValueError("box too small for the requested number of iterations")
    act = ACTIVATIONS[activation]
    cur = np.full(eps.shape, float(init))
    resid = np.zeros((R, iterations)) if trace else None
    for k in range(1, iterations + 1):
        region = (slice(None),) + tuple(slice(k * h, n - k * h) for n, h in zip(shape, delta))
        acc = None
        for off, w in zip(offsets, weights):
            src = (slice(None),) + tuple(slice(k * h + o, n - k * h + o) for n, h, o in zip(shape, delta, off))
            term = w * cur[src]
            acc = term if acc is None else acc + term
        val = act(acc) + beta * eps[region]
        if trace:
            resid[:, k - 1] = np.abs(val - cur[region]).reshape(R, -1).max(axis=1)
        nxt = np.empty_like(cur)
        nxt[region] = val
        cur = nxt
    final = (slice(None),) + tuple(slice(iterations * h, n - iterations * h) for n, h in zip(shape, delta))
    return np.ascontiguousarray(cur[final]), resid

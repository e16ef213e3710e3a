"""Backend selection for the Picard pyramid.

The compiled extension is used when it was built; set ``NCF_BACKEND=python`` to force the
numpy implementation.  Both expose ``pyramid_stencil`` with the same signature.
"""

import os

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _fallback}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

ACTIVATION_CODES = {"identity": 0, "tanh": 1, "relu": 2, "sigmoid": 3}


def _default_backend() -> str:
    wanted = os.environ.get("NCF_BACKEND", "").strip().lower()
    if wanted:
        if wanted not in BACKENDS:
            raise ImportError(f"NCF_BACKEND={wanted!r} is not available (have {sorted(BACKENDS)})")
        return wanted
    return "cython" if "cython" in BACKENDS else "python"


BACKEND = _default_backend()


def pyramid_stencil(eps, delta, offsets, weights, beta, activation, iterations, init=0.0, trace=False, backend=None):
    """Run ``iterations`` Picard sweeps of a scalar stencil on a batch of boxes.

    ``eps`` is (R, *box). Returns the surviving centre region (R, *box - 2*iterations*delta)
    and, when ``trace`` is set, the per-sweep sup residuals (R, iterations).
    """
    if iterations < 1:
        raise ValueError("need at least one Picard iteration")
    if len(weights) < 1:
        raise ValueError("stencil needs at least one offset")
    mod = BACKENDS[backend or BACKEND]
    return mod.pyramid_stencil(eps, tuple(int(h) for h in delta), offsets, weights, float(beta),
                               int(activation), int(iterations), float(init), bool(trace))

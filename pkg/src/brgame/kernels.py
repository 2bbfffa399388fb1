"""Backend selection for the bicycle-model kernels.

The compiled extension is used when it was built; otherwise the numpy
implementation is loaded.  Set ``BRGAME_PURE_PYTHON=1`` to force the fallback.
"""

import os

BACKEND = "python"

if os.environ.get("BRGAME_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from brgame._frenet_ext import (  # noqa: F401
            derivative,
            rollout,
            step,
            step_curvature,
            step_jac,
            wrap_angle,
        )

        BACKEND = "cython"
    except ImportError:
        pass

if BACKEND == "python":
    from brgame._frenet_py import (  # noqa: F401
        derivative,
        rollout,
        step,
        step_curvature,
        step_jac,
        wrap_angle,
    )

__all__ = [
    "BACKEND",
    "derivative",
    "rollout",
    "step",
    "step_curvature",
    "step_jac",
    "wrap_angle",
]

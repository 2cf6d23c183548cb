"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
numpy fallback in ``_pykernels`` is loaded. Set ``LSRGAN_PURE_PYTHON=1`` to
force the fallback.
"""
import os

if os.environ.get("LSRGAN_PURE_PYTHON", "") not in ("", "0"):
    from ._pykernels import *  # noqa: F401,F403
    from ._pykernels import BACKEND
else:
    try:
        from ._ckernels import *  # noqa: F401,F403
        from ._ckernels import BACKEND
    except ImportError:
        from ._pykernels import *  # noqa: F401,F403
        from ._pykernels import BACKEND

__all__ = ["BACKEND", "leaky_relu", "leaky_relu_mask", "band_penalty", "topk_rows", "segment_mean"]

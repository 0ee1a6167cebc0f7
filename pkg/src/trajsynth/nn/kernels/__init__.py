"""Backend selection for the hot training kernels.

The compiled extension (`_fastcore`, Cython) is preferred when it built;
otherwise the numpy reference implementation is used. Set
TRAJSYNTH_KERNELS=numpy or TRAJSYNTH_KERNELS=compiled to force a backend
(forcing `compiled` raises if the extension is missing).
"""

from __future__ import annotations

import os

from . import reference

_FORCE = os.environ.get("TRAJSYNTH_KERNELS", "auto").strip().lower()

if _FORCE == "numpy":
    _impl = reference
elif _FORCE in ("auto", "", "compiled"):
    try:
        from . import _fastcore as _impl
    except ImportError:
        if _FORCE == "compiled":
            raise ImportError(
                "TRAJSYNTH_KERNELS=compiled but the _fastcore extension is not built")
        _impl = reference
else:
    raise ValueError(f"unknown TRAJSYNTH_KERNELS value {_FORCE!r}")

BACKEND = _impl.BACKEND_NAME

causal_softmax = _impl.causal_softmax
causal_softmax_grad = _impl.causal_softmax_grad
softmax_xent = _impl.softmax_xent
softmax_xent_grad = _impl.softmax_xent_grad
gelu = _impl.gelu
gelu_grad = _impl.gelu_grad
adamw_update = _impl.adamw_update
layernorm = _impl.layernorm
layernorm_grad = _impl.layernorm_grad


def available_backends() -> list[str]:
    backends = [reference.BACKEND_NAME]
    try:
        from . import _fastcore
        backends.append(_fastcore.BACKEND_NAME)
    except ImportError:
        pass
    return backends

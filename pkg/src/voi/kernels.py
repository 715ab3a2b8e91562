"""Backend selection for the hierarchical-model sampler kernel.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``VOI_PURE_PYTHON=1`` is set, the pure-Python mirror is
used.  Both produce identical draws.
"""

import os

from . import _hier_kernel_py

BACKEND = "python"
hier_chain = _hier_kernel_py.hier_chain

if os.environ.get("VOI_PURE_PYTHON") != "1":
    try:
        from . import _hier_kernel
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        hier_chain = _hier_kernel.hier_chain


def available_backends():
    out = {"python": _hier_kernel_py.hier_chain}
    try:
        from . import _hier_kernel
    except ImportError:
        return out
    out["cython"] = _hier_kernel.hier_chain
    return out

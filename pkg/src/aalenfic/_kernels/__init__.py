"""Hot Gram-reduction kernel with backend selection at import time.

The compiled Cython core is preferred; the pure-numpy fallback is used when
the extension is unavailable or ``AALENFIC_PURE_PYTHON`` is set.  Both
backends implement the same ``model_profile`` contract and the same
Cholesky-pivot singularity rule, so fits agree across backends to rounding.
"""

import os

import numpy as np

from . import _pyref

_compiled = None
if not os.environ.get("AALENFIC_PURE_PYTHON"):
    try:
        from . import _core as _compiled
    except ImportError:
        _compiled = None

_impl = _compiled if _compiled is not None else _pyref

BACKEND = _impl.BACKEND


def available_backends() -> dict:
    """Importable backend modules keyed by name."""
    out = {"python": _pyref}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out


def model_profile(gram, lengths, risk_counts, ev_interval, ev_x, idx_i, idx_j,
                  need_all, rcond_tol, backend=None):
    """Dispatch to the selected backend after normalizing array dtypes.

    ``ev_interval`` must be nondecreasing (events in time order), which is
    how the grid provides them.
    """
    impl = available_backends()[backend] if backend else _impl
    return impl.model_profile(
        np.ascontiguousarray(gram, dtype=np.float64),
        np.ascontiguousarray(lengths, dtype=np.float64),
        np.ascontiguousarray(risk_counts, dtype=np.int64),
        np.ascontiguousarray(ev_interval, dtype=np.int64),
        np.ascontiguousarray(ev_x, dtype=np.float64),
        np.ascontiguousarray(idx_i, dtype=np.int64),
        np.ascontiguousarray(idx_j, dtype=np.int64),
        bool(need_all),
        float(rcond_tol),
    )

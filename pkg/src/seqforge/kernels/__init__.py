"""Hot-kernel dispatch.

Two interchangeable backends implement the same function surface:

* ``numba_backend``: JIT-compiled loops, the default when numba imports.
* ``numpy_backend``: pure numpy, selected with ``SEQFORGE_BACKEND=numpy``
  or used automatically when numba is unavailable.

Set ``SEQFORGE_BACKEND=numba`` or ``=numpy`` before import to force a choice.
Both backends share the fixed summation orders the library's determinism
guarantees rely on; see benchmarks/bench_kernels.py for the speed comparison.
"""

import os

from . import numpy_backend

_requested = os.environ.get("SEQFORGE_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"SEQFORGE_BACKEND={_requested!r} not recognized (use 'numba' or 'numpy')"
    )

if _requested == "numpy":
    BACKEND = "numpy"
    impl = numpy_backend
else:
    try:
        from . import numba_backend

        BACKEND = "numba"
        impl = numba_backend
    except ImportError:
        if _requested == "numba":
            raise
        BACKEND = "numpy"
        impl = numpy_backend

matmul = impl.matmul
softmax_rows = impl.softmax_rows
softmax_rows_bwd = impl.softmax_rows_bwd
log_softmax_rows = impl.log_softmax_rows
log_softmax_rows_bwd = impl.log_softmax_rows_bwd
lstm_gates = impl.lstm_gates
lstm_gates_bwd = impl.lstm_gates_bwd
attn_scores = impl.attn_scores
attn_scores_bwd = impl.attn_scores_bwd
attn_mix = impl.attn_mix
attn_mix_bwd = impl.attn_mix_bwd
scatter_add_rows = impl.scatter_add_rows

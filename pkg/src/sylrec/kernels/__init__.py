"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import time:

  * ``SYLREC_NO_NUMBA=1`` in the environment forces the numpy fallback
  * otherwise the numba backend is used when numba imports cleanly

``BACKEND`` names the active choice ("numba" or "numpy"). Both backends
implement the same functions with identical semantics; see
benchmarks/bench_kernels.py for a side-by-side timing comparison.
"""

import os
import warnings

if os.environ.get("SYLREC_NO_NUMBA", "") == "1":
    from sylrec.kernels.numpy_backend import (  # noqa: F401
        ctc_loss_grad, lstm_forward, lstm_backward, viterbi_pass)
    BACKEND = "numpy"
else:
    try:
        from sylrec.kernels.numba_backend import (  # noqa: F401
            ctc_loss_grad, lstm_forward, lstm_backward, viterbi_pass)
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - exercised only without numba
        warnings.warn("numba unavailable, falling back to pure-numpy kernels")
        from sylrec.kernels.numpy_backend import (  # noqa: F401
            ctc_loss_grad, lstm_forward, lstm_backward, viterbi_pass)
        BACKEND = "numpy"

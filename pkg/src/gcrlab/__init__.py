"""gcrlab: Gauss-Codazzi-Ricci residuals, Cartan frames, realization and weak convergence on grids."""

__version__ = "0.1.0"

import os as _os


def _thread_cap() -> None:
    # must run before numpy loads its BLAS; 0 or unset leaves the libraries on auto
    raw = _os.environ.get("GCRLAB_THREADS", "").strip()
    if not raw or not raw.isdigit() or int(raw) == 0:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ[var] = raw


_thread_cap()

from .errors import GateViolation, GcrlabError, NumericalFailure, ValidationError  # noqa: E402,F401
from .grid import Chart, ChartField  # noqa: E402,F401

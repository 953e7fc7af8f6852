"""Numerical toolkit for finite pointed metric measure spaces."""

import os

# POT probes optional array backends at import; importing TensorFlow or torch
# costs seconds and is never needed here.  Set before any submodule loads ot.
for _backend in ("PYTORCH", "JAX", "TENSORFLOW", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")

from .core import FinitePmmSpace, validate  # noqa: E402

__version__ = "0.1.0"

__all__ = ["FinitePmmSpace", "validate", "__version__"]

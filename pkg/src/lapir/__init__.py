"""Laplacian-pyramid inception-residual network for single-image
super-resolution, built on a small reverse-mode autodiff core.

The package is organized bottom-up: `tensor` (autodiff), `layers` and
`resample` (numeric building blocks), `network` (the pyramid model),
`rank_loss` (the rank-transform training objective), `optim`/`training`
(two-stage protocol), `data` (corpus preparation), `metrics`/`evaluate`
(benchmark harness) and `cli` (command-line entry points).
"""

__version__ = "0.1.0"

import os as _os

# LAPIR_THREADS: worker threads for numeric kernels; 0 (the default)
# pins the BLAS pools to one thread for deterministic arithmetic. Must
# happen before numpy first loads its BLAS backend.
_threads = _os.environ.get("LAPIR_THREADS", "0")
try:
    _count = max(1, int(_threads)) if int(_threads) else 1
except ValueError:
    _count = 1
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, str(_count))

# `tensor` (the factory) is deliberately not re-exported: the name would
# shadow the `lapir.tensor` submodule on `import lapir.tensor as ...`.
from .tensor import Tensor, scalar, no_grad, backward, grad_check  # noqa: F401

"""Video question answering over a location-aware object graph.

A small, fully self-contained stack: float64 tensors with taped reverse-mode
differentiation, the layers built on them, the graph reasoning model, feature
pack I/O, a synthetic task generator with a brute-force answer oracle, and a
training/evaluation CLI.
"""

import os

# the model runs many small matmuls; BLAS thread fan-out roughly doubles
# wall time on them, so default to single-threaded kernels (no effect if
# numpy was already imported elsewhere)
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

__version__ = "0.1.0"

import os
import sys

# thread count for the BLAS backend; must be set before numpy loads
_threads = os.environ.get("KRICCI_THREADS", "1")
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

from .cli import main  # noqa: E402

sys.exit(main())

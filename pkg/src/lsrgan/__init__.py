"""LsrGAN: semantic-relationship regularized conditional WGAN for zero-shot learning."""
import os as _os

__version__ = "0.1.0"

# must run before numpy loads its BLAS
_threads = _os.environ.get("LSRGAN_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

"""BLAS thread-pool defaults.

The study matrices are small (hundreds of rows); multithreaded BLAS only
adds spin-wait contention, and parallelism happens at the scenario/chunk
level instead.  Called before numpy is first imported; existing user
settings are respected.
"""

import os

_VARS = (
    "OPENBLAS_NUM_THREADS",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
    "BLIS_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def set_blas_single_thread():
    for var in _VARS:
        os.environ.setdefault(var, "1")

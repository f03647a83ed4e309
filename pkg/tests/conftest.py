import os

# Pin BLAS threading before numpy loads anywhere: keeps timing comparable and
# reduction order reproducible across runs on the same machine.
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

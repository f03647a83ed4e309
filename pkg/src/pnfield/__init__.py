"""Fourier polynomial neural fields.

Coordinate networks built from complex sinusoidal encodings, bias-free
linear maps, and elementwise products, arranged so that every output term
is confined to a declared frequency subband.  The package covers the full
workflow: subband algebra with provable product rules, frequency tilings,
model construction and exact basis expansion, manual-gradient training,
FFT-based spectral verification, and Gaussian scale-space queries.
"""

from .subband import (
    BandUnion,
    Direction,
    GaussianAtom,
    Norm,
    Subband,
    consistent_region_of,
    contains,
    gabor_product,
    otimes_l2,
    otimes_linf,
    rbf_product,
    union_band,
)
from .tiling import (
    Scheme,
    Tiling,
    TilingSpec,
    make_circular,
    make_rect,
    sample_frequency,
    validate_tiling,
)

__version__ = "0.1.0"

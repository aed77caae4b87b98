"""Encoder-decoder inpainting of masked image regions, trained with a weighted
reconstruction loss plus an optional adversarial loss, together with region-mask
generators, evaluation metrics, and nearest-neighbor inpainting baselines.

Hot numeric kernels are numba-compiled by default; set CTXFILL_BACKEND=numpy to
force the pure-numpy fallback (see ctxfill.backend).
"""

from ctxfill.backend import backend_name, set_backend
from ctxfill.rng import RngState

__version__ = "0.1.0"

__all__ = ["RngState", "backend_name", "set_backend", "__version__"]

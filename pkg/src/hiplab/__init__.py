"""hiplab: a desk-scale laboratory for hybrid coefficient reconstruction.

Synthesizes interior functionals ``H_j = d u_j`` from a second-order
elliptic equation, reconstructs the coefficient invariants from ratio
fields, resolves modality-specific gauges, and measures accuracy and
noise response on refinement families.
"""

from __future__ import annotations

__version__ = "0.1.0"

from . import (
    admissibility,
    config,
    forward,
    gauge,
    grids,
    metrics,
    phantoms,
    recon,
    studies,
    synthesis,
)
from .errors import HiplabError

__all__ = [
    "__version__",
    "HiplabError",
    "admissibility",
    "config",
    "forward",
    "gauge",
    "grids",
    "metrics",
    "phantoms",
    "recon",
    "studies",
    "synthesis",
]

"""Open-vocabulary panoptic inference and evaluation with CLIP-conditioned objectness."""
from openvocab_panoptic.errors import OvrError

__version__ = "0.1.0"

__all__ = ["OvrError", "__version__"]

"""npat: back-and-forth nudging reconstruction for 2D photoacoustic tomography."""
from .config import APP_VERSION

__all__ = ["APP_VERSION"]

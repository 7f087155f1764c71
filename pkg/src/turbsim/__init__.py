"""Atmospheric turbulence imaging: split-step and Zernike-space simulators,
closed-form statistics, and classical restoration."""

from .atmosphere import Cn2Profile, OpticalConfig

__version__ = "0.1.0"
__all__ = ["Cn2Profile", "OpticalConfig", "__version__"]

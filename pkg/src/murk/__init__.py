"""Volumetric radiative transfer through participating media.

Forward image-formation models (haze, underwater, low light), a particle
volume renderer with separate object and medium fields, reverse-stratified
media sampling, and an inverse-rendering loop that recovers clean radiance,
geometry, and medium coefficients from degraded multi-view images.
"""

__version__ = "0.1.0"

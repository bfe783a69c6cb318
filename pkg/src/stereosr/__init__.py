"""Stereo super-resolution inference with bi-directional parallax attention.

numpy forward pass, occlusion masks from cycle consistency, residual-image
losses, a synthetic layered-scene oracle, and the ``stereosr`` command.
"""

__version__ = "0.1.0"

"""crosstouch: cross-sensor tactile signal translation at desk scale.

Synthetic paired touch data from SDF indenters pressed into parameterized
sensors, a direct touch-to-touch conditional diffusion path, a
touch-to-depth-to-touch path built on exact pinhole geometry, and the
PSNR/SSIM/ICP-pose evaluation suite.
"""

__version__ = "0.1.0"

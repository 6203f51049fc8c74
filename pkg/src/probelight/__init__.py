"""HDR omnidirectional lighting estimation from a single LDR image.

A library and CLI that regresses a 32x32 log-space HDR light probe (mirror
ball mapping) from a limited-FOV LDR background image, trained end to end
with a differentiable multi-BRDF image-based relighting loss plus an
adversarial term, on fully synthetic data.
"""

__version__ = "0.1.0"

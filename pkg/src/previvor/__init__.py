"""Two-stage color restoration for degraded paintings.

Stage one enhances luminance with a pair of variational autoencoders and a
latent mapping network; stage two corrects hue with a color-query decoder
guided by silk-relative residual color priors.
"""

__version__ = "0.1.0"

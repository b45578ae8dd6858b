"""glyphdiff: attribute-controlled text rendering in toy latent-diffusion images."""

__version__ = "0.1.0"

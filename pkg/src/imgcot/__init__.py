"""ImgCoT: visual latent tokens for compressed chain-of-thought reasoning."""

__version__ = "0.1.0"

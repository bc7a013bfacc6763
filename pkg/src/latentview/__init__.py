"""Multi-view object classification with latent viewpoint variables."""

__version__ = "0.1.0"

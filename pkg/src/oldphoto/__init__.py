"""Old-photo restoration through latent translation between three image domains."""

__version__ = "0.1.0"

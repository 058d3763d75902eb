"""Hyperspectral unmixing with a two-stream spatial/spectral autoencoder."""
__version__ = "0.1.0"

"""Text-conditioned pose generation, retargeting, sprite rendering, and
scene outpainting, trained end-to-end on synthetic data."""

__version__ = "0.1.0"

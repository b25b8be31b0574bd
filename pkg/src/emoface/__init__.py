"""Emotional speech-driven 3D facial animation on spiral spatiotemporal mesh convolutions."""
__version__ = "0.1.0"

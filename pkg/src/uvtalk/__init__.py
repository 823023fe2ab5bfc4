"""Speech-driven facial motion and wrinkle generation in UV space."""

__version__ = "0.1.0"

"""Signal and image processing for in-situ TEM video and diffraction data."""

__version__ = "0.1.0"

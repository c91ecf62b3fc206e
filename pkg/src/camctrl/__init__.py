"""Camera-control toolkit for video diffusion: geometry, calibration, motion spectra, probing."""

__version__ = "0.1.0"

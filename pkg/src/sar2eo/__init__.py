"""SAR-to-EO image translation with median-filter denoising enhancement."""

__version__ = "0.1.0"

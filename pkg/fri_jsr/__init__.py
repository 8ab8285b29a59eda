# fri_jsr/__init__.py
"""Joint Fourier subsampling and learned recovery for FRI signals."""

__version__ = "0.1.0"

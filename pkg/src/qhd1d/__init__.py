"""1-D viscous QHD-Poisson numerical lab."""

__version__ = "0.1.0"

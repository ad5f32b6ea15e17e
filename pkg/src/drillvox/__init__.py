"""drillvox: deterministic volumetric drilling simulation toolkit."""

__version__ = "0.1.0"

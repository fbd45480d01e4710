# Human-to-humanoid motion tracking pipeline
__version__ = "0.1.0"

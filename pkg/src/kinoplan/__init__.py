"""Kinodynamic tree planning guided by a controller-built roadmap with gaps."""

__version__ = "0.1.0"

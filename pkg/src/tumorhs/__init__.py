"""Finite-volume tumor-growth simulator with nutrient coupling and
stiff-pressure (Hele-Shaw) limit diagnostics."""

__version__ = "0.1.0"

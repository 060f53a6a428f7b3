"""Non-adiabatic population transfer around exceptional points."""

__version__ = "0.1.0"

"""Power flow and optimal power flow posed as binary optimisation problems."""

__version__ = "0.1.0"

"""Master stability function for networks of piecewise-smooth (Filippov) agents."""

__version__ = "0.1.0"

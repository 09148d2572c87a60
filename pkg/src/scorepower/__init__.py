"""Sample-based scoring rules, power analysis and downstream decision checks."""

__version__ = "0.1.0"

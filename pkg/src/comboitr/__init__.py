"""Double encoder treatment rules for combination treatments."""

__version__ = "0.1.0"

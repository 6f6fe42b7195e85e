"""Joint recovery of payoffs and rationality temperature from quantal-response play."""

__version__ = "0.1.0"

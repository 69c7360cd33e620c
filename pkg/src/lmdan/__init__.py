"""Label-matching domain adversarial training toolkit."""

__version__ = "0.1.0"

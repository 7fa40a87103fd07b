"""Dataset protection with class-conditional adversarial shortcuts."""

__version__ = "0.1.0"

"""regulab: robustness experiments for internal-model based output regulation."""

__version__ = "0.1.0"

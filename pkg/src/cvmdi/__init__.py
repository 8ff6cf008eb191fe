"""Secret-key rates for continuous-variable MDI-QKD under Gaussian attacks."""

__version__ = "0.1.0"

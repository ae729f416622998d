"""Pro-adaptive models: forecast a classifier's parameters ahead of dataset shift."""

__version__ = "0.1.0"

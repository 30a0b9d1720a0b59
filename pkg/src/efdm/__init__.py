"""Elastic functional data analysis and conformal anomaly detection."""

__version__ = "0.1.0"

"""Heteroscedastic Gaussian regression with the beta-NLL loss family."""
__version__ = "0.1.0"

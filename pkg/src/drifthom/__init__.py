"""Periodic homogenization with nonlinear drift on perforated cells."""
__version__ = "0.1.0"

"""Quadratic funnel synthesis, rapid-regularizability certificates, and
data-guided online disturbance identification for nonlinear tracking."""

__version__ = "0.1.0"

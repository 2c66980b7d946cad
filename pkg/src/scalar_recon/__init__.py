"""Scalar reconciliation for Gaussian-modulated two-way CVQKD."""

"""Exact Riemann-invariant simulation of the wave equation with set-valued boundary damping."""

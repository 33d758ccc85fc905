"""Disaggregation of low-rate water meter readings by Bayesian discriminative sparse coding."""

__version__ = "0.1.0"

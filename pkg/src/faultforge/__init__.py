"""Optimization-based short-circuit studies with inverter models."""

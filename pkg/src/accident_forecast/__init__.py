"""Accident-count forecasting toolkit.

Ingests accident-record snapshots, builds (cell, time bucket) count
datasets, computes descriptive tables, and fits and compares tree,
linear and recurrent regressors.
"""
__version__ = "0.1.0"

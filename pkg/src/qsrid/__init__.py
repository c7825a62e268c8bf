"""Identification of strictly QSR-dissipative linear models from data."""

"""Probes of masked-shape leakage and representation quality."""

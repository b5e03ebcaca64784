"""Experiment protocols, metrics, the synthetic-walker generator and the command line."""

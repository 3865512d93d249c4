"""Datasets, metrics, checkpoints, configuration, sweeps and the CLI."""

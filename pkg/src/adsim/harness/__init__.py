"""Experiment harness: configs, drivers, CSV/JSON emission and the ``ads`` CLI."""

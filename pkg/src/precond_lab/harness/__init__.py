"""Experiment harness: data, configuration, commands and verification suites."""

"""Benchmark registry, dataset generation, runs and the command-line interface."""

from .registry import BENCHMARK_IDS, BenchmarkInstance, ConfigError, get_benchmark

__all__ = ["BENCHMARK_IDS", "BenchmarkInstance", "ConfigError", "get_benchmark"]

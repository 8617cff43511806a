"""Shared test helpers: shipped data paths."""

from importlib.resources import files


def data_dir():
    return files("sci_mcp") / "data"


def corpus_path():
    return str(data_dir() / "corpus.jsonl")


def benchmark_path():
    return str(data_dir() / "benchmark.jsonl")


def fixture_path():
    return str(data_dir() / "fixture.json")


def scenario_path(name):
    return str(data_dir() / "scenarios" / f"{name}.json")

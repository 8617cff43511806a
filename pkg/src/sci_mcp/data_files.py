"""Paths to the data files shipped inside the package."""

from importlib.resources import files


def _data(name: str) -> str:
    return str(files("sci_mcp") / "data" / name)


def default_fixture() -> str:
    return _data("fixture.json")


def default_corpus() -> str:
    return _data("corpus.jsonl")


def default_benchmark() -> str:
    return _data("benchmark.jsonl")


def shipped_scenario(name: str) -> str:
    return _data(f"scenarios/{name}.json")


SHIPPED_SCENARIOS = (
    "model_discovery_compute",
    "multi_site_pipeline",
    "compute_pipeline",
    "monitoring",
)

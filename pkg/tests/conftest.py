import numpy as np
import pytest

from dts_forge.bench import BenchConfig, BenchReport, run_suite
from dts_forge.tensor_store import TensorMap

ACCEPTANCE_SEEDS = (1, 2, 3, 4, 5)


def random_tensor_map(rng: np.random.Generator, n_layers: int = 3) -> TensorMap:
    entries = {}
    for i in range(n_layers):
        rank = int(rng.integers(1, 4))
        shape = tuple(int(rng.integers(1, 7)) for _ in range(rank))
        entries[f"layer{i}"] = rng.standard_normal(shape).astype(np.float32)
    return TensorMap(entries, {"origin": "fixture"})


@pytest.fixture(scope="session")
def suite_reports() -> dict[int, BenchReport]:
    """One full benchmark run per acceptance seed, shared across tests."""
    return {
        seed: run_suite(BenchConfig(seed=seed, unseen_holdout=1))
        for seed in ACCEPTANCE_SEEDS
    }

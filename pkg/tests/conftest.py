import numpy as np
import pytest

from camdiffuse.synth import SynthSpec, gen_dataset

_verdicts: list[str] = []


def record(criterion: int, ok: bool, detail: str) -> None:
    _verdicts.append(f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    print(_verdicts[-1])


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_verdicts):
            terminalreporter.write_line(line)


def random_stochastic(rng: np.random.Generator, n: int, density: float = 1.0) -> np.ndarray:
    a = rng.random((n, n))
    if density < 1.0:
        a *= rng.random((n, n)) < density
        empty = a.sum(axis=1) == 0
        a[empty, rng.integers(0, n, empty.sum())] = 1.0
    return a / a.sum(axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    spec = SynthSpec(num_images=4, seed=3)
    gen_dataset(spec, root)
    return root

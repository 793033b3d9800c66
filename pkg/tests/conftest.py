import numpy as np
import pytest

from ptqkit.tensor_store import Archive, TensorRecord

_DTYPES = (np.float32, np.int8, np.int16, np.int32)


def random_archive(seed: int, max_tensors: int = 6) -> Archive:
    """Archive with random names, dtypes, shapes (scalars and empty dims included)."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(int(rng.integers(0, max_tensors + 1))):
        ndim = int(rng.integers(0, 4))
        shape = tuple(int(d) for d in rng.integers(0, 6, size=ndim))
        dt = _DTYPES[int(rng.integers(0, len(_DTYPES)))]
        if dt is np.float32:
            # raw bit patterns, NaN payloads and subnormals included
            data = rng.integers(0, 2**32, size=shape, dtype=np.uint32).view(np.float32)
        else:
            info = np.iinfo(dt)
            data = rng.integers(info.min, info.max, size=shape, endpoint=True, dtype=dt)
        name = f"t{i}.é" + "x" * int(rng.integers(0, 20))
        records.append(TensorRecord(name, data))
    meta = '{"seed": %d, "note": "σ test"}' % seed if seed % 3 else ""
    return Archive(tuple(records), meta)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for the acceptance summary, then assert it."""

    def record(label: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

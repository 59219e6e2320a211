import numpy as np
import pytest

from panoaug.imgcore import LabelMap, RasterImage


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h=24, w=32):
    return RasterImage(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))


def random_labels(rng, h=24, w=32, k=5):
    return LabelMap(rng.integers(0, k, (h, w), dtype=np.uint8))


# criterion number -> list of (part, ok, detail); printed once at the end of the run
ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    def record(criterion: int, part: str, ok: bool, detail: str = ""):
        ACCEPTANCE.setdefault(criterion, []).append((part, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[crit]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{p}: {'ok' if ok else 'FAILED'} ({d})" if d else f"{p}: {'ok' if ok else 'FAILED'}" for p, ok, d in parts)
        tr.write_line(f"criterion {crit}: {verdict}  {detail}")

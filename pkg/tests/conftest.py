import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from corpus_helper import synthetic_corpus  # noqa: E402

from droprate.data import build  # noqa: E402


def _find_real_corpus() -> Path | None:
    env = os.environ.get("DROPRATE_CORPUS")
    if env and Path(env).is_file():
        return Path(env)
    local = Path(__file__).resolve().parent.parent / "data" / "tinyshakespeare.txt"
    if local.is_file():
        return local
    return None


@pytest.fixture(scope="session")
def shakespeare_text() -> str:
    """The real tiny-Shakespeare file when available, else the deterministic
    65-character stand-in of the same size."""
    real = _find_real_corpus()
    if real is not None:
        return real.read_text(encoding="utf-8")
    return synthetic_corpus()


@pytest.fixture(scope="session")
def real_corpus_path() -> Path | None:
    return _find_real_corpus()


@pytest.fixture(scope="session")
def tiny_text() -> str:
    """Small, highly learnable corpus for fast trainer tests."""
    return synthetic_corpus(n_chars=60_000, seed=99)


@pytest.fixture(scope="session")
def tiny_ds(tiny_text):
    return build(tiny_text, val_fraction=0.1)

import numpy as np
import pytest

from pretrainkit.modules import Initializer
from pretrainkit.vocab import Vocabulary


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_vocab():
    return Vocabulary([f"w{i}" for i in range(20)])


@pytest.fixture
def init():
    return Initializer(seed=99)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


@pytest.fixture
def plain_corpus(tmp_path):
    """20 short sentences over the tiny vocab's words."""
    rng = np.random.default_rng(7)
    lines = []
    for _ in range(20):
        n = int(rng.integers(3, 8))
        lines.append(" ".join(f"w{int(rng.integers(0, 20))}" for _ in range(n)))
    return write_lines(tmp_path / "plain.txt", lines)


@pytest.fixture
def doc_corpus(tmp_path):
    """4 documents of 5 sentences each, blank-line separated."""
    rng = np.random.default_rng(8)
    chunks = []
    for d in range(4):
        sents = []
        for _ in range(5):
            n = int(rng.integers(3, 7))
            sents.append(" ".join(f"w{int(rng.integers(0, 20))}" for _ in range(n)))
        chunks.append("\n".join(sents))
    path = tmp_path / "docs.txt"
    path.write_text("\n\n".join(chunks) + "\n", encoding="utf-8")
    return str(path)

import numpy as np
import pytest

from nais.data import Dataset
from nais.model import FismParams, NaisParams


def random_nais(rng, num_items=12, k=3, a=4, beta=0.5, variant="prod", scale=1.0):
    d = 2 * k if variant == "concat" else k
    return NaisParams(
        rng.normal(scale=scale, size=(num_items, k)),
        rng.normal(scale=scale, size=(num_items, k)),
        rng.normal(scale=scale, size=(a, d)),
        rng.normal(scale=scale, size=a),
        rng.normal(scale=scale, size=a),
        beta,
        variant,
    )


def random_fism(rng, num_items=12, k=3, alpha=0.0, scale=1.0):
    return FismParams(
        rng.normal(scale=scale, size=(num_items, k)),
        rng.normal(scale=scale, size=(num_items, k)),
        alpha,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_dataset():
    """Three users over eight items with hand-picked histories."""
    histories = [np.array(h, dtype=np.int64) for h in ([0, 1, 2], [2, 3, 4, 5], [5, 6])]
    return Dataset(num_users=3, num_items=8, histories=histories)


def write_ncf(tmp_path, train_rows, test_rows, neg_rows, name="toy"):
    prefix = tmp_path / name
    (tmp_path / f"{name}.train.rating").write_text(
        "".join("\t".join(map(str, r)) + "\n" for r in train_rows)
    )
    (tmp_path / f"{name}.test.rating").write_text(
        "".join("\t".join(map(str, r)) + "\n" for r in test_rows)
    )
    (tmp_path / f"{name}.test.negative").write_text(
        "".join(f"({u},{i})\t" + "\t".join(map(str, negs)) + "\n" for (u, i), negs in neg_rows)
    )
    return str(prefix)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

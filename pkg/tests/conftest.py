import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from snowflake_gnn.graph import Graph  # noqa: E402

CORA_ENV = "SNOWFLAKE_GNN_CORA"
ARXIV_ENV = "SNOWFLAKE_GNN_ARXIV"

# (criterion number, PASS/FAIL/SKIP, detail), filled in by test_acceptance
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, status, text in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{status:<4}  {num}. {text}")


def make_graph(n, edges, *, features=None, labels=None, classes=3, seed=0, split=True):
    """Undirected test graph with random features/labels and a fixed split."""
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, 4)) if features is None else np.asarray(features, float)
    labels = rng.integers(0, classes, n) if labels is None else np.asarray(labels)
    kw = {}
    if split and n >= 3:
        perm = rng.permutation(n)
        a, b = max(1, n // 2), max(2, (3 * n) // 4)
        kw = dict(train=np.sort(perm[:a]), val=np.sort(perm[a:b]), test=np.sort(perm[b:]))
    return Graph.from_edges(n, edges, features, labels, symmetrize=True, **kw)


def random_edges(rng, n, p):
    iu, ju = np.triu_indices(n, k=1)
    hit = rng.random(len(iu)) < p
    return np.stack([iu[hit], ju[hit]], axis=1)


def path_edges(n):
    return [(i, i + 1) for i in range(n - 1)]


@pytest.fixture
def cora_dir():
    path = os.environ.get(CORA_ENV)
    if not path or not Path(path).is_dir():
        pytest.skip(f"Cora not supplied (set {CORA_ENV} to a converted dataset directory)")
    return Path(path)

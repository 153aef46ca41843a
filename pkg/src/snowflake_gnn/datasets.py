"""Plain-text dataset directories, random splits and synthetic SBM graphs.

A dataset directory holds::

    edges.tsv     "src<TAB>dst" per line, 0-based, '#' starts a comment
    features.csv  one comma-separated row of decimals per node
    labels.csv    one integer class per line
    splits.json   optional {"train": [...], "val": [...], "test": [...]}
    meta.json     optional {"directed": bool, "num_classes": int, "name": str}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import Graph, GraphError, dedup_edges


class DatasetError(ValueError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}" + (f":{line}" if line is not None else "") + ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass
class DatasetBundle:
    graph: Graph
    name: str
    num_classes: int
    directed: bool = False
    warnings: dict = field(default_factory=dict)

    @property
    def num_features(self):
        return self.graph.num_features

    def meta(self):
        return {"directed": self.directed, "name": self.name, "num_classes": self.num_classes}


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line


def _read_features(path):
    rows = []
    width = None
    for lineno, line in _data_lines(path):
        cells = line.split(",")
        try:
            row = np.array([float(c) for c in cells])
        except ValueError:
            bad = next(c for c in cells if not _is_float(c))
            raise DatasetError(f"non-numeric cell {bad.strip()!r}", path, lineno) from None
        if not np.all(np.isfinite(row)):
            raise DatasetError("non-finite feature value", path, lineno)
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DatasetError(f"expected {width} columns, found {len(row)}", path, lineno)
        rows.append(row)
    if not rows:
        raise DatasetError("no feature rows", path)
    return np.vstack(rows)


def _is_float(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def _read_labels(path):
    labels, lines = [], []
    for lineno, line in _data_lines(path):
        try:
            labels.append(int(line))
        except ValueError:
            raise DatasetError(f"non-numeric label {line!r}", path, lineno) from None
        lines.append(lineno)
    return np.array(labels, dtype=np.int64), lines


def _read_edges(path, num_nodes):
    edges = []
    for lineno, line in _data_lines(path):
        parts = line.split()
        if len(parts) != 2:
            raise DatasetError(f"expected 'src<TAB>dst', got {line!r}", path, lineno)
        try:
            src, dst = int(parts[0]), int(parts[1])
        except ValueError:
            raise DatasetError(f"non-numeric node index in {line!r}", path, lineno) from None
        for v in (src, dst):
            if not 0 <= v < num_nodes:
                raise DatasetError(f"edge endpoint {v} outside [0, {num_nodes})", path, lineno)
        edges.append((src, dst))
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def _require(directory, name):
    path = directory / name
    if not path.is_file():
        raise DatasetError(f"missing required file {name}", path)
    return path


def load_dataset(dir_path) -> DatasetBundle:
    """Parse and validate a dataset directory.

    Undirected datasets are symmetrized; repeated edges (in either direction
    for undirected data) are dropped and counted in ``warnings``.
    """
    directory = Path(dir_path)
    if not directory.is_dir():
        raise DatasetError("dataset directory not found", directory)
    edges_path = _require(directory, "edges.tsv")
    features_path = _require(directory, "features.csv")
    labels_path = _require(directory, "labels.csv")

    meta = {}
    meta_path = directory / "meta.json"
    if meta_path.is_file():
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError as err:
            raise DatasetError(f"invalid JSON: {err.msg}", meta_path, err.lineno) from None
    directed = bool(meta.get("directed", False))

    features = _read_features(features_path)
    n = features.shape[0]
    labels, label_lines = _read_labels(labels_path)
    if len(labels) != n:
        raise DatasetError(f"{len(labels)} labels for {n} feature rows", labels_path)
    num_classes = int(meta.get("num_classes", labels.max() + 1 if len(labels) else 0))
    bad = np.flatnonzero((labels < 0) | (labels >= num_classes))
    if len(bad):
        i = int(bad[0])
        raise DatasetError(f"label {labels[i]} outside [0, {num_classes})", labels_path,
                           label_lines[i])

    edges = _read_edges(edges_path, n)
    if not directed:
        edges = np.sort(edges, axis=1)
    edges, dups = dedup_edges(edges)

    splits = {}
    splits_path = directory / "splits.json"
    if splits_path.is_file():
        try:
            raw = json.loads(splits_path.read_text())
        except json.JSONDecodeError as err:
            raise DatasetError(f"invalid JSON: {err.msg}", splits_path, err.lineno) from None
        for key in ("train", "val", "test"):
            if key not in raw:
                raise DatasetError(f"missing split {key!r}", splits_path)
            splits[key] = np.asarray(raw[key], dtype=np.int64)
    try:
        graph = Graph.from_edges(n, edges, features, labels, symmetrize=not directed, **splits)
    except GraphError as err:
        raise DatasetError(str(err), directory) from None
    name = meta.get("name", directory.name)
    return DatasetBundle(graph, name, num_classes, directed, {"duplicate_edges": dups})


def _fmt(x):
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 2**53 else repr(x)


def write_dataset(bundle: DatasetBundle, dir_path):
    """Write ``bundle`` in canonical form (sorted edges, shortest decimals)."""
    directory = Path(dir_path)
    directory.mkdir(parents=True, exist_ok=True)
    g = bundle.graph
    edges = g.edges
    if not bundle.directed:
        edges = edges[edges[:, 0] <= edges[:, 1]]
    with open(directory / "edges.tsv", "w", encoding="utf-8") as fh:
        fh.writelines(f"{s}\t{d}\n" for s, d in edges)
    with open(directory / "features.csv", "w", encoding="utf-8") as fh:
        fh.writelines(",".join(_fmt(v) for v in row) + "\n" for row in g.features)
    with open(directory / "labels.csv", "w", encoding="utf-8") as fh:
        fh.writelines(f"{int(y)}\n" for y in g.labels)
    if len(g.train) or len(g.val) or len(g.test):
        splits = {k: [int(i) for i in g.split(k)] for k in ("train", "val", "test")}
        (directory / "splits.json").write_text(json.dumps(splits, sort_keys=True) + "\n")
    (directory / "meta.json").write_text(json.dumps(bundle.meta(), sort_keys=True) + "\n")
    return directory


@dataclass(frozen=True)
class SplitSpec:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def make_split(graph, ratios=(0.6, 0.2, 0.2), seed=0) -> SplitSpec:
    """Uniform random train/val/test partition of all nodes.

    Val and test sizes are floored; the remainder goes to train.
    """
    n = graph if isinstance(graph, int) else graph.num_nodes
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError("ratios must be three non-negative numbers summing to 1")
    if n < 3:
        raise ValueError("need at least 3 nodes to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(np.floor(ratios[1] * n + 1e-9))
    n_test = int(np.floor(ratios[2] * n + 1e-9))
    n_train = n - n_val - n_test
    return SplitSpec(np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
                     np.sort(perm[n_train + n_val:]))


def with_random_split(bundle, ratios=(0.6, 0.2, 0.2), seed=0):
    s = make_split(bundle.graph, ratios, seed)
    return DatasetBundle(bundle.graph.with_split(s.train, s.val, s.test), bundle.name,
                         bundle.num_classes, bundle.directed, dict(bundle.warnings))


def synth_sbm(blocks, p_in, p_out, feature_mode="onehot_noise", seed=0, *, noise=0.5,
              split_seed=None) -> DatasetBundle:
    """Undirected stochastic block model with block ids as labels.

    ``feature_mode`` is ``"onehot_noise"`` (one-hot block plus Gaussian
    noise of scale ``noise``) or ``"noise"`` (standard Gaussian only).
    """
    for p in (p_in, p_out):
        if not 0.0 <= p <= 1.0:
            raise ValueError("probabilities must be in [0, 1]")
    blocks = [int(b) for b in blocks]
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(blocks)), blocks)
    n = len(labels)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    hit = rng.random(len(iu)) < prob
    edges = np.stack([iu[hit], ju[hit]], axis=1)
    k = len(blocks)
    if feature_mode == "onehot_noise":
        features = np.eye(k)[labels] + noise * rng.standard_normal((n, k))
    elif feature_mode == "noise":
        features = rng.standard_normal((n, k))
    else:
        raise ValueError(f"unknown feature_mode {feature_mode!r}")
    graph = Graph.from_edges(n, edges, features, labels, symmetrize=True)
    if n >= 3:
        s = make_split(n, seed=seed if split_seed is None else split_seed)
        graph = graph.with_split(s.train, s.val, s.test)
    return DatasetBundle(graph, f"sbm-{k}x{n}", k, False, {"duplicate_edges": 0})


def sbm_expected_edges(blocks, p_in, p_out):
    """Expected undirected edge count of :func:`synth_sbm`, and its std."""
    blocks = np.asarray(blocks, dtype=np.int64)
    within = int(np.sum(blocks * (blocks - 1) // 2))
    total = int(blocks.sum() * (blocks.sum() - 1) // 2)
    between = total - within
    mean = within * p_in + between * p_out
    var = within * p_in * (1 - p_in) + between * p_out * (1 - p_out)
    return mean, float(np.sqrt(var))


def convert_linqs(content_path, cites_path, out_dir, name="cora"):
    """Convert a LINQS citation release (``*.content`` + ``*.cites``) to a dataset directory.

    Papers are numbered in ``content`` order and classes in sorted label
    order. Citations naming unknown papers and self-citations are dropped;
    the rest become undirected edges.
    """
    ids, rows, raw_labels = {}, [], []
    for lineno, line in _data_lines(content_path):
        parts = line.split()
        if len(parts) < 3:
            raise DatasetError("expected 'id features... label'", content_path, lineno)
        if parts[0] in ids:
            raise DatasetError(f"paper {parts[0]!r} listed twice", content_path, lineno)
        ids[parts[0]] = len(ids)
        try:
            rows.append([float(v) for v in parts[1:-1]])
        except ValueError:
            raise DatasetError("non-numeric feature", content_path, lineno) from None
        raw_labels.append(parts[-1])
    classes = sorted(set(raw_labels))
    labels = np.array([classes.index(c) for c in raw_labels], dtype=np.int64)
    edges, dropped = [], 0
    for lineno, line in _data_lines(cites_path):
        parts = line.split()
        if len(parts) != 2:
            raise DatasetError("expected 'cited citing'", cites_path, lineno)
        a, b = ids.get(parts[0]), ids.get(parts[1])
        if a is None or b is None or a == b:
            dropped += 1
            continue
        edges.append((min(a, b), max(a, b)))
    edges, dups = dedup_edges(np.array(edges, dtype=np.int64).reshape(-1, 2))
    graph = Graph.from_edges(len(ids), edges, np.array(rows), labels, symmetrize=True)
    bundle = DatasetBundle(graph, name, len(classes), False,
                           {"duplicate_edges": dups, "dropped_citations": dropped})
    write_dataset(bundle, out_dir)
    return bundle

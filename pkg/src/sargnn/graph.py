"""Graphs, datasets, TU-format ingestion, synthetic triangle data and fold splits."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tensor import ContractError, Tensor

DEFAULT_MAX_DEGREE = 10


class GenerationError(RuntimeError):
    """Rejection sampling could not produce the requested graphs."""


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with node features and a class label.

    ``edges`` is an (E, 2) int array of canonical pairs ``u < v``, sorted.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    label: int
    saliency_truth: np.ndarray | None = None

    def __post_init__(self):
        n = self.num_nodes
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            if edges.min() < 0 or edges.max() >= n:
                raise DatasetFormatError(f"edge endpoint outside [0, {n})")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise DatasetFormatError("self-loops are not allowed")
            edges = np.unique(np.sort(edges, axis=1), axis=0)
        object.__setattr__(self, "edges", edges)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise DatasetFormatError(f"features must be {n} x d, got {feats.shape}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "label", int(self.label))
        if self.saliency_truth is not None:
            s = np.asarray(self.saliency_truth, dtype=np.float64)
            if s.shape != (n,) or np.any(s < 0) or abs(s.sum() - 1.0) > 1e-9:
                raise DatasetFormatError("saliency_truth must be a length-N distribution")
            object.__setattr__(self, "saliency_truth", s)

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes), dtype=bool)
        if len(self.edges):
            a[self.edges[:, 0], self.edges[:, 1]] = True
            a[self.edges[:, 1], self.edges[:, 0]] = True
        return a

    @cached_property
    def closed_mask(self) -> np.ndarray:
        """Adjacency plus the diagonal: support of every closed neighborhood."""
        return self.adjacency | np.eye(self.num_nodes, dtype=bool)

    @cached_property
    def neighbors(self) -> list[np.ndarray]:
        return [np.flatnonzero(row) for row in self.adjacency]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def replace(self, **changes) -> Graph:
        fields = dict(num_nodes=self.num_nodes, edges=self.edges, features=self.features,
                      label=self.label, saliency_truth=self.saliency_truth)
        fields.update(changes)
        return Graph(**fields)

    def permute(self, perm: Sequence[int]) -> Graph:
        """Relabel nodes so that new node ``i`` is old node ``perm[i]``."""
        perm = np.asarray(perm)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        return Graph(
            num_nodes=self.num_nodes,
            edges=inverse[self.edges] if len(self.edges) else self.edges,
            features=self.features[perm],
            label=self.label,
            saliency_truth=None if self.saliency_truth is None else self.saliency_truth[perm],
        )

    def to_dict(self) -> dict:
        out = {
            "n": self.num_nodes,
            "edges": self.edges.tolist(),
            "features": self.features.tolist(),
            "label": self.label,
        }
        if self.saliency_truth is not None:
            out["saliency_truth"] = self.saliency_truth.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> Graph:
        n = int(d["n"])
        feats = np.asarray(d["features"], dtype=np.float64).reshape(n, -1)
        return cls(n, np.asarray(d["edges"], dtype=np.int64).reshape(-1, 2), feats,
                   d["label"], d.get("saliency_truth"))


@dataclass
class Dataset:
    graphs: list[Graph]
    num_classes: int
    feature_dim: int
    name: str = "dataset"

    def __post_init__(self):
        for g in self.graphs:
            if g.feature_dim != self.feature_dim:
                raise DatasetFormatError("graphs disagree on feature_dim")
            if not 0 <= g.label < self.num_classes:
                raise DatasetFormatError(f"label {g.label} outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    def subset(self, indices: Iterable[int]) -> list[Graph]:
        return [self.graphs[i] for i in indices]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "num_classes": self.num_classes,
            "feature_dim": self.feature_dim,
            "graphs": [g.to_dict() for g in self.graphs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> Dataset:
        return cls([Graph.from_dict(g) for g in d["graphs"]], int(d["num_classes"]),
                   int(d["feature_dim"]), d.get("name", "dataset"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")))

    @classmethod
    def load(cls, path: str | Path) -> Dataset:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class FoldSplit:
    folds: list[list[int]]
    seed: int

    def train_test(self, k: int) -> tuple[list[int], list[int]]:
        test = self.folds[k]
        train = sorted(i for j, fold in enumerate(self.folds) if j != k for i in fold)
        return train, list(test)


# ----------------------------------------------------------------- triangles


def _triangle_triples(adj: np.ndarray) -> np.ndarray:
    """All node triples (i < j < k) that are pairwise adjacent, by enumeration."""
    n = adj.shape[0]
    if n < 3:
        return np.zeros((0, 3), dtype=np.int64)
    i, j, k = _combinations3(n).T
    hit = adj[i, j] & adj[j, k] & adj[i, k]
    return np.stack([i[hit], j[hit], k[hit]], axis=1)


_COMB_CACHE: dict[int, np.ndarray] = {}


def _combinations3(n: int) -> np.ndarray:
    if n not in _COMB_CACHE:
        idx = np.arange(n)
        i, j, k = np.meshgrid(idx, idx, idx, indexing="ij")
        keep = (i < j) & (j < k)
        _COMB_CACHE[n] = np.stack([i[keep], j[keep], k[keep]], axis=1)
    return _COMB_CACHE[n]


def count_triangles(g: Graph) -> int:
    """Number of triangles, by checking every node triple."""
    return len(_triangle_triples(g.adjacency))


def triangles_by_trace(g: Graph) -> int:
    """trace(A^3) / 6 via integer matrix powers."""
    a = g.adjacency.astype(np.int64)
    return int(np.trace(a @ a @ a)) // 6


def triangle_saliency(g: Graph) -> np.ndarray:
    """Uniform mass over nodes lying on at least one triangle (zeros if none)."""
    members = np.unique(_triangle_triples(g.adjacency))
    s = np.zeros(g.num_nodes)
    if len(members):
        s[members] = 1.0 / len(members)
    return s


# ------------------------------------------------------------------ features


def degree_onehot(adjacency: np.ndarray, max_degree: int = DEFAULT_MAX_DEGREE) -> np.ndarray:
    deg = np.minimum(adjacency.sum(axis=1), max_degree)
    out = np.zeros((adjacency.shape[0], max_degree + 1))
    out[np.arange(len(deg)), deg] = 1.0
    return out


def init_features(g: Graph, mode: str = "degree_onehot", max_degree: int = DEFAULT_MAX_DEGREE) -> Graph:
    if mode == "degree_onehot":
        feats = degree_onehot(g.adjacency, max_degree)
    elif mode == "constant":
        feats = np.ones((g.num_nodes, 1))
    else:
        raise ValueError(f"unknown feature mode {mode!r}")
    return g.replace(features=feats)


def renormalized_adjacency(g: Graph) -> Tensor:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    a = g.closed_mask.astype(np.float64)
    inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    return Tensor(inv_sqrt[:, None] * a * inv_sqrt[None, :])


# ---------------------------------------------------------------- generation


def _er_edges(rng: np.random.Generator, n: int, p: float) -> np.ndarray:
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    return np.stack([iu[keep], ju[keep]], axis=1)


def default_edge_prob(n: int, mean_triangles: float) -> float:
    """Edge probability whose expected triangle count on ``n`` nodes is ``mean_triangles``."""
    return min(0.95, (mean_triangles / math.comb(n, 3)) ** (1.0 / 3.0))


def generate_triangles(
    count: int,
    nodes_min: int = 6,
    nodes_max: int = 20,
    num_labels: int = 3,
    edge_prob: float | None = None,
    seed: int = 0,
    max_degree: int = DEFAULT_MAX_DEGREE,
    max_attempts: int = 20000,
) -> Dataset:
    """Erdős–Rényi graphs whose triangle count lies in ``1..num_labels``.

    Class ``c`` holds graphs with exactly ``c + 1`` triangles; classes are
    filled round-robin so their sizes differ by at most one.  With
    ``edge_prob=None`` the edge probability depends on the node count only
    (never on the target class), chosen so the expected triangle count sits
    mid-range.
    """
    if num_labels < 2:
        raise ContractError("need at least two triangle-count labels")
    if nodes_min < 3 or nodes_max < nodes_min:
        raise ContractError("node range must satisfy 3 <= nodes_min <= nodes_max")
    rng = np.random.default_rng(seed)
    targets = np.arange(count) % num_labels
    rng.shuffle(targets)
    mid = (1 + num_labels) / 2.0
    graphs = []
    for target in targets:
        for _ in range(max_attempts):
            n = int(rng.integers(nodes_min, nodes_max + 1))
            p = default_edge_prob(n, mid) if edge_prob is None else edge_prob
            edges = _er_edges(rng, n, p)
            adj = np.zeros((n, n), dtype=bool)
            adj[edges[:, 0], edges[:, 1]] = adj[edges[:, 1], edges[:, 0]] = True
            if len(_triangle_triples(adj)) == target + 1:
                break
        else:
            raise GenerationError(
                f"no graph with {target + 1} triangles after {max_attempts} draws; "
                "edge probability is incompatible with the label range")
        g = Graph(n, edges, degree_onehot(adj, max_degree), int(target))
        graphs.append(g.replace(saliency_truth=triangle_saliency(g)))
    return Dataset(graphs, num_labels, max_degree + 1, name=f"triangles-{seed}")


# ------------------------------------------------------------------- folding


def k_fold_split(dataset: Dataset | Sequence[Graph], k: int, seed: int = 0) -> FoldSplit:
    """Stratified folds: each class is shuffled and dealt round-robin.

    The dealing position carries over between classes so fold sizes differ
    by at most one overall.
    """
    graphs = dataset.graphs if isinstance(dataset, Dataset) else list(dataset)
    if k < 2:
        raise ContractError("k must be at least 2")
    if k > len(graphs):
        raise ContractError(f"k={k} exceeds dataset size {len(graphs)}")
    rng = np.random.default_rng(seed)
    labels = np.array([g.label for g in graphs])
    folds: list[list[int]] = [[] for _ in range(k)]
    pos = 0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        rng.shuffle(members)
        for idx in members:
            folds[pos % k].append(int(idx))
            pos += 1
    return FoldSplit([sorted(f) for f in folds], seed)


# ---------------------------------------------------------------- TU format


def _read_ints(path: Path) -> list[list[int]]:
    rows = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line:
            rows.append([int(tok) for tok in line.replace(",", " ").split()])
    return rows


def load_tu_dataset(directory: str | Path, name: str, max_degree: int = DEFAULT_MAX_DEGREE) -> Dataset:
    """Read a TU-format dataset (1-indexed node ids, edges in ``<name>_A.txt``)."""
    root = Path(directory)
    required = {kind: root / f"{name}_{kind}.txt" for kind in ("A", "graph_indicator", "graph_labels")}
    for path in required.values():
        if not path.is_file():
            raise FileNotFoundError(path)
    indicator = np.array([r[0] for r in _read_ints(required["graph_indicator"])], dtype=np.int64)
    raw_labels = [r[0] for r in _read_ints(required["graph_labels"])]
    num_nodes_total = len(indicator)
    num_graphs = len(raw_labels)
    if num_nodes_total == 0 or indicator.min() < 1 or indicator.max() > num_graphs:
        raise DatasetFormatError("graph indicator refers to undeclared graphs")

    edge_rows = _read_ints(required["A"])
    edges = np.array(edge_rows, dtype=np.int64).reshape(-1, 2) - 1
    if edges.size and (edges.min() < 0 or edges.max() >= num_nodes_total):
        raise DatasetFormatError("edge references a node id out of range")

    node_label_path = root / f"{name}_node_labels.txt"
    node_onehot = None
    if node_label_path.is_file():
        node_labels = np.array([r[0] for r in _read_ints(node_label_path)])
        if len(node_labels) != num_nodes_total:
            raise DatasetFormatError("node label count differs from node count")
        values, codes = np.unique(node_labels, return_inverse=True)
        node_onehot = np.eye(len(values))[codes]

    classes, label_codes = np.unique(raw_labels, return_inverse=True)
    graph_of = indicator - 1
    offsets = np.zeros(num_graphs + 1, dtype=np.int64)
    np.add.at(offsets, graph_of + 1, 1)
    offsets = np.cumsum(offsets)

    graphs = []
    for gid in range(num_graphs):
        lo, hi = offsets[gid], offsets[gid + 1]
        if np.any(graph_of[lo:hi] != gid):
            raise DatasetFormatError("graph indicator is not grouped by graph")
        mine = edges[(edges[:, 0] >= lo) & (edges[:, 0] < hi)] if edges.size else edges
        if mine.size and (mine[:, 1].min() < lo or mine[:, 1].max() >= hi):
            raise DatasetFormatError("edge crosses graph boundary")
        local = mine - lo
        local = local[local[:, 0] != local[:, 1]] if local.size else local
        n = int(hi - lo)
        feats = node_onehot[lo:hi] if node_onehot is not None else np.zeros((n, 1))
        g = Graph(n, local, feats, int(label_codes[gid]))
        if node_onehot is None:
            g = init_features(g, "degree_onehot", max_degree)
        graphs.append(g)
    feature_dim = graphs[0].feature_dim if graphs else 0
    return Dataset(graphs, len(classes), feature_dim, name=name)


def write_tu_dataset(dataset: Dataset, directory: str | Path, name: str | None = None,
                     node_labels: bool = True) -> None:
    """Write ``dataset`` in TU format; node labels are the argmax of each feature row."""
    name = name or dataset.name
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    a_lines, ind_lines, nl_lines = [], [], []
    offset = 0
    for gid, g in enumerate(dataset.graphs, start=1):
        for u, v in g.edges:
            a_lines.append(f"{u + offset + 1}, {v + offset + 1}")
            a_lines.append(f"{v + offset + 1}, {u + offset + 1}")
        ind_lines.extend([str(gid)] * g.num_nodes)
        nl_lines.extend(str(int(x)) for x in g.features.argmax(axis=1))
        offset += g.num_nodes
    (root / f"{name}_A.txt").write_text("\n".join(a_lines) + ("\n" if a_lines else ""))
    (root / f"{name}_graph_indicator.txt").write_text("\n".join(ind_lines) + "\n")
    (root / f"{name}_graph_labels.txt").write_text(
        "\n".join(str(g.label) for g in dataset.graphs) + "\n")
    if node_labels:
        (root / f"{name}_node_labels.txt").write_text("\n".join(nl_lines) + "\n")


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    return a.to_dict() == b.to_dict()

"""Graph container, loaders, degree statistics, and node partitions.

Graphs are undirected, simple (no self-loops, no parallel edges), and stored
in CSR form with dense fp64 node features and one integer class label per
node. All node ids are dense 0..N-1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Graph",
    "GroupAssignment",
    "NodeSplit",
    "GraphFormatError",
    "GraphDataError",
    "build_graph",
    "load_graph",
    "save_graph_files",
    "generalized_degree",
    "local_context",
    "local_contexts",
    "mean_degree",
    "partition_contrast",
    "partition_top_bottom",
    "partition_boundaries",
    "split_nodes",
    "synth_generate",
]


class GraphFormatError(ValueError):
    """A data file could not be parsed (malformed line, non-integer id)."""


class GraphDataError(ValueError):
    """Parsed data is inconsistent (id out of range, label out of range)."""


@dataclass(frozen=True)
class Graph:
    """Immutable CSR graph with node features and class labels.

    ``csr_offsets`` has length ``num_nodes + 1``; the neighbors of node v are
    ``csr_neighbors[csr_offsets[v]:csr_offsets[v+1]]``, sorted ascending.
    Every undirected edge appears in both endpoint rows.
    """

    num_nodes: int
    csr_offsets: np.ndarray
    csr_neighbors: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    @property
    def num_edges(self) -> int:
        return self.csr_neighbors.shape[0] // 2

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def degrees(self) -> np.ndarray:
        """One-hop degree of every node (int64)."""
        return np.diff(self.csr_offsets)

    def neighbors(self, v: int) -> np.ndarray:
        return self.csr_neighbors[self.csr_offsets[v] : self.csr_offsets[v + 1]]


@dataclass(frozen=True)
class GroupAssignment:
    """Pairwise-disjoint node groups plus the parameters that produced them.

    ``kind`` is one of ``threshold-contrast`` (low/high split at a degree
    threshold, covers the universe), ``top-bottom-fraction`` (bottom-p% and
    top-p% of the universe by degree), or ``boundary-list`` (general
    half-open degree ranges).
    """

    kind: str
    groups: list[np.ndarray]
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class NodeSplit:
    """Disjoint train/val/test node index sets covering all nodes."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def build_graph(
    edges: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: int | None = None,
) -> Graph:
    """Build a validated Graph from an edge list (m x 2 int array).

    Input edges are symmetrized, self-loops dropped, and duplicates
    collapsed. ``num_nodes`` is taken from the feature matrix; every edge
    endpoint and label is checked against it.
    """
    features = np.ascontiguousarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise GraphDataError("feature matrix must be 2-D (num_nodes x feature_dim)")
    num_nodes = features.shape[0]

    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (num_nodes,):
        raise GraphDataError(
            f"expected {num_nodes} labels (one per feature row), got {labels.shape[0]}"
        )
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise GraphDataError(
            f"labels must lie in 0..{num_classes - 1}, found range "
            f"[{labels.min()}, {labels.max()}]"
        )

    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size:
        lo, hi = int(edges.min()), int(edges.max())
        if lo < 0 or hi >= num_nodes:
            raise GraphDataError(
                f"edge endpoint {hi if hi >= num_nodes else lo} out of range for "
                f"{num_nodes} nodes"
            )
    # Symmetrize, drop self-loops, collapse duplicates.
    both = np.concatenate([edges, edges[:, ::-1]], axis=0)
    both = both[both[:, 0] != both[:, 1]]
    both = np.unique(both, axis=0) if both.size else both.reshape(0, 2)

    counts = np.bincount(both[:, 0], minlength=num_nodes)
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    neighbors = np.ascontiguousarray(both[:, 1])  # unique() sorted by (src, dst)

    return Graph(
        num_nodes=num_nodes,
        csr_offsets=_freeze(offsets),
        csr_neighbors=_freeze(neighbors),
        features=_freeze(features),
        labels=_freeze(labels),
        num_classes=num_classes,
    )


def _parse_int(token: str, path: str, lineno: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise GraphFormatError(
            f"{path}:{lineno}: expected a base-10 integer, got {token!r}"
        ) from None


def load_graph(edge_path: str, feature_path: str, label_path: str) -> Graph:
    """Load a graph from an edge file, a feature CSV, and a label file.

    Edge file: one edge per line, two node ids separated by a single tab;
    lines starting with ``#`` are ignored. Feature file: CSV, row i holds the
    fp64 features of node i. Label file: one integer per line, row i is the
    class of node i.
    """
    edges = []
    with open(edge_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise GraphFormatError(
                    f"{edge_path}:{lineno}: expected two tab-separated ids, "
                    f"got {line!r}"
                )
            u = _parse_int(parts[0], edge_path, lineno)
            v = _parse_int(parts[1], edge_path, lineno)
            edges.append((u, v))

    try:
        features = np.loadtxt(feature_path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise GraphFormatError(f"{feature_path}: {exc}") from None

    labels = []
    with open(label_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            labels.append(_parse_int(line, label_path, lineno))

    edge_arr = (
        np.array(edges, dtype=np.int64) if edges else np.empty((0, 2), dtype=np.int64)
    )
    return build_graph(edge_arr, features, np.array(labels, dtype=np.int64))


def save_graph_files(
    g: Graph, edge_path: str, feature_path: str, label_path: str
) -> None:
    """Write a graph back out in the three-file on-disk format."""
    with open(edge_path, "w", encoding="utf-8") as fh:
        for v in range(g.num_nodes):
            for u in g.neighbors(v):
                if v < u:  # each undirected edge once
                    fh.write(f"{v}\t{u}\n")
    with open(feature_path, "w", encoding="utf-8") as fh:
        for row in g.features:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
    with open(label_path, "w", encoding="utf-8") as fh:
        for y in g.labels:
            fh.write(f"{y}\n")


def adjacency_matvec(
    offsets: np.ndarray, neighbors: np.ndarray, x: np.ndarray
) -> np.ndarray:
    """One sparse CSR product A @ x for the (unweighted) adjacency.

    Uses a cumulative-sum reduction so the per-row accumulation order is
    fixed and the result is bit-deterministic.
    """
    if neighbors.size == 0:
        return np.zeros(offsets.shape[0] - 1, dtype=np.float64)
    csum = np.concatenate(([0.0], np.cumsum(x[neighbors], dtype=np.float64)))
    return csum[offsets[1:]] - csum[offsets[:-1]]


def generalized_degree(g: Graph, r: int = 1) -> np.ndarray:
    """Number of length-r walks starting at each node, as fp64.

    Computed as r successive sparse mat-vec products of the adjacency
    against the all-ones vector. Exact while counts stay below 2**53;
    beyond that fp64 rounds (far outside desk scale).
    """
    if r < 1:
        raise ValueError(f"hop count r must be >= 1, got {r}")
    x = np.ones(g.num_nodes, dtype=np.float64)
    for _ in range(r):
        x = adjacency_matvec(g.csr_offsets, g.csr_neighbors, x)
    return x


def local_context(g: Graph, v: int, r: int) -> np.ndarray:
    """All nodes within shortest-path distance r of v, including v itself."""
    if not 0 <= v < g.num_nodes:
        raise ValueError(f"node {v} out of range for {g.num_nodes} nodes")
    if r < 0:
        raise ValueError(f"radius must be >= 0, got {r}")
    seen = {v}
    frontier = [v]
    for _ in range(r):
        nxt = []
        for u in frontier:
            for w in g.neighbors(u):
                w = int(w)
                if w not in seen:
                    seen.add(w)
                    nxt.append(w)
        if not nxt:
            break
        frontier = nxt
    return np.array(sorted(seen), dtype=np.int64)


def local_contexts(g: Graph, r: int) -> tuple[np.ndarray, np.ndarray]:
    """r-hop local context of every node, as CSR (offsets, members).

    Members of node v are ``members[offsets[v]:offsets[v+1]]``, sorted, and
    always include v. The r=1 case is read straight off the adjacency.
    """
    if r < 1:
        raise ValueError(f"radius must be >= 1, got {r}")
    if r == 1:
        rows = [
            np.union1d(g.neighbors(v), [v]).astype(np.int64)
            for v in range(g.num_nodes)
        ]
    else:
        rows = [local_context(g, v, r) for v in range(g.num_nodes)]
    sizes = np.array([row.size for row in rows], dtype=np.int64)
    offsets = np.zeros(g.num_nodes + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    members = (
        np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    )
    return offsets, members


def mean_degree(g: Graph) -> float:
    """Arithmetic mean one-hop degree, 2|E|/|V| (the default threshold K)."""
    if g.num_nodes == 0:
        raise ValueError("mean degree of an empty graph is undefined")
    return 2.0 * g.num_edges / g.num_nodes


def _as_universe(node_universe, degrees: np.ndarray) -> np.ndarray:
    if node_universe is None:
        return np.arange(degrees.shape[0], dtype=np.int64)
    return np.asarray(sorted(node_universe), dtype=np.int64)


def partition_contrast(
    degrees: np.ndarray, threshold: float, node_universe=None
) -> GroupAssignment:
    """Split a node universe into low-degree (deg <= K) and high-degree rest.

    The threshold is inclusive: a node exactly at K lands in the low group.
    """
    degrees = np.asarray(degrees, dtype=np.float64)
    universe = _as_universe(node_universe, degrees)
    low_mask = degrees[universe] <= threshold
    s0 = universe[low_mask]
    s1 = universe[~low_mask]
    if s0.size == 0 or s1.size == 0:
        warnings.warn(
            f"degree threshold {threshold} leaves one contrast group empty "
            f"(|S0|={s0.size}, |S1|={s1.size})",
            stacklevel=2,
        )
    return GroupAssignment(
        kind="threshold-contrast", groups=[s0, s1], params={"threshold": threshold}
    )


def partition_top_bottom(
    degrees: np.ndarray, fraction: float, node_universe=None
) -> GroupAssignment:
    """Bottom-p% (group 0) and top-p% (group 1) of a universe by degree.

    Each group has exactly floor(p * |universe|) nodes. Ordering is by
    (degree, node id), so ties are broken deterministically by id.
    """
    if not 0.0 < fraction <= 0.5:
        raise ValueError(f"fraction must be in (0, 0.5], got {fraction}")
    degrees = np.asarray(degrees, dtype=np.float64)
    universe = _as_universe(node_universe, degrees)
    if universe.size < 2:
        raise ValueError("top/bottom partition needs a universe of >= 2 nodes")
    order = universe[np.lexsort((universe, degrees[universe]))]
    k = int(np.floor(fraction * universe.size))
    g0 = np.sort(order[:k])
    g1 = np.sort(order[order.size - k :]) if k else np.empty(0, dtype=np.int64)
    return GroupAssignment(
        kind="top-bottom-fraction", groups=[g0, g1], params={"fraction": fraction}
    )


def partition_boundaries(
    degrees: np.ndarray, boundaries, node_universe=None
) -> GroupAssignment:
    """General m-group partition by half-open degree ranges.

    ``boundaries`` is an ascending sequence d_1 < ... < d_{m+1}; group i
    holds nodes with d_i <= degree < d_{i+1}.
    """
    bounds = np.asarray(boundaries, dtype=np.float64)
    if bounds.ndim != 1 or bounds.size < 2:
        raise ValueError("need at least two boundaries")
    if np.any(np.diff(bounds) <= 0):
        raise ValueError("boundaries must be strictly increasing")
    degrees = np.asarray(degrees, dtype=np.float64)
    universe = _as_universe(node_universe, degrees)
    deg = degrees[universe]
    groups = [
        universe[(bounds[i] <= deg) & (deg < bounds[i + 1])]
        for i in range(bounds.size - 1)
    ]
    return GroupAssignment(
        kind="boundary-list", groups=groups, params={"boundaries": bounds.tolist()}
    )


def split_nodes(
    num_nodes: int, ratios: tuple[float, float, float], seed: int
) -> NodeSplit:
    """Deterministic train/val/test split with the given proportions.

    Sizes are floored, with the remainder going to the training set; the
    same seed always produces the same split.
    """
    ratios = tuple(float(x) for x in ratios)
    if len(ratios) != 3 or any(x <= 0 for x in ratios):
        raise ValueError(f"ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(num_nodes)
    n_val = int(np.floor(ratios[1] * num_nodes))
    n_test = int(np.floor(ratios[2] * num_nodes))
    n_train = num_nodes - n_val - n_test
    return NodeSplit(
        train=np.sort(perm[:n_train]),
        val=np.sort(perm[n_train : n_train + n_val]),
        test=np.sort(perm[n_train + n_val :]),
        seed=seed,
    )


def synth_generate(
    n: int, attach: int, label_bias: float, feat_dim: int, seed: int
) -> Graph:
    """Preferential-attachment graph with degree-correlated labels.

    Starts from a clique on ``attach + 1`` nodes; every later node attaches
    to ``attach`` distinct existing nodes chosen proportionally to degree,
    giving a long-tailed degree distribution. Each node's label is its
    degree-group indicator (degree <= mean -> 0, else 1) kept with
    probability ``label_bias`` and flipped otherwise. Features are the
    class mean (unit separation between the two class means) plus standard
    normal noise. Deterministic under ``seed``.
    """
    if attach < 1:
        raise ValueError(f"attach must be >= 1, got {attach}")
    if n < attach + 1:
        raise ValueError(f"need n >= attach + 1, got n={n}, attach={attach}")
    if not 0.0 <= label_bias <= 1.0:
        raise ValueError(f"label_bias must be in [0, 1], got {label_bias}")
    if feat_dim < 1:
        raise ValueError(f"feat_dim must be >= 1, got {feat_dim}")

    rng = np.random.default_rng(seed)
    m0 = attach + 1
    edges = [(i, j) for i in range(m0) for j in range(i + 1, m0)]
    # One entry per edge endpoint: sampling uniformly from it is sampling
    # nodes proportionally to degree.
    repeated = [v for e in edges for v in e]
    for v in range(m0, n):
        targets: set[int] = set()
        while len(targets) < attach:
            targets.add(repeated[int(rng.integers(len(repeated)))])
        for t in sorted(targets):
            edges.append((v, t))
            repeated.extend((v, t))

    edge_arr = np.array(edges, dtype=np.int64)
    deg = np.bincount(edge_arr.ravel(), minlength=n).astype(np.float64)
    base = (deg > deg.mean()).astype(np.int64)
    flips = rng.random(n) < (1.0 - label_bias)
    labels = np.where(flips, 1 - base, base)

    # Class means sit at 1 and 1 + u/|u| (unit separation). The shared
    # positive offset mimics count-style features, so aggregated feature
    # magnitude reflects neighborhood abundance and the planted degree bias
    # is expressible by a plain aggregation model.
    direction = np.ones(feat_dim) / np.sqrt(feat_dim)
    features = (
        1.0
        + labels[:, None] * direction[None, :]
        + rng.standard_normal((n, feat_dim))
    )
    return build_graph(edge_arr, features, labels, num_classes=2)

"""Graph container, GCN propagation operator, file I/O, synthetic graphs and OOD splits."""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gttt import kernels
from gttt.errors import GraphFormatError, ValidationError

SHIFT_KINDS = ("covariate", "concept")
DOMAIN_CRITERIA = ("degree", "word")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph in canonical CSR form.

    Every edge is stored in both directions, targets are strictly
    increasing inside each row and there are no self-loops. Arrays are
    read-only so instances can be shared freely.
    """

    csr_offsets: np.ndarray
    csr_targets: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    texts: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "csr_offsets", _frozen(self.csr_offsets, np.int64))
        object.__setattr__(self, "csr_targets", _frozen(self.csr_targets, np.int64))
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(-1, 1)
        object.__setattr__(self, "features", _frozen(feats, np.float64))
        object.__setattr__(self, "labels", _frozen(self.labels, np.int64))
        if self.texts is not None:
            object.__setattr__(self, "texts", tuple(str(t) for t in self.texts))
        self._validate()

    def _validate(self):
        off, tgt = self.csr_offsets, self.csr_targets
        n = len(off) - 1
        if n < 1:
            raise ValidationError("graph must have at least one node")
        if off[0] != 0 or off[-1] != len(tgt) or np.any(np.diff(off) < 0):
            raise ValidationError("csr_offsets must start at 0, be non-decreasing and end at len(csr_targets)")
        if len(tgt) and (tgt.min() < 0 or tgt.max() >= n):
            raise ValidationError("csr_targets entry out of range")
        rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(off))
        if np.any(rows == tgt):
            raise ValidationError("self-loops are not stored in the adjacency")
        keys = rows * n + tgt
        if np.any(np.diff(keys) <= 0):
            raise ValidationError("row targets must be strictly increasing (duplicate or unsorted edge)")
        if not np.array_equal(keys, np.sort(tgt * n + rows)):
            raise ValidationError("adjacency is not symmetric")
        if self.features.shape[0] != n:
            raise ValidationError(f"features have {self.features.shape[0]} rows for {n} nodes")
        if self.labels.shape != (n,):
            raise ValidationError("labels must be a vector with one entry per node")
        if self.num_classes < 1:
            raise ValidationError("num_classes must be >= 1")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            bad = int(np.flatnonzero((self.labels < 0) | (self.labels >= self.num_classes))[0])
            raise ValidationError(
                f"label {int(self.labels[bad])} of node {bad} outside [0, {self.num_classes})"
            )
        if self.texts is not None and len(self.texts) != n:
            raise ValidationError("texts must have one entry per node")

    @classmethod
    def from_edges(cls, num_nodes, edges, features, labels, num_classes=None, texts=None):
        """Build a graph from an undirected edge list (either orientation, duplicates allowed)."""
        n = int(num_nodes)
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(e) and (e.min() < 0 or e.max() >= n):
            raise ValidationError("edge endpoint outside [0, num_nodes)")
        e = e[e[:, 0] != e[:, 1]]
        both = np.concatenate([e, e[:, ::-1]])
        keys = np.unique(both[:, 0] * n + both[:, 1])
        rows, cols = keys // n, keys % n
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=offsets[1:])
        labels = np.asarray(labels, dtype=np.int64)
        if num_classes is None:
            num_classes = int(labels.max()) + 1 if len(labels) else 1
        return cls(offsets, cols, features, labels, int(num_classes), texts)

    @property
    def num_nodes(self):
        return len(self.csr_offsets) - 1

    @property
    def num_edges(self):
        """Number of undirected edges."""
        return len(self.csr_targets) // 2

    @property
    def feat_dim(self):
        return self.features.shape[1]

    def degrees(self):
        return np.diff(self.csr_offsets)

    def neighbors(self, v):
        return self.csr_targets[self.csr_offsets[v]:self.csr_offsets[v + 1]]

    def edge_array(self):
        """Undirected edges as an ``(m, 2)`` array with ``u < v``, sorted."""
        rows = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.degrees())
        keep = rows < self.csr_targets
        return np.stack([rows[keep], self.csr_targets[keep]], axis=1)

    def with_edges(self, edges):
        return Graph.from_edges(self.num_nodes, edges, self.features, self.labels, self.num_classes, self.texts)

    def permuted(self, perm):
        """Relabel nodes so that old node ``perm[i]`` becomes new node ``i``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        texts = None if self.texts is None else [self.texts[p] for p in perm]
        return Graph.from_edges(
            self.num_nodes, inv[self.edge_array()], self.features[perm], self.labels[perm],
            self.num_classes, texts,
        )


@dataclass(frozen=True, eq=False)
class NormAdj:
    """Symmetric normalized adjacency with self-loops, in CSR form."""

    offsets: np.ndarray
    targets: np.ndarray
    weights: np.ndarray

    @property
    def num_nodes(self):
        return len(self.offsets) - 1

    def matmul(self, dense):
        return kernels.spmm(self.offsets, self.targets, self.weights, dense)

    def to_dense(self):
        n = self.num_nodes
        out = np.zeros((n, n))
        rows = np.repeat(np.arange(n), np.diff(self.offsets))
        out[rows, self.targets] = self.weights
        return out


def normalize_adjacency(g):
    off, tgt, w = kernels.gcn_normalize(g.csr_offsets, g.csr_targets)
    return NormAdj(off, tgt, w)


# ---------------------------------------------------------------- file I/O

def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            yield reader.line_num, row


def load_graph(node_file, edge_file, num_classes=None):
    """Read a node CSV and an edge CSV into a validated :class:`Graph`.

    ``num_classes`` defaults to ``max(label) + 1``.
    """
    rows = _read_rows(node_file)
    try:
        line, header = next(rows)
    except StopIteration:
        raise GraphFormatError(node_file, 1, "empty node file") from None
    header = [h.strip() for h in header]
    has_text = header[-1] == "text"
    feat_cols = header[2:-1] if has_text else header[2:]
    if header[:2] != ["id", "label"] or feat_cols != [f"feat_{i}" for i in range(len(feat_cols))]:
        raise GraphFormatError(node_file, line, "header must be id,label,feat_0..feat_{d-1}[,text]")
    width = len(header)

    ids, labels, feats, texts = [], [], [], []
    for line, row in rows:
        if len(row) != width:
            raise GraphFormatError(node_file, line, f"expected {width} columns, got {len(row)}")
        try:
            ids.append(int(row[0]))
            labels.append(int(row[1]))
            feats.append([float(x) for x in row[2:2 + len(feat_cols)]])
        except ValueError as exc:
            raise GraphFormatError(node_file, line, str(exc)) from None
        if has_text:
            texts.append(row[-1])

    n = len(ids)
    if n == 0:
        raise GraphFormatError(node_file, 2, "no node rows")
    id_arr = np.asarray(ids, dtype=np.int64)
    if not np.array_equal(np.sort(id_arr), np.arange(n)):
        raise ValidationError("node ids must be a dense 0-based range")
    order = np.argsort(id_arr)
    label_arr = np.asarray(labels, dtype=np.int64)[order]
    if num_classes is not None and (label_arr.min() < 0 or label_arr.max() >= num_classes):
        raise ValidationError(f"label outside [0, {num_classes})")
    feat_arr = np.asarray(feats, dtype=np.float64).reshape(n, len(feat_cols))[order]
    text_list = [texts[i] for i in order] if has_text else None

    edges = []
    erows = _read_rows(edge_file)
    try:
        line, eh = next(erows)
    except StopIteration:
        eh = None
    if eh is not None and [h.strip() for h in eh] != ["src", "dst"]:
        raise GraphFormatError(edge_file, line, "header must be src,dst")
    for line, row in erows:
        if len(row) != 2:
            raise GraphFormatError(edge_file, line, f"expected 2 columns, got {len(row)}")
        try:
            u, v = int(row[0]), int(row[1])
        except ValueError as exc:
            raise GraphFormatError(edge_file, line, str(exc)) from None
        if not (0 <= u < n and 0 <= v < n):
            raise ValidationError(f"{edge_file}:{line}: dangling edge endpoint ({u}, {v}) for {n} nodes")
        edges.append((u, v))
    return Graph.from_edges(n, np.asarray(edges, dtype=np.int64), feat_arr, label_arr, num_classes, text_list)


def save_graph(g, node_file, edge_file):
    header = ["id", "label"] + [f"feat_{i}" for i in range(g.feat_dim)]
    if g.texts is not None:
        header.append("text")
    with open(node_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(g.num_nodes):
            row = [i, int(g.labels[i])] + [repr(float(x)) for x in g.features[i]]
            if g.texts is not None:
                row.append(g.texts[i])
            w.writerow(row)
    with open(edge_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst"])
        for u, v in g.edge_array():
            w.writerow([int(u), int(v)])


# ------------------------------------------------------------ synthetic SBM

@dataclass
class SbmParams:
    """Stochastic block model with Gaussian node features.

    ``domain_drift`` (classes x dims) optionally shifts each class mean by
    ``z * domain_drift[c]`` where ``z ~ U(0, 1)`` per node; when
    ``domain_index`` is set, ``z`` is also written to that feature column
    so a "word" split can use it as the domain value.
    """

    block_sizes: list
    p_intra: float
    p_inter: float
    class_means: list
    noise_std: float = 0.5
    domain_drift: list | None = None
    domain_index: int | None = None

    def validate(self):
        if not self.block_sizes or any(int(s) < 1 for s in self.block_sizes):
            raise ValidationError("block sizes must be >= 1")
        for name in ("p_intra", "p_inter"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"{name}={p} outside [0, 1]")
        means = np.asarray(self.class_means, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] != len(self.block_sizes):
            raise ValidationError("class_means must have one row per block")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be >= 0")
        if self.domain_drift is not None and np.shape(self.domain_drift) != means.shape:
            raise ValidationError("domain_drift must match class_means shape")
        if self.domain_index is not None and not 0 <= self.domain_index < means.shape[1]:
            raise ValidationError("domain_index outside feature range")


def _triangle_pairs(k, s):
    """Map linear indices over the strict upper triangle of an s x s matrix to (i, j)."""
    k = np.asarray(k, dtype=np.int64)
    b = 2 * s - 1
    i = np.floor((b - np.sqrt(np.maximum(b * b - 8.0 * k, 0.0))) / 2).astype(np.int64)
    start = lambda r: r * (2 * s - r - 1) // 2  # noqa: E731
    i = np.where(start(i) > k, i - 1, i)
    i = np.where(start(i + 1) <= k, i + 1, i)
    return i, k - start(i) + i + 1


def _sample_pairs(rng, count, p):
    if p <= 0.0 or count == 0:
        return np.empty(0, dtype=np.int64)
    if p >= 1.0:
        return np.arange(count, dtype=np.int64)
    k = int(rng.binomial(count, p))
    return np.sort(rng.choice(count, size=k, replace=False))


def generate_sbm(params, seed):
    params.validate()
    rng = np.random.default_rng(seed)
    sizes = [int(s) for s in params.block_sizes]
    starts = np.concatenate([[0], np.cumsum(sizes)])
    n = int(starts[-1])
    labels = np.repeat(np.arange(len(sizes)), sizes)

    chunks = []
    for a, sa in enumerate(sizes):
        idx = _sample_pairs(rng, sa * (sa - 1) // 2, params.p_intra)
        i, j = _triangle_pairs(idx, sa)
        chunks.append(np.stack([i + starts[a], j + starts[a]], axis=1))
        for b in range(a + 1, len(sizes)):
            sb = sizes[b]
            idx = _sample_pairs(rng, sa * sb, params.p_inter)
            chunks.append(np.stack([idx // sb + starts[a], idx % sb + starts[b]], axis=1))
    edges = np.concatenate(chunks) if chunks else np.empty((0, 2), dtype=np.int64)

    means = np.asarray(params.class_means, dtype=np.float64)
    feats = means[labels].copy()
    if params.domain_drift is not None:
        z = rng.random(n)
        feats += z[:, None] * np.asarray(params.domain_drift, dtype=np.float64)[labels]
    feats += params.noise_std * rng.standard_normal(feats.shape)
    if params.domain_drift is not None and params.domain_index is not None:
        feats[:, params.domain_index] = z
    return Graph.from_edges(n, edges, feats, labels, len(sizes))


# -------------------------------------------------------------- OOD splits

@dataclass
class SplitSpec:
    shift: str = "covariate"
    criterion: str = "degree"
    word_index: int = 0
    kappa: float = 2.0

    def validate(self):
        if self.shift not in SHIFT_KINDS:
            raise ValidationError(f"shift must be one of {SHIFT_KINDS}, got {self.shift!r}")
        if self.criterion not in DOMAIN_CRITERIA:
            raise ValidationError(f"criterion must be one of {DOMAIN_CRITERIA}, got {self.criterion!r}")


@dataclass(eq=False)
class DataSplit:
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    shift_kind: str
    domain_criterion: str
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("train_mask", "val_mask", "test_mask"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=bool))
        overlap = (self.train_mask.astype(int) + self.val_mask + self.test_mask) > 1
        if overlap.any():
            raise ValidationError("split masks overlap")
        if not self.test_mask.any():
            raise ValidationError("test mask is empty")

    def ids(self, which):
        return np.flatnonzero(getattr(self, f"{which}_mask"))

    def to_json(self):
        return {
            "shift": self.shift_kind,
            "criterion": self.domain_criterion,
            "train": self.ids("train").tolist(),
            "val": self.ids("val").tolist(),
            "test": self.ids("test").tolist(),
        }

    @classmethod
    def from_json(cls, obj, num_nodes):
        masks = []
        for key in ("train", "val", "test"):
            m = np.zeros(num_nodes, dtype=bool)
            ids = np.asarray(obj.get(key, []), dtype=np.int64)
            if len(ids) and (ids.min() < 0 or ids.max() >= num_nodes):
                raise ValidationError(f"split {key} id outside [0, {num_nodes})")
            m[ids] = True
            masks.append(m)
        return cls(*masks, obj["shift"], obj["criterion"])


def save_split(split, path):
    Path(path).write_text(json.dumps(split.to_json()) + "\n", encoding="utf-8")


def load_split(path, num_nodes):
    return DataSplit.from_json(json.loads(Path(path).read_text(encoding="utf-8")), num_nodes)


def domain_values(g, spec):
    if spec.criterion == "degree":
        return g.degrees().astype(np.float64)
    if not 0 <= spec.word_index < g.feat_dim:
        raise ValidationError(f"word_index {spec.word_index} outside feature range")
    return g.features[:, spec.word_index].copy()


def _count(ratio, n):
    return int(math.floor(ratio * n + 0.5))


def make_ood_split(g, spec, ratios, seed):
    """Partition nodes into train/val/test with a covariate or concept shift.

    Covariate: nodes are ordered by domain value (ties by id); the lowest
    values form train, the next ones val and the highest ones test.
    Concept: train and val are drawn with weights ``exp(kappa * agreement)``
    where agreement is high when a node's domain rank matches its label
    position, and test is drawn uniformly from what remains.
    """
    spec.validate()
    r_train, r_val, r_test = (float(r) for r in ratios)
    if min(r_train, r_test) <= 0 or r_val < 0 or r_train + r_val + r_test > 1 + 1e-12:
        raise ValidationError("ratios must be positive (val may be 0) and sum to at most 1")
    n = g.num_nodes
    values = domain_values(g, spec)
    if np.all(values == values[0]):
        raise ValidationError("domain criterion non-informative")
    n_tr, n_val, n_te = _count(r_train, n), _count(r_val, n), max(1, _count(r_test, n))
    if n_tr + n_val + n_te > n:
        n_val = max(0, n - n_tr - n_te)
    order = np.lexsort((np.arange(n), values))
    masks = [np.zeros(n, dtype=bool) for _ in range(3)]

    if spec.shift == "covariate":
        masks[0][order[:n_tr]] = True
        masks[1][order[n_tr:n_tr + n_val]] = True
        masks[2][order[n - n_te:]] = True
    else:
        rng = np.random.default_rng(seed)
        rank = np.empty(n)
        rank[order] = np.arange(n) / max(n - 1, 1)
        C = g.num_classes
        label_pos = g.labels / (C - 1) if C > 1 else np.full(n, 0.5)
        weight = np.exp(spec.kappa * (1.0 - np.abs(rank - label_pos)))
        pool = np.arange(n)
        for k, size in ((0, n_tr), (1, n_val)):
            if size == 0:
                continue
            w = weight[pool]
            pick = rng.choice(len(pool), size=size, replace=False, p=w / w.sum())
            masks[k][pool[pick]] = True
            pool = np.delete(pool, pick)
        masks[2][rng.choice(pool, size=n_te, replace=False)] = True
    return DataSplit(*masks, spec.shift, spec.criterion)


def drop_edge(g, rate, seed):
    """Remove each undirected edge independently with probability ``rate``."""
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"drop rate {rate} outside [0, 1)")
    edges = g.edge_array()
    if rate == 0.0 or len(edges) == 0:
        return g
    keep = np.random.default_rng(seed).random(len(edges)) >= rate
    return g.with_edges(edges[keep])

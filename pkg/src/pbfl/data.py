"""Dataset loading, synthetic generation, and non-IID partitioning.

Shards are index-based views over a shared feature matrix so that a
partition never copies the underlying data more than once.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

MAX_PARTITION_RETRIES = 200


@dataclass
class DatasetShard:
    """One client's slice of the training set."""

    X: np.ndarray
    y: np.ndarray
    owner: int

    def __post_init__(self):
        if self.X.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        if len(self.X) != len(self.y):
            raise ValueError("feature and label counts differ")

    def __len__(self):
        return len(self.y)

    def label_histogram(self, classes):
        counts = np.bincount(self.y, minlength=classes)
        return counts / max(1, len(self.y))


def load_csv(path):
    """Read a header-labelled CSV into (features, labels).

    The label column is located by the header name ``label``; every
    other column is parsed as a float feature. Labels are remapped to
    contiguous integers starting at zero.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file, expected a header row")
        header = [h.strip() for h in header]
        if "label" not in header:
            raise ValueError(f"{path}: no column named 'label' in header")
        label_idx = header.index("label")
        feats = []
        labels = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            labels.append(row[label_idx])
            feats.append([float(v) for i, v in enumerate(row) if i != label_idx])
    if not feats:
        raise ValueError(f"{path}: no data rows")
    X = np.asarray(feats, dtype=np.float64)
    raw = np.asarray(labels)
    classes = sorted(set(raw.tolist()))
    remap = {c: i for i, c in enumerate(classes)}
    y = np.asarray([remap[v] for v in raw], dtype=np.int64)
    return X, y


def synthetic_gaussians(examples, features, classes, separation, seed):
    """Draw a balanced mixture of unit-variance Gaussian blobs.

    Class means sit at ``separation`` times a random unit direction, so
    larger separations make the task easier.
    """
    if examples < classes:
        raise ValueError("need at least one example per class")
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(classes, features))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    y = rng.integers(0, classes, size=examples)
    X = means[y] + rng.normal(size=(examples, features))
    return X, y.astype(np.int64)


def train_test_split(X, y, test_fraction, seed):
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(y))
    n_test = max(1, int(round(test_fraction * len(y))))
    test = order[:n_test]
    train = order[n_test:]
    return X[train], y[train], X[test], y[test]


def dirichlet_partition(labels, n, alpha_dirichlet, seed):
    """Split example indices across n clients with Dirichlet class skew.

    For each class, the proportion of its examples given to each client
    is drawn from Dirichlet(alpha). Small alpha concentrates a class on
    few clients; large alpha approaches a uniform split. Draws leaving
    any client empty are resampled.
    """
    if alpha_dirichlet <= 0:
        raise ValueError("alpha_dirichlet must be positive")
    labels = np.asarray(labels)
    if n > len(labels):
        raise ValueError(
            f"cannot split {len(labels)} examples across {n} clients"
        )
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    for _ in range(MAX_PARTITION_RETRIES):
        parts = [[] for _ in range(n)]
        for c in classes:
            idx = np.flatnonzero(labels == c)
            rng.shuffle(idx)
            props = rng.dirichlet(np.full(n, alpha_dirichlet))
            cuts = (np.cumsum(props)[:-1] * len(idx)).round().astype(int)
            for owner, chunk in enumerate(np.split(idx, cuts)):
                parts[owner].extend(chunk.tolist())
        if all(parts):
            return [np.asarray(sorted(p), dtype=np.int64) for p in parts]
    raise RuntimeError(
        "partition kept leaving a client empty; use a larger dataset or alpha"
    )


def make_shards(X, y, parts):
    """Materialize per-client shards from a list of index arrays."""
    return [DatasetShard(X=X[p], y=y[p], owner=i) for i, p in enumerate(parts)]


@dataclass
class DatasetBundle:
    """A ready-to-train dataset: shards plus the held-out split."""

    shards: list
    X_test: np.ndarray
    y_test: np.ndarray
    features: int
    classes: int
    partition: list = field(repr=False, default_factory=list)


def prepare_dataset(spec, n_clients, alpha_dirichlet, seed):
    """Load or synthesize data, split it, and shard the training part.

    ``spec`` is a mapping with a ``kind`` of ``csv`` (needs ``path``) or
    ``synthetic`` (needs ``examples``/``features``/``classes``); both
    honour ``test_fraction`` and ``feature_scale`` (a divisor applied to
    every feature, e.g. 16.0 to map raw pixel counts onto [0, 1]).
    """
    kind = spec["kind"]
    if kind == "csv":
        X, y = load_csv(spec["path"])
    elif kind == "synthetic":
        X, y = synthetic_gaussians(
            spec["examples"],
            spec["features"],
            spec["classes"],
            spec.get("separation", 2.0),
            seed=seed + 11,
        )
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    scale = float(spec.get("feature_scale", 1.0))
    if scale <= 0:
        raise ValueError(f"feature_scale must be positive, got {scale}")
    if scale != 1.0:
        X = X / scale
    classes = int(y.max()) + 1
    X_tr, y_tr, X_te, y_te = train_test_split(
        X, y, spec.get("test_fraction", 0.2), seed=seed + 13
    )
    parts = dirichlet_partition(y_tr, n_clients, alpha_dirichlet, seed=seed + 17)
    return DatasetBundle(
        shards=make_shards(X_tr, y_tr, parts),
        X_test=X_te,
        y_test=y_te,
        features=X.shape[1],
        classes=classes,
        partition=parts,
    )

"""Synthetic Minority Over-sampling on flattened feature rows.

For each class below its target count, synthetic rows are made by taking a
class member, picking one of its ``k`` nearest same-class neighbours and
placing a new point at a uniform random position on the segment between
them.  Base members are cycled in a seeded random order so every member is
used once before any is reused.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


class SmoteError(ValueError):
    pass


@dataclass(frozen=True)
class SmoteParams:
    k: int = 5
    # None balances every class up to the majority count
    targets: Mapping[int, int] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class SmoteResult:
    features: np.ndarray
    labels: np.ndarray
    # one (base row, neighbour row, lambda) triple per synthetic row
    provenance: list[tuple[int, int, float]] = field(default_factory=list)

    @property
    def n_original(self) -> int:
        return len(self.labels) - len(self.provenance)

    def __iter__(self):
        return iter((self.features, self.labels))


def knn_minority(X: np.ndarray, labels, class_id: int, k: int) -> dict[int, list[int]]:
    """Nearest same-class neighbours of each member of ``class_id``.

    Returns ``{row index: [neighbour row indices]}`` sorted by Euclidean
    distance, ties broken by lower index, self excluded.  When the class has
    ``k`` or fewer other members all of them are returned.

    Squared differences are accumulated coordinate by coordinate, left to
    right, so every distance is bit-identical to a plain sequential sum and
    tie-breaking does not depend on the summation strategy.
    """
    labels = np.asarray(labels)
    members = np.flatnonzero(labels == class_id)
    if members.size < 2:
        raise SmoteError(f"class {class_id} has {members.size} member(s); k-NN needs >= 2")
    k_eff = min(k, members.size - 1)
    Xc = np.asarray(X, dtype=np.float64)[members]
    d2 = np.zeros((members.size, members.size))
    for j in range(Xc.shape[1]):
        col = Xc[:, j]
        d2 += (col[:, None] - col[None, :]) ** 2
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")[:, :k_eff]
    return {int(row): members[order[local]].tolist() for local, row in enumerate(members)}


def synthesize(x, x_nn, lam: float) -> np.ndarray:
    """Point at fraction ``lam`` of the way from ``x`` to ``x_nn``."""
    x = np.asarray(x, dtype=np.float64)
    x_nn = np.asarray(x_nn, dtype=np.float64)
    if x.shape != x_nn.shape:
        raise SmoteError(f"dimension mismatch: {x.shape} vs {x_nn.shape}")
    if not 0.0 <= lam <= 1.0:
        raise SmoteError(f"lambda must be in [0, 1], got {lam}")
    # convex form: exact endpoints at lam = 0 and lam = 1
    return (1.0 - lam) * x + lam * x_nn


def _resolve_targets(counts: np.ndarray, params: SmoteParams) -> dict[int, int]:
    if params.targets is None:
        top = int(counts.max()) if counts.size else 0
        return {c: top for c in range(counts.size)}
    targets = {c: int(counts[c]) for c in range(counts.size)}
    for c, t in params.targets.items():
        current = int(counts[c]) if c < counts.size else 0
        if t < current:
            raise SmoteError(f"target {t} for class {c} is below its current count {current}")
        targets[int(c)] = int(t)
    return targets


def smote(X: np.ndarray, labels, params: SmoteParams = SmoteParams()) -> SmoteResult:
    """Oversample every class up to its target and append the synthetic rows.

    Original rows are returned unchanged as a prefix of the output; classes
    are processed in ascending label order.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if X.ndim != 2 or X.shape[0] != labels.shape[0]:
        raise SmoteError(f"feature matrix {X.shape} does not match {labels.shape[0]} labels")
    counts = np.bincount(labels) if labels.size else np.zeros(0, dtype=np.intp)
    targets = _resolve_targets(counts, params)
    rng = np.random.default_rng(params.seed)

    new_rows, new_labels, provenance = [], [], []
    for c in sorted(targets):
        current = int(counts[c]) if c < counts.size else 0
        deficit = targets[c] - current
        if deficit <= 0:
            continue
        if current < 2:
            raise SmoteError(f"class {c} has {current} member(s); SMOTE needs >= 2 to interpolate")
        table = knn_minority(X, labels, c, params.k)
        order = rng.permutation(np.flatnonzero(labels == c))
        for j in range(deficit):
            base = int(order[j % current])
            neighbours = table[base]
            nn = neighbours[int(rng.integers(len(neighbours)))]
            lam = float(rng.random())
            new_rows.append(synthesize(X[base], X[nn], lam))
            new_labels.append(c)
            provenance.append((base, nn, lam))

    if not new_rows:
        return SmoteResult(X.copy(), labels.copy(), [])
    return SmoteResult(
        np.vstack([X, np.vstack(new_rows)]),
        np.concatenate([labels, np.asarray(new_labels, dtype=np.intp)]),
        provenance,
    )


def write_provenance(result: SmoteResult, path: str | os.PathLike) -> None:
    """CSV with one line per synthetic row: output row, label, base, neighbour, lambda."""
    start = result.n_original
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "label", "base_index", "neighbor_index", "lambda"])
        for i, (base, nn, lam) in enumerate(result.provenance):
            w.writerow([start + i, int(result.labels[start + i]), base, nn, repr(lam)])


def read_provenance(path: str | os.PathLike) -> list[tuple[int, int, float]]:
    with open(path, newline="") as fh:
        return [
            (int(r["base_index"]), int(r["neighbor_index"]), float(r["lambda"]))
            for r in csv.DictReader(fh)
        ]

"""Readers for edge lists, numeric feature/label files and the raw cora dump."""

from __future__ import annotations

import gzip
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import Graph, GraphError, build_graph

logger = logging.getLogger(__name__)

CORA_SHAPE = (2708, 1433, 7)
DEFAULT_CORA_DIR = Path(__file__).resolve().parent / "data" / "cora"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    name: str
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    masks: dict[str, np.ndarray]
    class_names: tuple[str, ...] = ()

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1


def _open_text(path: Path):
    path = Path(path)
    if not path.exists() and Path(str(path) + ".gz").exists():
        path = Path(str(path) + ".gz")
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, encoding="utf-8")


def read_edge_list(path: Path) -> np.ndarray:
    """Tab- or whitespace-separated 0-based pairs; ``#`` starts a comment."""
    pairs = []
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DatasetError(f"{path}:{lineno}: expected 'u<TAB>v', got {line!r}")
            pairs.append((int(parts[0]), int(parts[1])))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def write_edge_list(path: Path, g: Graph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {g.node_count} nodes, {g.edge_count} edges\n")
        for u, v in g.edges:
            fh.write(f"{u}\t{v}\n")


def read_matrix(path: Path) -> np.ndarray:
    """Header-free numeric rows separated by commas or whitespace."""
    rows = []
    with _open_text(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                rows.append([float(t) for t in line.replace(",", " ").split()])
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise DatasetError(f"{path}: ragged rows with widths {sorted(widths)}")
    return np.asarray(rows, dtype=np.float64)


def read_index_file(path: Path) -> np.ndarray:
    with _open_text(path) as fh:
        return np.asarray([int(t) for line in fh for t in line.split()], dtype=np.int64)


def random_split(n: int, seed: int, fractions=(0.6, 0.2, 0.2)) -> dict[str, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_valid = int(round(fractions[1] * n))
    parts = {"train": order[:n_train], "valid": order[n_train : n_train + n_valid], "test": order[n_train + n_valid :]}
    return {k: index_mask(v, n) for k, v in parts.items()}


def index_mask(idx: np.ndarray, n: int) -> np.ndarray:
    m = np.zeros(n, dtype=bool)
    m[idx] = True
    return m


def check_masks(masks: dict[str, np.ndarray], n: int) -> None:
    for k in ("train", "valid", "test"):
        if k not in masks:
            raise DatasetError(f"missing {k} mask")
        if masks[k].shape != (n,):
            raise DatasetError(f"{k} mask has length {masks[k].shape[0]}, expected {n}")
    if (masks["train"] & masks["valid"]).any() or (masks["train"] & masks["test"]).any() or (masks["valid"] & masks["test"]).any():
        raise DatasetError("train/valid/test masks overlap")


def row_normalize(x: np.ndarray) -> np.ndarray:
    s = x.sum(axis=1, keepdims=True)
    s[s == 0] = 1.0
    return x / s


def load_cora(directory: Path | None = None) -> tuple[Graph, np.ndarray, np.ndarray, tuple[str, ...]]:
    """Parse ``cora.content`` and ``cora.cites`` (either may be gzipped).

    Paper ids are remapped to dense indices in file order and class strings to
    indices in first-seen order.
    """
    directory = Path(directory) if directory is not None else DEFAULT_CORA_DIR
    ids: dict[str, int] = {}
    feats, labels, classes = [], [], {}
    with _open_text(directory / "cora.content") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            ids[parts[0]] = len(ids)
            feats.append(np.asarray(parts[1:-1], dtype=np.float64))
            labels.append(classes.setdefault(parts[-1], len(classes)))
    edges = []
    dropped = 0
    with _open_text(directory / "cora.cites") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) != 2:
                continue
            if parts[0] not in ids or parts[1] not in ids:
                dropped += 1
                continue
            u, v = ids[parts[0]], ids[parts[1]]
            if u != v:
                edges.append((u, v))
    if dropped:
        logger.warning("dropped %d citations to unknown paper ids", dropped)
    x = np.vstack(feats)
    y = np.asarray(labels, dtype=np.int64)
    g = build_graph(edges, len(ids))
    if (g.node_count, x.shape[1], len(classes)) != CORA_SHAPE:
        logger.warning("cora shape %s differs from the published %s", (g.node_count, x.shape[1], len(classes)), CORA_SHAPE)
    return g, x, y, tuple(classes)


def load_files(edges: Path, features: Path, labels: Path | None, node_count: int | None = None):
    x = read_matrix(features)
    n = node_count if node_count is not None else x.shape[0]
    if x.shape[0] != n:
        raise DatasetError(f"feature file has {x.shape[0]} rows but the graph has {n} nodes")
    try:
        g = build_graph(read_edge_list(edges), n)
    except GraphError as exc:
        raise DatasetError(str(exc)) from exc
    y = None
    if labels is not None:
        y = read_matrix(labels).astype(np.int64).ravel()
        if y.shape[0] != n:
            raise DatasetError(f"label file has {y.shape[0]} rows but the graph has {n} nodes")
    return g, x, y

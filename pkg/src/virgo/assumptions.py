"""Path decompositions of GCN embeddings and the statistics built on them.

A path ``p = (i, j_1, ..., j_l)`` carries the input features of its source
``j_l`` to its destination ``i`` through ``l`` layers; consecutive nodes are
neighbours under the self-loop convention, and nodes may repeat (walks).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .gcn import ActivationTrace, Parameters, forward, softmax
from .graph import NormalizedAdjacency

logger = logging.getLogger(__name__)

__all__ = [
    "PathSample",
    "PathTermDecomposition",
    "Summary",
    "CorrelationReport",
    "ConstantInputError",
    "PathError",
    "pearson",
    "walks_between",
    "walks_into",
    "enumerate_paths",
    "decompose_path",
    "PathLab",
    "check_assumption1",
    "check_assumption2",
    "check_assumption3",
    "check_assumption4",
    "check_assumption5",
]

MAX_PAIR_DRAWS = 10_000


class ConstantInputError(ValueError):
    """Pearson correlation is undefined for a constant vector."""


class PathError(ValueError):
    pass


@dataclass(frozen=True)
class PathSample:
    nodes: tuple[int, ...]

    def __post_init__(self):
        if len(self.nodes) < 2:
            raise PathError("a path needs at least one hop")

    @property
    def length(self) -> int:
        return len(self.nodes) - 1

    @property
    def destination(self) -> int:
        return self.nodes[0]

    @property
    def source(self) -> int:
        return self.nodes[-1]


@dataclass(frozen=True)
class PathTermDecomposition:
    """The factors of one path message.

    ``message`` is ``delta * (degree_product * fnn)`` with all gates pulled in
    front of the linear feature-times-weights product. ``exact_message``
    applies each gate right after its own layer, which is what the network
    actually computes; summing it over all paths into a node reproduces the
    node's embedding. ``delta`` and ``message`` are None when the layers the
    path crosses have different widths.
    """

    path: PathSample
    delta: np.ndarray | None
    degree_product: float
    fnn: np.ndarray
    message: np.ndarray | None
    exact_message: np.ndarray


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError(f"need two equal-length vectors of at least 2 entries, got {x.shape} and {y.shape}")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx, syy = xc @ xc, yc @ yc
    if sxx < 1e-300 or syy < 1e-300:
        raise ConstantInputError("correlation undefined for a constant input")
    r = float((xc @ yc) / np.sqrt(sxx * syy))
    return min(1.0, max(-1.0, r))


def _hop_distances(a: NormalizedAdjacency, src: int, max_hops: int) -> dict[int, int]:
    dist = {src: 0}
    frontier = [src]
    for d in range(1, max_hops + 1):
        nxt = []
        for u in frontier:
            for v in a.neighbors(u):
                v = int(v)
                if v not in dist:
                    dist[v] = d
                    nxt.append(v)
        frontier = nxt
    return dist


def walks_between(a: NormalizedAdjacency, dest: int, src: int, length: int) -> list[PathSample]:
    """All length-``length`` walks from ``dest`` to ``src`` (bounded DFS)."""
    dist = _hop_distances(a, src, length)
    out: list[PathSample] = []

    def dfs(node: int, prefix: list[int], remaining: int):
        if remaining == 0:
            if node == src:
                out.append(PathSample(tuple(prefix)))
            return
        for nb in a.neighbors(node):
            nb = int(nb)
            if dist.get(nb, length + 1) <= remaining - 1:
                prefix.append(nb)
                dfs(nb, prefix, remaining - 1)
                prefix.pop()

    if dist.get(dest, length + 1) <= length:
        dfs(dest, [dest], length)
    return out


def walks_into(a: NormalizedAdjacency, dest: int, length: int) -> list[PathSample]:
    """Every length-``length`` walk that ends its message at ``dest``."""
    out: list[PathSample] = []

    def dfs(prefix: list[int], remaining: int):
        if remaining == 0:
            out.append(PathSample(tuple(prefix)))
            return
        for nb in a.neighbors(prefix[-1]):
            prefix.append(int(nb))
            dfs(prefix, remaining - 1)
            prefix.pop()

    dfs([dest], length)
    return out


def _reachable_pairs(a: NormalizedAdjacency, length: int) -> sp.csr_matrix:
    pattern = a.matrix.copy()
    pattern.data = np.ones_like(pattern.data)
    reach = pattern
    for _ in range(length - 1):
        reach = reach @ pattern
        reach.data = np.ones_like(reach.data)
    reach = reach.tocsr()
    reach.sort_indices()
    return reach


def enumerate_paths(
    a: NormalizedAdjacency,
    length: int,
    max_paths: int,
    seed: int = 0,
    max_draws: int = MAX_PAIR_DRAWS,
) -> list[PathSample]:
    """Collect up to ``max_paths`` distinct paths of one length.

    Each draw picks a (destination, source) pair uniformly among the pairs
    joined by at least one walk of this length and adds all of their walks.
    """
    if length not in (1, 2, 3):
        raise PathError(f"path length must be 1, 2 or 3, got {length}")
    if max_paths <= 0:
        return []
    rng = np.random.default_rng(seed)
    reach = _reachable_pairs(a, length)
    if reach.nnz == 0:
        raise PathError(f"graph has no walks of length {length}")
    rows = np.repeat(np.arange(reach.shape[0]), np.diff(reach.indptr))
    seen: dict[tuple[int, ...], PathSample] = {}
    for _ in range(max_draws):
        k = int(rng.integers(reach.nnz))
        for p in walks_between(a, int(rows[k]), int(reach.indices[k]), length):
            seen.setdefault(p.nodes, p)
        if len(seen) >= max_paths:
            break
    if len(seen) < max_paths:
        logger.warning("only %d of %d requested paths of length %d found", len(seen), max_paths, length)
    return list(seen.values())[:max_paths]


def decompose_path(
    p: PathSample,
    trace: ActivationTrace,
    params: Parameters,
    a: NormalizedAdjacency,
    x: np.ndarray | None = None,
) -> PathTermDecomposition:
    l = p.length
    if l > params.num_layers or l > trace.num_layers:
        raise PathError(f"path of length {l} exceeds the {params.num_layers}-layer network")
    if max(p.nodes) >= a.node_count:
        raise PathError("path visits a node outside the graph")
    x = trace.post[0] if x is None else np.asarray(x, dtype=np.float64)
    nodes = p.nodes

    coeffs = []
    for k in range(l):
        c = a.coefficient(nodes[k], nodes[k + 1])
        if c == 0.0:
            raise PathError(f"nodes {nodes[k]} and {nodes[k + 1]} are not adjacent")
        coeffs.append(c)

    # node j_k is gated by the pre-activation of layer l-k-1; the gate
    # product only makes sense when all of those layers share one width
    widths = {params.weights[s].shape[1] for s in range(l)}
    delta = None
    if len(widths) == 1:
        delta = np.ones(widths.pop())
        for k in range(l):
            delta = delta * trace.gate(l - k - 1)[nodes[k]]
    d_p = float(np.prod(coeffs))

    fnn = x[nodes[-1]]
    exact = x[nodes[-1]]
    for s in range(l):
        node = nodes[l - 1 - s]
        fnn = fnn @ params.weights[s]
        exact = trace.gate(s)[node] * (coeffs[l - 1 - s] * (exact @ params.weights[s]))

    return PathTermDecomposition(
        path=p,
        delta=delta,
        degree_product=d_p,
        fnn=fnn,
        message=None if delta is None else delta * (d_p * fnn),
        exact_message=exact,
    )


@dataclass(frozen=True)
class Summary:
    mean: float
    std: float
    count: int
    excluded: int = 0

    @classmethod
    def of(cls, values: Iterable[float], excluded: int = 0) -> "Summary":
        v = np.asarray(list(values), dtype=np.float64)
        if v.size == 0:
            return cls(float("nan"), float("nan"), 0, excluded)
        return cls(float(v.mean()), float(v.std()), int(v.size), excluded)

    def __str__(self) -> str:
        return f"{self.mean:.2f}±{self.std:.2f}"


@dataclass
class CorrelationReport:
    """One statistic summarised per path length."""

    name: str
    rows: dict[int, Summary] = field(default_factory=dict)
    expected: dict[int, float] = field(default_factory=dict)

    def __getitem__(self, length: int) -> Summary:
        return self.rows[length]


class PathLab:
    """Forward pass, sampled paths and a shared neuron subset for one network.

    The neuron subset is drawn once per length and reused for every path so
    that path messages can be compared neuron by neuron.
    """

    def __init__(
        self,
        a: NormalizedAdjacency,
        x: np.ndarray,
        params: Parameters,
        lengths: Sequence[int] = (1, 2, 3),
        n_paths: int = 100,
        n_neurons: int = 100,
        seed: int = 0,
    ):
        self.a, self.params = a, params
        self.x = np.asarray(x, dtype=np.float64)
        self.trace = forward(params, a, self.x)
        self.lengths = tuple(lengths)
        self.decomps: dict[int, list[PathTermDecomposition]] = {}
        self.neurons: dict[int, np.ndarray] = {}
        ss = np.random.SeedSequence(seed)
        for l, child in zip(self.lengths, ss.spawn(len(self.lengths))):
            width = params.weights[l - 1].shape[1]
            if width < n_neurons:
                raise ValueError(f"layer width {width} is smaller than the {n_neurons} sampled neurons")
            path_seed, neuron_seed = child.spawn(2)
            paths = enumerate_paths(a, l, n_paths, seed=int(path_seed.generate_state(1)[0]))
            self.decomps[l] = [decompose_path(p, self.trace, params, a, self.x) for p in paths]
            self.neurons[l] = np.sort(np.random.default_rng(neuron_seed).choice(width, n_neurons, replace=False))
        for l, d in self.decomps.items():
            if len(d) < 2:
                logger.warning("length %d: %d path(s); pairwise statistics will be empty", l, len(d))


def _pairwise(vectors: list[np.ndarray], left=slice(None), right=slice(None)) -> Summary:
    vals, excluded = [], 0
    for u, v in combinations(vectors, 2):
        try:
            vals.append(pearson(u[left], v[right]))
        except ConstantInputError:
            excluded += 1
    return Summary.of(vals, excluded)


def check_assumption1(lab: PathLab) -> CorrelationReport:
    """Pearson correlation between the messages of different paths."""
    rep = CorrelationReport("message_path_correlation")
    for l in lab.lengths:
        s = lab.neurons[l]
        rep.rows[l] = _pairwise([d.message[s] for d in lab.decomps[l]])
        rep.expected[l] = 1.0
    return rep


def check_assumption2(lab: PathLab, seed: int = 0) -> CorrelationReport:
    """Correlation between two disjoint halves of the sampled neurons.

    For every pair of paths, the first path's first half is correlated with
    the second path's second half.
    """
    rep = CorrelationReport("weight_path_correlation")
    rng = np.random.default_rng(seed)
    for l in lab.lengths:
        s = rng.permutation(lab.neurons[l])
        half = s.size // 2
        first, second = s[:half], s[half : 2 * half]
        rep.rows[l] = _pairwise([d.message for d in lab.decomps[l]], first, second)
        rep.expected[l] = 0.0
    return rep


def check_assumption3(lab: PathLab) -> tuple[CorrelationReport, CorrelationReport]:
    """Per-path correlation of the gate product with the linear term, and of their squares."""
    lin = CorrelationReport("gate_vs_linear_term")
    sq = CorrelationReport("gate_sq_vs_linear_term_sq")
    for l in lab.lengths:
        s = lab.neurons[l]
        v1, v2, ex1, ex2 = [], [], 0, 0
        for d in lab.decomps[l]:
            try:
                v1.append(pearson(d.delta[s], d.fnn[s]))
            except ConstantInputError:
                ex1 += 1
            try:
                v2.append(pearson(d.delta[s] ** 2, d.fnn[s] ** 2))
            except ConstantInputError:
                ex2 += 1
        if ex1:
            logger.warning("length %d: %d path(s) with constant gates excluded", l, ex1)
        lin.rows[l], sq.rows[l] = Summary.of(v1, ex1), Summary.of(v2, ex2)
        lin.expected[l] = sq.expected[l] = 0.0
    return lin, sq


def check_assumption4(lab: PathLab) -> CorrelationReport:
    """Mean gate product per path; expected 0.5 ** length."""
    rep = CorrelationReport("gate_success_rate")
    for l in lab.lengths:
        s = lab.neurons[l]
        rep.rows[l] = Summary.of(d.delta[s].mean() for d in lab.decomps[l])
        rep.expected[l] = 0.5**l
    return rep


def check_assumption5(logits: np.ndarray) -> Summary:
    """Mean and spread of all softmax entries of the output layer."""
    probs = softmax(np.asarray(logits, dtype=np.float64))
    return Summary(float(probs.mean()), float(probs.std()), int(probs.size))

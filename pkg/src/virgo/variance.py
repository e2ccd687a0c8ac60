"""Empirical and closed-form per-layer variances at initialization.

Row ``l`` of a :class:`VarianceReport` belongs to weight matrix ``l``: its
forward entry describes ``h^{l+1}`` (the layer's output) and its backward
entry describes ``dLoss/dh^l`` (the gradient at the layer's input).
Variances are population variances over the neurons of one node, averaged
over nodes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gcn import Parameters, backward, forward, output_gradient
from .graph import NormalizedAdjacency, feature_means
from .initializers import InitPlan, LayerDims

__all__ = [
    "NodeVariances",
    "VarianceReport",
    "node_mean_variance",
    "empirical_forward_variance",
    "empirical_backward_variance",
    "theoretical_forward_variance",
    "theoretical_backward_variance",
    "probe_variances",
    "log_spread",
]


@dataclass(frozen=True)
class NodeVariances:
    """Closed-form variances, one row per probed layer and one column per node."""

    layers: tuple[int, ...]
    per_node: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.per_node.mean(axis=1)

    @property
    def total(self) -> np.ndarray:
        return self.per_node.sum(axis=1)


def node_mean_variance(h: np.ndarray) -> float:
    """Mean over nodes of the population variance over each node's neurons."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] < 2:
        raise ValueError(f"need at least two neurons per node, got shape {h.shape}")
    return float(h.var(axis=1).mean())


def empirical_forward_variance(trace) -> np.ndarray:
    """``var(h^l)`` for l = 1..L."""
    return np.array([node_mean_variance(h) for h in trace.post[1:]])


def empirical_backward_variance(gtrace) -> np.ndarray:
    """``var(dLoss/dh^l)`` for l = 0..L-1; needs the input gradient."""
    if gtrace.post[0] is None:
        raise ValueError("gradient trace lacks dLoss/dh^0; run backward with input_grad=True")
    return np.array([node_mean_variance(g) for g in gtrace.post[:-1]])


def theoretical_forward_variance(
    a: NormalizedAdjacency, h0bar: np.ndarray, plan: InitPlan, dims: LayerDims | None = None
) -> NodeVariances:
    """Closed-form ``var(h_i^l)`` for l = 1..L.

    ``(prod_{k<l} fan_in[k] var(w^k) / 2) * [A^l h0bar]_i^2``
    """
    dims = dims or plan.dims
    L = dims.num_layers
    cur = np.asarray(h0bar, dtype=np.float64)
    scale = 1.0
    rows = []
    for l in range(1, L + 1):
        cur = a.matrix @ cur
        scale *= dims.fan_in[l - 1] * plan.variances[l - 1] / 2.0
        rows.append(scale * cur**2)
    return NodeVariances(tuple(range(1, L + 1)), np.vstack(rows))


def theoretical_backward_variance(
    a: NormalizedAdjacency,
    plan: InitPlan,
    dims: LayerDims | None = None,
    num_classes: int | None = None,
    n: int | None = None,
    convention: str = "through_layer",
) -> NodeVariances:
    """Closed-form ``var(dLoss/dh_i^l)`` for l = 0..L-1.

    ``through_layer`` (default) follows the gradient the engine computes:
    ``dLoss/dh^l`` passes back through ``W^l .. W^{L-1}`` and the ReLU gates of
    ``h^{l+1} .. h^{L-1}``::

        (C-1)/(C n^2) var(w^{L-1}) prod_{k=l}^{L-2} (fan_out[k] var(w^k) / 2) [A^{L-l} 1]_i^2

    Under this convention the backward Virgo plan equalizes the node sums of
    every pair of successive layers.

    ``beyond_layer`` is the closed form that only multiplies layers strictly
    after ``l``::

        prod_{k>l} fan_out[k] var(w^k) (C-1) / (2^{L-l} n^2 C) [A^{L-l} 1]_i^2
    """
    dims = dims or plan.dims
    L = dims.num_layers
    C = num_classes if num_classes is not None else dims.num_classes
    n = n if n is not None else a.node_count
    if C < 2:
        raise ValueError("backward variance needs at least 2 classes")
    var = plan.variances

    powers = [np.ones(a.node_count)]
    for _ in range(L):
        powers.append(a.matrix @ powers[-1])

    rows = []
    for l in range(L):
        prop = powers[L - l] ** 2
        if convention == "through_layer":
            factor = (C - 1) / (C * n**2) * var[L - 1]
            for k in range(l, L - 1):
                factor *= dims.fan_out[k] * var[k] / 2.0
        elif convention == "beyond_layer":
            factor = (C - 1) / (2.0 ** (L - l) * n**2 * C)
            for k in range(l + 1, L):
                factor *= dims.fan_out[k] * var[k]
        else:
            raise ValueError(f"unknown convention {convention!r}")
        rows.append(factor * prop)
    return NodeVariances(tuple(range(L)), np.vstack(rows))


@dataclass
class VarianceReport:
    method: str
    empirical_forward: np.ndarray
    empirical_backward: np.ndarray
    theoretical_forward: np.ndarray
    theoretical_backward: np.ndarray
    seeds: int
    meta: dict = field(default_factory=dict)

    CSV_HEADER = ("layer", "method", "empirical_fwd", "theoretical_fwd", "empirical_bwd", "theoretical_bwd")

    def __post_init__(self):
        n = len(self.empirical_forward)
        for arr in (self.empirical_backward, self.theoretical_forward, self.theoretical_backward):
            if len(arr) != n:
                raise ValueError("all per-layer series must have the same length")

    @property
    def num_layers(self) -> int:
        return len(self.empirical_forward)

    def rows(self) -> list[list]:
        return [
            [
                l,
                self.method,
                f"{self.empirical_forward[l]:.10e}",
                f"{self.theoretical_forward[l]:.10e}",
                f"{self.empirical_backward[l]:.10e}",
                f"{self.theoretical_backward[l]:.10e}",
            ]
            for l in range(self.num_layers)
        ]

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(self.CSV_HEADER)
        w.writerows(self.rows())
        return buf.getvalue()


def probe_variances(
    a: NormalizedAdjacency,
    x: np.ndarray,
    labels: np.ndarray,
    plan: InitPlan,
    seeds: Sequence[int],
    convention: str = "through_layer",
) -> VarianceReport:
    """Average the empirical variances over independent initializations.

    Dropout is off and the loss covers every node, so ``n`` in the backward
    closed form is the node count.
    """
    L = plan.dims.num_layers
    fwd = np.zeros(L)
    bwd = np.zeros(L)
    everyone = np.ones(a.node_count, dtype=bool)
    for s in seeds:
        params = Parameters.from_plan(plan, s)
        trace = forward(params, a, x)
        grads = backward(trace, a, params, output_gradient(trace.logits, labels, everyone))
        fwd += empirical_forward_variance(trace)
        bwd += empirical_backward_variance(grads)
    fwd /= len(seeds)
    bwd /= len(seeds)
    theo_f = theoretical_forward_variance(a, feature_means(x), plan).mean
    theo_b = theoretical_backward_variance(a, plan, convention=convention).mean
    return VarianceReport(plan.method, fwd, bwd, theo_f, theo_b, len(seeds))


def log_spread(series: Sequence[float]) -> float:
    """``|log(last / first)|``: how far a per-layer variance curve drifts."""
    return float(abs(np.log(series[-1] / series[0])))

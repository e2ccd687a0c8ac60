"""Per-layer weight variances for classic and graph-aware initializations.

Layer ``l`` owns a weight matrix of shape ``(fan_in[l], fan_out[l])`` that
consumes ``h^l`` and produces the pre-activation feeding ``h^{l+1}``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import NormalizedAdjacency

logger = logging.getLogger(__name__)

__all__ = [
    "CLASSIC_METHODS",
    "METHODS",
    "LayerDims",
    "InitPlan",
    "classic_variance",
    "virgo_forward_plan",
    "virgo_backward_plan",
    "make_plan",
    "sample_weights",
]

CLASSIC_METHODS = ("lecun", "xavier", "kai_for", "kai_back")
METHODS = CLASSIC_METHODS + ("virgo_for", "virgo_back")
FAMILIES = ("gaussian", "uniform")

# Squared norms below this make the Virgo ratio meaningless.
DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class LayerDims:
    fan_in: tuple[int, ...]
    fan_out: tuple[int, ...]

    def __post_init__(self):
        if len(self.fan_in) == 0 or len(self.fan_in) != len(self.fan_out):
            raise ValueError("need at least one layer and matching fan_in/fan_out lengths")
        if min(self.fan_in + self.fan_out) < 1:
            raise ValueError("layer widths must be positive")
        for l in range(len(self.fan_in) - 1):
            if self.fan_out[l] != self.fan_in[l + 1]:
                raise ValueError(f"layer {l} outputs {self.fan_out[l]} but layer {l + 1} expects {self.fan_in[l + 1]}")

    @classmethod
    def chain(cls, widths: Sequence[int]) -> "LayerDims":
        """``[in, h1, ..., out]`` -> dims of ``len(widths) - 1`` layers."""
        widths = [int(w) for w in widths]
        return cls(tuple(widths[:-1]), tuple(widths[1:]))

    @classmethod
    def uniform(cls, in_dim: int, hidden: int, layers: int, out_dim: int) -> "LayerDims":
        return cls.chain([in_dim] + [hidden] * (layers - 1) + [out_dim])

    @property
    def num_layers(self) -> int:
        return len(self.fan_in)

    @property
    def num_classes(self) -> int:
        return self.fan_out[-1]

    def shapes(self) -> list[tuple[int, int]]:
        return list(zip(self.fan_in, self.fan_out))


@dataclass(frozen=True)
class InitPlan:
    method: str
    variances: tuple[float, ...]
    dims: LayerDims
    family: str = "gaussian"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown distribution family {self.family!r}")
        if len(self.variances) != self.dims.num_layers:
            raise ValueError("one variance per layer is required")
        v = np.asarray(self.variances, dtype=np.float64)
        if not (np.all(np.isfinite(v)) and np.all(v > 0)):
            raise ValueError(f"variances must be finite and positive, got {self.variances}")
        object.__setattr__(self, "variances", tuple(float(x) for x in v))

    def renamed(self, method: str) -> "InitPlan":
        return InitPlan(method, self.variances, self.dims, self.family)

    def to_json(self) -> str:
        return json.dumps(
            {
                "method": self.method,
                "family": self.family,
                "variances": [float(v) for v in self.variances],
                "fan_in": list(self.dims.fan_in),
                "fan_out": list(self.dims.fan_out),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "InitPlan":
        d = json.loads(text)
        dims = LayerDims(tuple(d["fan_in"]), tuple(d["fan_out"]))
        return cls(d["method"], tuple(d["variances"]), dims, d.get("family", "gaussian"))


def classic_variance(method: str, m1: int, m2: int) -> float:
    if m1 < 1 or m2 < 1:
        raise ValueError(f"fan-in and fan-out must be positive, got ({m1}, {m2})")
    if method == "lecun":
        return 1.0 / (3.0 * m1)
    if method == "xavier":
        return 2.0 / (m1 + m2)
    if method == "kai_for":
        return 2.0 / m1
    if method == "kai_back":
        return 2.0 / m2
    raise ValueError(f"unknown classic method {method!r}")


def _squared_norms(a: NormalizedAdjacency, v: np.ndarray, max_power: int) -> np.ndarray:
    """``[||A^k v||^2 for k = 0..max_power]`` via repeated sparse products."""
    out = np.empty(max_power + 1)
    cur = np.asarray(v, dtype=np.float64)
    for k in range(max_power + 1):
        out[k] = float(cur @ cur)
        if k < max_power:
            cur = a.matrix @ cur
    return out


def virgo_forward_plan(
    a: NormalizedAdjacency, h0bar: np.ndarray, dims: LayerDims, family: str = "gaussian"
) -> InitPlan:
    """Variances that keep the node-summed forward variance equal across layers.

    ``var(w^l) = 2/fan_in[l] * ||A^l h0bar||^2 / ||A^{l+1} h0bar||^2``.
    """
    h0bar = np.asarray(h0bar, dtype=np.float64)
    if h0bar.shape != (a.node_count,):
        raise ValueError(f"h0bar has shape {h0bar.shape}, expected ({a.node_count},)")
    L = dims.num_layers
    s = _squared_norms(a, h0bar, L)
    variances = []
    for l in range(L):
        if s[l] < DEGENERATE_NORM or s[l + 1] < DEGENERATE_NORM:
            logger.warning("degenerate forward ratio at layer %d, falling back to kai_for", l)
            variances.append(classic_variance("kai_for", dims.fan_in[l], dims.fan_out[l]))
        else:
            variances.append(2.0 / dims.fan_in[l] * s[l] / s[l + 1])
    return InitPlan("virgo_for", tuple(variances), dims, family)


def virgo_backward_plan(a: NormalizedAdjacency, dims: LayerDims, family: str = "gaussian") -> InitPlan:
    """Variances that keep the node-summed backward variance equal across layers.

    Hidden layers use ``2/fan_out[l] * ||A^{L-l-1} 1||^2 / ||A^{L-l} 1||^2``;
    the output layer uses ``N / ((C - 1) ||A 1||^2)``.
    """
    L = dims.num_layers
    C = dims.num_classes
    if C < 2:
        raise ValueError(f"backward plan needs at least 2 classes, got {C}")
    n = a.node_count
    t = _squared_norms(a, np.ones(n), L)
    variances = []
    for l in range(L - 1):
        num, den = t[L - l - 1], t[L - l]
        if den < DEGENERATE_NORM:
            logger.warning("degenerate backward ratio at layer %d, falling back to kai_back", l)
            variances.append(classic_variance("kai_back", dims.fan_in[l], dims.fan_out[l]))
        else:
            variances.append(2.0 / dims.fan_out[l] * num / den)
    variances.append(n / ((C - 1) * t[1]))
    return InitPlan("virgo_back", tuple(variances), dims, family)


def make_plan(
    method: str,
    dims: LayerDims,
    a: NormalizedAdjacency | None = None,
    h0bar: np.ndarray | None = None,
    family: str = "gaussian",
) -> InitPlan:
    if method in CLASSIC_METHODS:
        v = tuple(classic_variance(method, m1, m2) for m1, m2 in dims.shapes())
        return InitPlan(method, v, dims, family)
    if a is None:
        raise ValueError(f"{method} needs the normalized adjacency")
    if method == "virgo_for":
        if h0bar is None:
            raise ValueError("virgo_for needs per-node feature means")
        return virgo_forward_plan(a, h0bar, dims, family)
    if method == "virgo_back":
        return virgo_backward_plan(a, dims, family)
    raise ValueError(f"unknown initialization method {method!r}; choose from {METHODS}")


def sample_weights(plan: InitPlan, seed: int) -> list[np.ndarray]:
    """Draw one zero-mean matrix per layer; layer seeds are spawned from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(plan.dims.num_layers)
    weights = []
    for (m1, m2), var, ss in zip(plan.dims.shapes(), plan.variances, children):
        rng = np.random.default_rng(ss)
        if plan.family == "gaussian":
            w = rng.normal(0.0, np.sqrt(var), size=(m1, m2))
        else:
            bound = np.sqrt(3.0 * var)
            w = rng.uniform(-bound, bound, size=(m1, m2))
        weights.append(w)
    return weights

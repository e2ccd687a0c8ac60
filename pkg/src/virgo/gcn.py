"""A from-scratch GCN with manual reverse-mode gradients and Adam.

Layer ``l`` computes ``pre^l = A (h^l W^l)`` and ``h^{l+1} = relu(pre^l)``;
the last layer returns ``pre^{L-1}`` as logits. Dropout, when enabled,
masks hidden activations ``h^l`` (l >= 1) before they enter layer ``l``.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import Graph, NormalizedAdjacency, normalize_adjacency
from .initializers import InitPlan, sample_weights

logger = logging.getLogger(__name__)

__all__ = [
    "Parameters",
    "ActivationTrace",
    "GradientTrace",
    "AdamState",
    "TrainConfig",
    "TrainReport",
    "relu_gate",
    "forward",
    "softmax",
    "cross_entropy",
    "output_gradient",
    "backward",
    "adam_step",
    "accuracy",
    "train_node_classifier",
]


@dataclass
class Parameters:
    weights: list[np.ndarray]
    biases: list[np.ndarray] | None = None

    def __post_init__(self):
        for l in range(len(self.weights) - 1):
            if self.weights[l].shape[1] != self.weights[l + 1].shape[0]:
                raise ValueError(f"weight {l} of shape {self.weights[l].shape} does not chain into {self.weights[l + 1].shape}")
        if self.biases is not None and len(self.biases) != len(self.weights):
            raise ValueError("one bias per layer is required")

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @classmethod
    def from_plan(cls, plan: InitPlan, seed: int, bias: bool = False) -> "Parameters":
        ws = sample_weights(plan, seed)
        bs = [np.zeros(w.shape[1]) for w in ws] if bias else None
        return cls(ws, bs)

    def copy(self) -> "Parameters":
        return Parameters(
            [w.copy() for w in self.weights],
            None if self.biases is None else [b.copy() for b in self.biases],
        )

    def arrays(self) -> list[np.ndarray]:
        return list(self.weights) + (list(self.biases) if self.biases is not None else [])


@dataclass
class ActivationTrace:
    """Everything the backward pass and the probes need from one forward pass.

    ``post[l]`` is ``h^l`` for l = 0..L (``post[L]`` are the logits),
    ``pre[l]`` the pre-activation produced by layer ``l``, ``inputs[l]`` the
    (possibly dropped-out) matrix actually fed into layer ``l``.
    """

    post: list[np.ndarray]
    pre: list[np.ndarray]
    inputs: list[np.ndarray]
    dropout_masks: list[np.ndarray | None]

    @property
    def num_layers(self) -> int:
        return len(self.pre)

    @property
    def logits(self) -> np.ndarray:
        return self.post[-1]

    def gate(self, layer: int) -> np.ndarray:
        """0/1 ReLU indicator of layer ``layer``; all ones for the linear output layer."""
        if layer == self.num_layers - 1:
            return np.ones_like(self.pre[layer])
        return relu_gate(self.pre[layer])


@dataclass
class GradientTrace:
    post: list[np.ndarray | None]  # dLoss/dh^l, l = 0..L
    pre: list[np.ndarray]  # dLoss/dpre^l, l = 0..L-1
    weights: list[np.ndarray]
    biases: list[np.ndarray] | None = None

    def arrays(self) -> list[np.ndarray]:
        return list(self.weights) + (list(self.biases) if self.biases is not None else [])


def relu_gate(x: np.ndarray) -> np.ndarray:
    return (x > 0).astype(np.float64)


def forward(
    params: Parameters,
    a: NormalizedAdjacency,
    x: np.ndarray,
    dropout: float = 0.0,
    seed: int | np.random.Generator | None = None,
) -> ActivationTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != a.node_count:
        raise ValueError(f"features have {x.shape[0]} rows for {a.node_count} nodes")
    if x.shape[1] != params.weights[0].shape[0]:
        raise ValueError(f"features have width {x.shape[1]}, first layer expects {params.weights[0].shape[0]}")
    if not 0.0 <= dropout < 1.0:
        raise ValueError(f"dropout must lie in [0, 1), got {dropout}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    L = params.num_layers
    post, pre, inputs, masks = [x], [], [], []
    h = x
    for l, w in enumerate(params.weights):
        mask = None
        if dropout > 0.0 and l > 0:
            mask = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
            h_in = h * mask
        else:
            h_in = h
        z = a.matrix @ (h_in @ w)
        if params.biases is not None:
            z = z + params.biases[l]
        if not np.all(np.isfinite(z)):
            raise FloatingPointError(f"non-finite pre-activation at layer {l}")
        h = relu_gate(z) * z + 0.0 if l < L - 1 else z
        inputs.append(h_in)
        masks.append(mask)
        pre.append(z)
        post.append(h)
    return ActivationTrace(post=post, pre=pre, inputs=inputs, dropout_masks=masks)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_mask(mask: np.ndarray, n: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ValueError(f"mask of shape {mask.shape} does not match {n} nodes")
    if not mask.any():
        raise ValueError("mask selects no nodes")
    return mask


def cross_entropy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Mean negative log-likelihood over the masked nodes."""
    mask = _check_mask(mask, logits.shape[0])
    z = logits[mask]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(z.shape[0]), labels[mask]].mean()) + 0.0


def output_gradient(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Gradient of :func:`cross_entropy` w.r.t. the logits: (softmax - onehot) / |mask|."""
    mask = _check_mask(mask, logits.shape[0])
    g = np.zeros_like(logits, dtype=np.float64)
    idx = np.flatnonzero(mask)
    s = softmax(logits[idx])
    s[np.arange(idx.size), labels[idx]] -= 1.0
    g[idx] = s / idx.size
    return g


def backward(
    trace: ActivationTrace,
    a: NormalizedAdjacency,
    params: Parameters,
    out_grad: np.ndarray,
    input_grad: bool = True,
) -> GradientTrace:
    """Exact reverse pass of :func:`forward` (A is symmetric, so A^T = A).

    With ``input_grad=False`` the gradient w.r.t. the raw features is skipped.
    """
    L = params.num_layers
    if trace.num_layers != L:
        raise ValueError(f"trace has {trace.num_layers} layers, parameters have {L}")
    if out_grad.shape != trace.logits.shape:
        raise ValueError(f"output gradient of shape {out_grad.shape} does not match logits {trace.logits.shape}")

    d_post: list[np.ndarray | None] = [None] * (L + 1)
    d_pre: list[np.ndarray] = [None] * L  # type: ignore[list-item]
    d_w: list[np.ndarray] = [None] * L  # type: ignore[list-item]
    d_b = [None] * L if params.biases is not None else None
    d_post[L] = out_grad
    g = out_grad
    for l in range(L - 1, -1, -1):
        if l < L - 1:
            g = g * relu_gate(trace.pre[l])
        d_pre[l] = g
        back = a.matrix @ g
        d_w[l] = trace.inputs[l].T @ back
        if d_b is not None:
            d_b[l] = g.sum(axis=0)
        if l == 0 and not input_grad:
            break
        d_in = back @ params.weights[l].T
        mask = trace.dropout_masks[l]
        d_post[l] = d_in * mask if mask is not None else d_in
        g = d_post[l]
    return GradientTrace(post=d_post, pre=d_pre, weights=d_w, biases=d_b)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(x) for x in arrays], [np.zeros_like(x) for x in arrays], 0)


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays and a new state."""
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"parameter {p.shape} and gradient {g.shape} differ")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


def accuracy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    mask = _check_mask(mask, logits.shape[0])
    pred = np.argmax(logits[mask], axis=1)
    return float(np.mean(pred == labels[mask]))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    epochs: int = 200
    patience: int = 20
    dropout: float = 0.5
    hidden: int = 64
    layers: int = 2
    seed: int = 0
    loss_mask: str = "train"  # "train" or "all"
    weight_decay: float = 0.0
    bias: bool = False

    def __post_init__(self):
        if self.patience > self.epochs:
            raise ValueError("patience cannot exceed epochs")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.layers < 1 or self.hidden < 1:
            raise ValueError("need at least one layer of positive width")
        if self.loss_mask not in ("train", "all"):
            raise ValueError(f"loss_mask must be 'train' or 'all', got {self.loss_mask!r}")


@dataclass
class TrainReport:
    seed: int
    method: str
    epoch_best: int
    val_acc: float
    test_acc: float
    losses: list[float] = field(default_factory=list)
    val_curve: list[float] = field(default_factory=list)
    failed: bool = False
    message: str = ""

    CSV_HEADER = ("seed", "method", "epoch_best", "val_acc", "test_acc")

    def csv_row(self) -> list:
        return [self.seed, self.method, self.epoch_best, f"{self.val_acc:.6f}", f"{self.test_acc:.6f}"]

    def loss_curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "val_acc"])
        for e, (loss, acc) in enumerate(zip(self.losses, self.val_curve), start=1):
            w.writerow([e, f"{loss:.10g}", f"{acc:.6f}"])
        return buf.getvalue()


def train_node_classifier(
    g: Graph | NormalizedAdjacency,
    x: np.ndarray,
    labels: np.ndarray,
    masks: dict[str, np.ndarray],
    cfg: TrainConfig,
    plan: InitPlan,
) -> TrainReport:
    """Full-batch training with early stopping on validation accuracy.

    The reported test accuracy is taken at the epoch with the best
    validation accuracy. A non-finite loss ends the run with ``failed=True``.
    """
    a = g if isinstance(g, NormalizedAdjacency) else normalize_adjacency(g)
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if plan.dims.fan_in[0] != x.shape[1] or plan.dims.num_layers != cfg.layers:
        raise ValueError("initialization plan does not match the model configuration")

    params = Parameters.from_plan(plan, cfg.seed, bias=cfg.bias)
    state = AdamState.zeros_like(params.arrays())
    drop_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED]))
    loss_mask = np.ones(x.shape[0], dtype=bool) if cfg.loss_mask == "all" else masks["train"]

    report = TrainReport(seed=cfg.seed, method=plan.method, epoch_best=0, val_acc=-1.0, test_acc=float("nan"))
    with np.errstate(over="ignore", invalid="ignore"):
        _fit(report, params, state, a, x, labels, masks, loss_mask, cfg, drop_rng)
    if report.failed:
        logger.warning("run seed=%d method=%s diverged: %s", cfg.seed, plan.method, report.message)
    return report


def _fit(report, params, state, a, x, labels, masks, loss_mask, cfg, drop_rng) -> None:
    bad_epochs = 0
    for epoch in range(1, cfg.epochs + 1):
        try:
            trace = forward(params, a, x, cfg.dropout, drop_rng)
        except FloatingPointError as exc:
            report.failed, report.message = True, f"epoch {epoch}: {exc}"
            break
        loss = cross_entropy(trace.logits, labels, loss_mask)
        if not np.isfinite(loss):
            report.failed, report.message = True, f"epoch {epoch}: non-finite loss"
            break
        report.losses.append(loss)
        grads = backward(trace, a, params, output_gradient(trace.logits, labels, loss_mask), input_grad=False)
        garr = grads.arrays()
        if cfg.weight_decay:
            garr = [gr + cfg.weight_decay * p for gr, p in zip(garr, params.arrays())]
        new, state = adam_step(params.arrays(), garr, state, cfg.lr)
        L = params.num_layers
        params = Parameters(new[:L], new[L:] if params.biases is not None else None)

        try:
            logits = forward(params, a, x).logits
        except FloatingPointError as exc:
            report.failed, report.message = True, f"epoch {epoch}: {exc}"
            break
        val = accuracy(logits, labels, masks["valid"])
        report.val_curve.append(val)
        if val > report.val_acc:
            report.val_acc = val
            report.test_acc = accuracy(logits, labels, masks["test"])
            report.epoch_best = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break

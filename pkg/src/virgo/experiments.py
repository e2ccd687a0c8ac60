"""Experiment specs, dataset loading and the sweep/probe/assumption runners.

A spec is an INI file::

    [dataset]
    kind = cora            ; cora | files | synthetic
    split_seed = 0

    [model]
    hidden = 64
    layers = 2

    [sweep]
    initializers = xavier, virgo_for
    seeds = 0-9
    lr = 0.01
    dropout = 0, 0.5

Every ``[model]``/``[sweep]`` key naming a training option may list several
comma-separated values; the grid is their Cartesian product.
"""

from __future__ import annotations

import configparser
import csv
import io
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .assumptions import (
    CorrelationReport,
    PathLab,
    Summary,
    check_assumption1,
    check_assumption2,
    check_assumption3,
    check_assumption4,
    check_assumption5,
)
from .datasets import (
    Dataset,
    DatasetError,
    check_masks,
    index_mask,
    load_cora,
    load_files,
    random_split,
    read_index_file,
    row_normalize,
)
from .gcn import Parameters, TrainConfig, TrainReport, train_node_classifier
from .graph import feature_means, generate_synthetic, normalize_adjacency
from .initializers import METHODS, InitPlan, LayerDims, make_plan
from .plotting import plot_variances
from .variance import VarianceReport, probe_variances

logger = logging.getLogger(__name__)

MAX_GRID = 64
GRID_TYPES = {
    "lr": float,
    "epochs": int,
    "patience": int,
    "dropout": float,
    "hidden": int,
    "layers": int,
    "loss_mask": str,
    "weight_decay": float,
    "bias": lambda s: s.strip().lower() in ("1", "true", "yes", "on"),
}


class SpecError(ValueError):
    """Invalid experiment specification."""


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "cora"
    name: str = ""
    directory: str = ""
    edges: str = ""
    features: str = ""
    labels: str = ""
    train_index: str = ""
    valid_index: str = ""
    test_index: str = ""
    generator: str = "erdos_renyi"
    n: int = 100
    p: float = 0.1
    graph_seed: int = 0
    feature_dim: int = 16
    num_classes: int = 2
    split_seed: int = 0
    normalize_features: bool = True

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        return self.generator if self.kind == "synthetic" else self.kind


@dataclass(frozen=True)
class Initializer:
    """A method under a display name, so one method can appear twice."""

    name: str
    method: str


@dataclass(frozen=True)
class ExperimentSpec:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    initializers: tuple[Initializer, ...] = (Initializer("xavier", "xavier"), Initializer("virgo_for", "virgo_for"))
    seeds: tuple[int, ...] = tuple(range(10))
    grid: dict[str, tuple] = field(default_factory=dict)
    family: str = "gaussian"
    out: str = "out"
    threads: int = 1
    probe_layers: int = 5
    probe_width: int = 128
    probe_seeds: int = 50
    lab_layers: int = 4
    lab_hidden: int = 128
    lab_paths: int = 100
    lab_neurons: int = 100
    lab_seed: int = 0

    def __post_init__(self):
        if not self.initializers:
            raise SpecError("initializer list is empty")
        if not self.seeds:
            raise SpecError("seed list is empty")
        for init in self.initializers:
            if init.method not in METHODS:
                raise SpecError(f"unknown initializer {init.method!r}; choose from {', '.join(METHODS)}")
        names = [i.name for i in self.initializers]
        if len(set(names)) != len(names):
            raise SpecError(f"duplicate initializer names in {names}")
        for key, values in self.grid.items():
            if key not in GRID_TYPES:
                raise SpecError(f"unknown training option {key!r}")
            if not values:
                raise SpecError(f"empty value list for {key!r}")
        if self.threads < 1:
            raise SpecError("threads must be at least 1")
        if self.grid_size > MAX_GRID:
            logger.warning("grid has %d settings (more than %d)", self.grid_size, MAX_GRID)

    @property
    def grid_size(self) -> int:
        return math.prod(len(v) for v in self.grid.values())

    def settings(self) -> list[dict]:
        keys = list(self.grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.grid[k] for k in keys))]

    def with_overrides(self, out: str | None = None, seed: int | None = None, threads: int | None = None):
        changes = {}
        if out is not None:
            changes["out"] = out
        if seed is not None:
            changes["seeds"] = tuple(range(seed, seed + len(self.seeds)))
            changes["lab_seed"] = seed
        if threads is not None:
            changes["threads"] = threads
        return replace(self, **changes)


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0-4, 9"`` -> ``(0, 1, 2, 3, 4, 9)``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            lo, sep, hi = part.partition("-")
            seeds.extend(range(int(lo), int(hi) + 1) if sep else [int(lo)])
        except ValueError as exc:
            raise SpecError(f"bad seed entry {part!r}") from exc
    return tuple(seeds)


def _parse_initializers(text: str) -> tuple[Initializer, ...]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, _, method = part.partition(":")
        out.append(Initializer(name.strip(), (method or name).strip()))
    return tuple(out)


def _typed(section: configparser.SectionProxy, key: str, kind, default):
    if key not in section:
        return default
    raw = section[key]
    try:
        if kind is bool:
            return section.getboolean(key)
        return kind(raw)
    except ValueError as exc:
        raise SpecError(f"[{section.name}] {key} = {raw!r}: {exc}") from exc


def parse_spec(text: str, base_dir: Path | None = None) -> ExperimentSpec:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SpecError(str(exc)) from exc
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()

    ds_kwargs = {}
    if cp.has_section("dataset"):
        sec = cp["dataset"]
        unknown = set(sec) - {f.name for f in fields(DatasetSpec)}
        if unknown:
            raise SpecError(f"unknown key(s) in [dataset]: {', '.join(sorted(unknown))}")
        for f in fields(DatasetSpec):
            kind = {"int": int, "float": float, "bool": bool, "str": str}[f.type]
            if f.name in sec:
                ds_kwargs[f.name] = _typed(sec, f.name, kind, f.default)
        for key in ("directory", "edges", "features", "labels", "train_index", "valid_index", "test_index"):
            if ds_kwargs.get(key):
                ds_kwargs[key] = str((base_dir / ds_kwargs[key]).resolve())
    dataset = DatasetSpec(**ds_kwargs)
    if dataset.kind not in ("cora", "files", "synthetic"):
        raise SpecError(f"unknown dataset kind {dataset.kind!r}")

    kwargs: dict = {"dataset": dataset}
    grid: dict[str, tuple] = {}
    for name in ("model", "sweep"):
        if not cp.has_section(name):
            continue
        sec = cp[name]
        for key, raw in sec.items():
            if key in GRID_TYPES:
                try:
                    grid[key] = tuple(GRID_TYPES[key](v.strip()) for v in raw.split(",") if v.strip())
                except ValueError as exc:
                    raise SpecError(f"[{name}] {key} = {raw!r}: {exc}") from exc
            elif key == "initializers":
                kwargs["initializers"] = _parse_initializers(raw)
            elif key == "seeds":
                kwargs["seeds"] = parse_seeds(raw)
            elif key == "family":
                kwargs["family"] = raw.strip()
            elif key == "threads":
                kwargs["threads"] = _typed(sec, key, int, 1)
            else:
                raise SpecError(f"unknown key {key!r} in [{name}]")
    kwargs["grid"] = grid

    known = {f.name for f in fields(ExperimentSpec)}
    for name, prefix in (("probe", "probe_"), ("assumptions", "lab_")):
        if not cp.has_section(name):
            continue
        for key in cp[name]:
            if prefix + key not in known:
                raise SpecError(f"unknown key {key!r} in [{name}]")
            kwargs[prefix + key] = _typed(cp[name], key, int, None)
    if cp.has_section("output") and "dir" in cp["output"]:
        kwargs["out"] = str((base_dir / cp["output"]["dir"]).resolve())
    return ExperimentSpec(**kwargs)


def load_spec(path: Path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SpecError(f"cannot read spec {path}: {exc}") from exc
    return parse_spec(text, path.parent)


def _splits(ds: DatasetSpec, n: int) -> dict[str, np.ndarray]:
    given = [ds.train_index, ds.valid_index, ds.test_index]
    if all(given):
        masks = {k: index_mask(read_index_file(Path(p)), n) for k, p in zip(("train", "valid", "test"), given)}
    elif any(given):
        raise SpecError("give all three of train_index, valid_index and test_index, or none")
    else:
        masks = random_split(n, ds.split_seed)
    check_masks(masks, n)
    return masks


def load_dataset(spec: ExperimentSpec | DatasetSpec) -> Dataset:
    ds = spec.dataset if isinstance(spec, ExperimentSpec) else spec
    class_names: tuple[str, ...] = ()
    if ds.kind == "cora":
        g, x, y, class_names = load_cora(Path(ds.directory) if ds.directory else None)
    elif ds.kind == "files":
        if not ds.edges or not ds.features:
            raise SpecError("files dataset needs 'edges' and 'features'")
        g, x, y = load_files(Path(ds.edges), Path(ds.features), Path(ds.labels) if ds.labels else None)
        if y is None:
            y = np.random.default_rng(ds.graph_seed).integers(0, ds.num_classes, g.node_count)
    else:
        if ds.n < 1:
            raise SpecError("synthetic graph needs at least one node")
        g = generate_synthetic(ds.generator, ds.n, ds.p, ds.graph_seed)
        rng = np.random.default_rng(np.random.SeedSequence([ds.graph_seed, 1]))
        x = rng.random((ds.n, ds.feature_dim))
        y = rng.integers(0, ds.num_classes, ds.n)
    if g.node_count == 0:
        raise SpecError("dataset has no nodes")
    if ds.normalize_features:
        x = row_normalize(x)
    if y.min() < 0:
        raise DatasetError("labels must be non-negative class indices")
    return Dataset(ds.label, g, x, y, _splits(ds, g.node_count), class_names)


def _setting_label(setting: dict) -> str:
    return ";".join(f"{k}={v}" for k, v in setting.items()) or "default"


def _train_config(setting: dict, seed: int) -> TrainConfig:
    return TrainConfig(seed=seed, **setting)


def build_plan(method: str, data: Dataset, cfg: TrainConfig, family: str = "gaussian", a=None) -> InitPlan:
    a = a if a is not None else normalize_adjacency(data.graph)
    dims = LayerDims.uniform(data.features.shape[1], cfg.hidden, cfg.layers, data.num_classes)
    return make_plan(method, dims, a, feature_means(data.features), family)


@dataclass(frozen=True)
class RunResult:
    initializer: str
    setting: str
    report: TrainReport


@dataclass
class CompareRow:
    initializer: str
    method: str
    setting: str
    val_mean: float
    test_mean: float
    test_std: float
    completed: int
    failed: int
    per_seed: tuple[float, ...]

    CSV_HEADER = ("initializer", "method", "setting", "val_mean", "test_mean", "test_std", "completed", "failed", "per_seed_test")

    def csv_row(self) -> list:
        return [
            self.initializer,
            self.method,
            self.setting,
            f"{self.val_mean:.6f}",
            f"{self.test_mean:.6f}",
            f"{self.test_std:.6f}",
            self.completed,
            self.failed,
            " ".join("nan" if math.isnan(v) else f"{v:.6f}" for v in self.per_seed),
        ]


def _run_all(spec: ExperimentSpec, data: Dataset, settings: list[dict]) -> list[RunResult]:
    a = normalize_adjacency(data.graph)
    tasks = [(init, s, seed) for init in spec.initializers for s in settings for seed in spec.seeds]

    def job(task):
        init, setting, seed = task
        cfg = _train_config(setting, seed)
        plan = build_plan(init.method, data, cfg, spec.family, a).renamed(init.name)
        return RunResult(init.name, _setting_label(setting), train_node_classifier(a, data.features, data.labels, data.masks, cfg, plan))

    if spec.threads > 1:
        with ThreadPoolExecutor(max_workers=spec.threads) as pool:
            return list(pool.map(job, tasks))
    return [job(t) for t in tasks]


def runs_csv(results: Sequence[RunResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("initializer", "setting") + TrainReport.CSV_HEADER[:1] + TrainReport.CSV_HEADER[2:] + ("failed",))
    for r in results:
        row = r.report.csv_row()
        w.writerow([r.initializer, r.setting, row[0]] + row[2:] + [int(r.report.failed)])
    return buf.getvalue()


def select_settings(spec: ExperimentSpec, results: Sequence[RunResult]) -> list[CompareRow]:
    """Pick, per initializer, the setting with the best mean validation accuracy."""
    cells: dict[tuple[str, str], list[TrainReport]] = {}
    for r in results:
        cells.setdefault((r.initializer, r.setting), []).append(r.report)
    rows = []
    for init in spec.initializers:
        best = None
        for setting in dict.fromkeys(s for (i, s) in cells if i == init.name):
            reports = sorted(cells[(init.name, setting)], key=lambda rep: rep.seed)
            ok = [rep for rep in reports if not rep.failed]
            val = float(np.mean([rep.val_acc for rep in ok])) if ok else float("nan")
            test = np.array([rep.test_acc for rep in ok])
            row = CompareRow(
                init.name,
                init.method,
                setting,
                val,
                float(test.mean()) if ok else float("nan"),
                float(test.std()) if ok else float("nan"),
                len(ok),
                len(reports) - len(ok),
                tuple(float("nan") if rep.failed else rep.test_acc for rep in reports),
            )
            if best is None or (not math.isnan(val) and (math.isnan(best.val_mean) or val > best.val_mean)):
                best = row
        rows.append(best)
    return rows


def compare_csv(rows: Sequence[CompareRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CompareRow.CSV_HEADER)
    for r in rows:
        w.writerow(r.csv_row())
    return buf.getvalue()


@dataclass
class CompareResult:
    rows: list[CompareRow]
    runs: list[RunResult]

    @property
    def diverged(self) -> bool:
        return any(r.report.failed for r in self.runs)


def run_compare(spec: ExperimentSpec, data: Dataset | None = None, write: bool = True) -> CompareResult:
    data = data or load_dataset(spec)
    settings = spec.settings()
    logger.info("compare: %d initializers x %d settings x %d seeds", len(spec.initializers), len(settings), len(spec.seeds))
    runs = _run_all(spec, data, settings)
    result = CompareResult(select_settings(spec, runs), runs)
    if write:
        out = _outdir(spec)
        (out / "compare.csv").write_text(compare_csv(result.rows), encoding="utf-8")
        (out / "runs.csv").write_text(runs_csv(runs), encoding="utf-8")
    return result


def run_train(spec: ExperimentSpec, data: Dataset | None = None, write: bool = True) -> list[RunResult]:
    """Train every initializer and seed at the first grid setting."""
    data = data or load_dataset(spec)
    runs = _run_all(spec, data, spec.settings()[:1])
    if write:
        out = _outdir(spec)
        (out / "runs.csv").write_text(runs_csv(runs), encoding="utf-8")
        curves = out / "curves"
        curves.mkdir(exist_ok=True)
        for r in runs:
            (curves / f"{r.initializer}_seed{r.report.seed}.csv").write_text(r.report.loss_curve_csv(), encoding="utf-8")
    return runs


def plans_csv(plans: Sequence[InitPlan]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("method", "family", "layer", "fan_in", "fan_out", "variance"))
    for plan in plans:
        for l, ((m1, m2), v) in enumerate(zip(plan.dims.shapes(), plan.variances)):
            w.writerow([plan.method, plan.family, l, m1, m2, f"{v:.12e}"])
    return buf.getvalue()


def run_init_plan(spec: ExperimentSpec, data: Dataset | None = None, write: bool = True) -> list[InitPlan]:
    data = data or load_dataset(spec)
    cfg = _train_config(spec.settings()[0], spec.seeds[0])
    a = normalize_adjacency(data.graph)
    plans = [build_plan(i.method, data, cfg, spec.family, a).renamed(i.name) for i in spec.initializers]
    if write:
        (_outdir(spec) / "plans.csv").write_text(plans_csv(plans), encoding="utf-8")
    return plans


def probe_dims(spec: ExperimentSpec, data: Dataset) -> LayerDims:
    return LayerDims.uniform(data.features.shape[1], spec.probe_width, spec.probe_layers, data.num_classes)


def run_variance_probe(spec: ExperimentSpec, data: Dataset | None = None, write: bool = True) -> list[VarianceReport]:
    """Initialization-time variances of all six methods on one dataset."""
    data = data or load_dataset(spec)
    a = normalize_adjacency(data.graph)
    dims = probe_dims(spec, data)
    h0bar = feature_means(data.features)
    seeds = range(spec.seeds[0], spec.seeds[0] + spec.probe_seeds)

    def job(method):
        plan = make_plan(method, dims, a, h0bar, spec.family)
        return probe_variances(a, data.features, data.labels, plan, seeds)

    if spec.threads > 1:
        with ThreadPoolExecutor(max_workers=spec.threads) as pool:
            reports = list(pool.map(job, METHODS))
    else:
        reports = [job(m) for m in METHODS]
    if write:
        out = _outdir(spec)
        (out / "variance.csv").write_text(
            "".join(r.to_csv(header=(i == 0)) for i, r in enumerate(reports)), encoding="utf-8"
        )
        plot_variances(reports, out / "variance.svg", title=data.name)
    return reports


@dataclass
class AssumptionTables:
    dataset: str
    reports: list[CorrelationReport]
    softmax: Summary
    num_classes: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("statistic", "row", "length", "mean", "std", "count", "excluded"))
        for rep in self.reports:
            for l, s in rep.rows.items():
                w.writerow([rep.name, self.dataset, l, f"{s.mean:.6f}", f"{s.std:.6f}", s.count, s.excluded])
            for l, e in rep.expected.items():
                w.writerow([rep.name, "Expected", l, f"{e:.6f}", "", "", ""])
        s = self.softmax
        w.writerow(["softmax_entry", self.dataset, "", f"{s.mean:.6f}", f"{s.std:.6f}", s.count, s.excluded])
        w.writerow(["softmax_entry", "Expected", "", f"{1.0 / self.num_classes:.6f}", "", "", ""])
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = []
        for rep in self.reports:
            lengths = list(rep.rows)
            lines.append(f"### {rep.name}\n")
            lines.append("| dataset | " + " | ".join(f"l={l}" for l in lengths) + " |")
            lines.append("|---" * (len(lengths) + 1) + "|")
            lines.append(f"| {self.dataset} | " + " | ".join(str(rep.rows[l]) for l in lengths) + " |")
            lines.append("| Expected | " + " | ".join(f"{rep.expected[l]:.3g}" for l in lengths) + " |\n")
        lines.append("### softmax_entry\n")
        lines.append("| dataset | mean |")
        lines.append("|---|---|")
        lines.append(f"| {self.dataset} | {self.softmax} |")
        lines.append(f"| Expected | {1.0 / self.num_classes:.2f} |\n")
        return "\n".join(lines)


def run_assumptions(spec: ExperimentSpec, data: Dataset | None = None, write: bool = True) -> AssumptionTables:
    """Check the five modelling assumptions on a Xavier-initialized GCN."""
    data = data or load_dataset(spec)
    if data.graph.node_count < 1:
        raise SpecError("empty graph")
    a = normalize_adjacency(data.graph)
    dims = LayerDims.uniform(data.features.shape[1], spec.lab_hidden, spec.lab_layers, data.num_classes)
    params = Parameters.from_plan(make_plan("xavier", dims, family=spec.family), spec.lab_seed)
    lengths = tuple(l for l in (1, 2, 3) if l < dims.num_layers)
    lab = PathLab(a, data.features, params, lengths, spec.lab_paths, spec.lab_neurons, spec.lab_seed)
    lin, sq = check_assumption3(lab)
    tables = AssumptionTables(
        data.name,
        [check_assumption1(lab), check_assumption2(lab, spec.lab_seed), lin, sq, check_assumption4(lab)],
        check_assumption5(lab.trace.logits),
        data.num_classes,
    )
    if write:
        out = _outdir(spec)
        (out / "assumptions.csv").write_text(tables.to_csv(), encoding="utf-8")
        (out / "assumptions.md").write_text(tables.to_markdown(), encoding="utf-8")
    return tables


def _outdir(spec: ExperimentSpec) -> Path:
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    return out

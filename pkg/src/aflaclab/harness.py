"""Experiment orchestration: leave-one-domain-out sweeps over methods,
regularizer weights, and seeds, with validation-based selection.

Model selection never sees target-domain data: for each method the weight
with the highest mean best-validation accuracy across seeds wins (ties go
to the smaller weight). Target metrics are computed for every run but the
rows of non-selected weights are flagged.
"""

from __future__ import annotations

import configparser
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import datakit, nets
from .errors import EmptyGroupError, EmptyInputError, PreconditionError
from .infostats import (
    STATS_REPORT_HEADER,
    empirical_joint,
    mutual_information,
    stats_report_row,
)
from .objectives import (
    TrainConfig,
    fit,
    history_rows_csv,
    predict_classes,
    _stack_examples,
)

GAMMA_GRID_DEFAULT = (0.0001, 0.001, 0.01, 0.1, 1.0, 10.0)


@dataclass(frozen=True)
class ExperimentConfig:
    data_dir: str
    target_domain: str
    methods: tuple[str, ...] = ("cnn", "dan", "aflac_abl", "aflac")
    gammas: tuple[float, ...] = GAMMA_GRID_DEFAULT
    seeds: tuple[int, ...] = tuple(range(10))
    base: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "runs"
    val_fraction: float = 0.2
    workers: int = 1

    def __post_init__(self):
        if len(set(self.seeds)) != len(self.seeds):
            raise PreconditionError("seeds must be distinct")
        if not self.gammas and any(m != "cnn" for m in self.methods):
            raise PreconditionError("gamma grid must be nonempty for adversarial methods")


@dataclass
class RunResult:
    method: str
    gamma: float
    seed: int
    best_val_acc: float
    target_acc: float
    fmeasures: list[float]
    i_dy_bits: float
    history_path: str
    selected: bool = False


# ---------------------------------------------------------------- metrics


def evaluate(bundle, examples):
    """(accuracy, confusion[true, predicted]) of the classifier on examples."""
    if not examples:
        raise EmptyInputError("no examples to evaluate")
    x, y, _ = _stack_examples(examples, bundle.dtype)
    pred = predict_classes(bundle, x)
    n_classes = bundle.cls_spec.out_width()
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    return float((pred == y).mean()), confusion


def f1_per_class(confusion: np.ndarray) -> list[float]:
    out = []
    for c in range(confusion.shape[0]):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        out.append(2 * precision * recall / (precision + recall)
                   if precision + recall > 0 else 0.0)
    return out


def fmeasure_by_group(confusion: np.ndarray, groups) -> list[float]:
    """Mean per-class F1 of each class group, in percent."""
    f1 = f1_per_class(confusion)
    scores = []
    for group in groups:
        members = sorted(group)
        if not members:
            raise EmptyGroupError("empty class group")
        scores.append(100.0 * float(np.mean([f1[c] for c in members])))
    return scores


def relative_improvement(a: float, b: float) -> float:
    """100 * (a - b) / b, to one decimal."""
    if b <= 0:
        raise ZeroDivisionError("baseline must be positive")
    return round(100.0 * (a - b) / b, 1)


# ------------------------------------------------------------ single runs


def _run_one(datasets_dir: str, cfg: ExperimentConfig, method: str, gamma: float,
             seed: int) -> RunResult:
    datasets, _ = datakit.load_dataset(datasets_dir)
    train, val, target = datakit.lodo_split(
        datasets, cfg.target_domain, val_fraction=cfg.val_fraction, seed=seed)
    train, _ = datakit.reindex_domains(train)
    val, _ = datakit.reindex_domains(val)
    sources_joint = empirical_joint(train + val)
    align_joint = empirical_joint(train)
    tc = replace(cfg.base, method=method, gamma=gamma, seed=seed)
    bundle, history = fit(tc, train, val, alignment_source=align_joint)

    target_acc, confusion = evaluate(bundle, target)
    run_dir = Path(cfg.out_dir) / method / f"g{gamma:g}" / f"s{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "history.csv").write_text(history_rows_csv(history))
    nets.save_checkpoint(run_dir / "model.ckpt", bundle.to_arrays())
    (run_dir / "stats.csv").write_text(
        STATS_REPORT_HEADER + "\n"
        + stats_report_row(Path(datasets_dir).name, str(cfg.target_domain), sources_joint)
        + "\n")
    return RunResult(
        method=method,
        gamma=gamma,
        seed=seed,
        best_val_acc=max(h.val_acc for h in history),
        target_acc=target_acc,
        fmeasures=f1_per_class(confusion),
        i_dy_bits=mutual_information(sources_joint, base=2),
        history_path=str(run_dir / "history.csv"),
    )


def _run_one_args(args):
    return _run_one(*args)


# ----------------------------------------------------------- experiments


def select_gammas(results: list[RunResult]) -> dict[str, float]:
    """Per method: the gamma with highest mean best-validation accuracy.

    Ties break toward the smaller gamma. Only validation columns are
    consulted; target metrics never influence the choice.
    """
    by_mg: dict[tuple[str, float], list[float]] = {}
    for r in results:
        by_mg.setdefault((r.method, r.gamma), []).append(r.best_val_acc)
    chosen: dict[str, float] = {}
    for method in {m for m, _ in by_mg}:
        cands = sorted(g for m, g in by_mg if m == method)
        means = [float(np.mean(by_mg[(method, g)])) for g in cands]
        best = max(means)
        chosen[method] = cands[means.index(best)]  # first index = smallest gamma
    return chosen


def run_experiment(cfg: ExperimentConfig) -> list[RunResult]:
    """All (method, gamma, seed) fits, selection, and summary persistence."""
    jobs = []
    for method in cfg.methods:
        gammas = (0.0,) if method == "cnn" else cfg.gammas
        for gamma in gammas:
            for seed in cfg.seeds:
                jobs.append((cfg.data_dir, cfg, method, gamma, seed))
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    partial_path = out_dir / "results.partial.csv"
    results: list[RunResult] = []
    with open(partial_path, "w") as partial:
        partial.write(results_header(n_classes=None) + "\n")
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                for res in pool.map(_run_one_args, jobs):
                    results.append(res)
                    partial.write(result_row(res) + "\n")
                    partial.flush()
        else:
            for job in jobs:
                res = _run_one_args(job)
                results.append(res)
                partial.write(result_row(res) + "\n")
                partial.flush()
    chosen = select_gammas(results)
    for r in results:
        r.selected = (r.method == "cnn") or (chosen.get(r.method) == r.gamma)
    write_results_csv(results, out_dir / "results.csv")
    return results


def results_header(n_classes: int | None) -> str:
    cols = ["method", "gamma", "seed", "best_val_acc", "target_acc", "i_dy_bits",
            "selected"]
    if n_classes:
        cols += [f"f1_{c}" for c in range(n_classes)]
    else:
        cols += ["fmeasures"]
    return ",".join(cols)


def result_row(r: RunResult) -> str:
    f = ";".join(f"{v:.6f}" for v in r.fmeasures)
    return (f"{r.method},{r.gamma:g},{r.seed},{r.best_val_acc:.6f},"
            f"{r.target_acc:.6f},{r.i_dy_bits:.6f},{int(r.selected)},{f}")


def write_results_csv(results: list[RunResult], path) -> None:
    lines = [results_header(n_classes=None)]
    lines += [result_row(r) for r in results]
    Path(path).write_text("\n".join(lines) + "\n")


def read_results_csv(path) -> list[RunResult]:
    lines = Path(path).read_text().strip().splitlines()
    out = []
    for line in lines[1:]:
        parts = line.split(",")
        out.append(RunResult(
            method=parts[0],
            gamma=float(parts[1]),
            seed=int(parts[2]),
            best_val_acc=float(parts[3]),
            target_acc=float(parts[4]),
            i_dy_bits=float(parts[5]),
            selected=bool(int(parts[6])),
            fmeasures=[float(v) for v in parts[7].split(";")] if parts[7] else [],
            history_path="",
        ))
    return out


# -------------------------------------------------------- sensitivity plot

GAMMA_SENSITIVITY_HEADER = "method,gamma,mean_target_acc,stderr,selected"


def emit_gamma_sensitivity(results: list[RunResult]) -> str:
    """Plot-data rows: per (method, gamma), mean target accuracy with the
    standard error over seeds and the selection marker."""
    if len({r.gamma for r in results}) < 2:
        raise PreconditionError("need at least two gamma values for a sensitivity curve")
    by_mg: dict[tuple[str, float], list[RunResult]] = {}
    for r in results:
        by_mg.setdefault((r.method, r.gamma), []).append(r)
    lines = [GAMMA_SENSITIVITY_HEADER]
    for method, gamma in sorted(by_mg):
        rs = by_mg[(method, gamma)]
        accs = [r.target_acc for r in rs]
        mean = float(np.mean(accs))
        stderr = float(np.std(accs, ddof=1) / math.sqrt(len(accs))) if len(accs) > 1 else 0.0
        selected = int(all(r.selected for r in rs))
        lines.append(f"{method},{gamma:g},{mean:.6f},{stderr:.6f},{selected}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------ config files


def parse_experiment_config(path) -> ExperimentConfig:
    """Read the key=value sections of an experiment file."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(path)
    exp = cp["experiment"]
    tr = cp["train"] if cp.has_section("train") else {}

    def _floats(s):
        return tuple(float(v.strip()) for v in s.split(",") if v.strip())

    def _ints(s):
        return tuple(int(v.strip()) for v in s.split(",") if v.strip())

    base = TrainConfig(
        method="cnn",
        lr=float(tr.get("lr", 5e-4)),
        batch_size=int(tr.get("batch", 128)),
        iterations=int(tr.get("iterations", 10000)),
        anneal=str(tr.get("anneal", "true")).lower() in ("1", "true", "yes"),
        alpha=float(tr.get("alpha", 0.0)),
        k_disc=int(tr.get("k_disc", 1)),
        eval_interval=int(tr.get("eval_interval", 0)),
        dtype=str(tr.get("dtype", "float32")),
        lr_decay_steps=_ints(tr.get("lr_decay_steps", "")),
        lr_decay_rate=float(tr.get("lr_decay_rate", 0.1)),
    )
    return ExperimentConfig(
        data_dir=exp["data"],
        target_domain=exp.get("target", "M0"),
        methods=tuple(m.strip() for m in exp.get("methods", "cnn").split(",") if m.strip()),
        gammas=_floats(exp.get("gammas", "0.0001,0.001,0.01,0.1,1,10")),
        seeds=_ints(exp.get("seeds", "0")),
        base=base,
        out_dir=exp.get("out", "runs"),
        val_fraction=float(exp.get("val_fraction", 0.2)),
        workers=int(exp.get("workers", 1)),
    )

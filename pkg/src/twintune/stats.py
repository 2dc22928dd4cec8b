"""TTA inference, accuracy / weighted F1, multi-run aggregation, and
unequal-variance significance comparisons between model configurations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from scipy import stats as scipy_stats

from .augment import TrainPolicy, tta_views

NULL_KINDS = ("le", "eq")


@dataclass(frozen=True)
class RunMetrics:
    """Test metrics of one seeded training run."""

    seed: int
    accuracy: float
    weighted_f1: float
    per_class_f1: tuple[float, ...] = ()
    run_id: str = ""
    config_hash: str = ""


@dataclass(frozen=True)
class SummaryStat:
    """Sample mean/std (ddof=1) of one metric over n runs."""

    mean: float
    std: float
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("summary statistics need n >= 2 runs")
        if self.std < 0:
            raise ValueError("std must be nonnegative")


@dataclass(frozen=True)
class MetricsSummary:
    accuracy: SummaryStat
    weighted_f1: SummaryStat


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p: float
    degenerate: bool = False


@dataclass(frozen=True)
class ComparisonResult:
    """Outcome of testing model a against model b.

    With the one-sided null ("le": a is at most b) the verdict is "greater"
    only when every compared metric rejects at ``alpha``; otherwise, and for
    the two-sided equality null, it is "equal-undetermined".
    """

    a: str
    b: str
    null: str
    alpha: float
    p_accuracy: float | None
    p_f1: float | None
    verdict: str
    degenerate: bool = False


def accuracy(preds: Sequence, labels: Sequence) -> float:
    preds, labels = list(preds), list(labels)
    if not labels or len(preds) != len(labels):
        raise ValueError("need equal-length, non-empty predictions and labels")
    return sum(p == l for p, l in zip(preds, labels)) / len(labels)


def per_class_f1(preds: Sequence, labels: Sequence, classes: Sequence) -> np.ndarray:
    """F1 per declared class, with F1 = 0 whenever precision + recall = 0."""
    preds, labels = list(preds), list(labels)
    if not labels or len(preds) != len(labels):
        raise ValueError("need equal-length, non-empty predictions and labels")
    out = np.zeros(len(classes))
    for j, cls in enumerate(classes):
        tp = sum(1 for p, l in zip(preds, labels) if p == cls and l == cls)
        fp = sum(1 for p, l in zip(preds, labels) if p == cls and l != cls)
        fn = sum(1 for p, l in zip(preds, labels) if p != cls and l == cls)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        out[j] = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return out


def weighted_f1(preds: Sequence, labels: Sequence, classes: Sequence) -> float:
    """Per-class F1 averaged with the label-set class frequencies as weights.

    A class never observed in the labels has weight 0 and cannot contribute,
    whatever the predictions do.
    """
    f1 = per_class_f1(preds, labels, classes)
    labels = list(labels)
    weights = np.array([sum(1 for l in labels if l == cls) for cls in classes], dtype=float)
    weights /= len(labels)
    return float(np.dot(weights, f1))


def predict_tta(
    model: torch.nn.Module,
    img: np.ndarray,
    k: int = 3,
    *,
    seed: int = 0,
    sample_index: int = 0,
    policy: TrainPolicy | None = None,
) -> tuple[np.ndarray, int]:
    """Mean softmax over k augmented views; prediction is its argmax."""
    views = tta_views(img, k, policy, seed=seed, sample_index=sample_index)
    batch = torch.from_numpy(np.stack(views).transpose(0, 3, 1, 2)).float()
    was_training = model.training
    model.eval()
    with torch.no_grad():
        probs = torch.softmax(model(batch), dim=1).mean(dim=0)
    model.train(was_training)
    probs = probs.numpy()
    return probs, int(np.argmax(probs))


def aggregate(runs: Sequence[RunMetrics]) -> MetricsSummary:
    """Mean and sample std (ddof=1) of both metrics over a run batch."""
    if len(runs) < 2:
        raise ValueError("aggregation needs at least 2 runs")
    acc = np.array([r.accuracy for r in runs], dtype=float)
    f1 = np.array([r.weighted_f1 for r in runs], dtype=float)
    return MetricsSummary(
        accuracy=SummaryStat(float(acc.mean()), float(acc.std(ddof=1)), len(runs)),
        weighted_f1=SummaryStat(float(f1.mean()), float(f1.std(ddof=1)), len(runs)),
    )


def welch_test(a: SummaryStat, b: SummaryStat, null: str = "le") -> WelchResult:
    """Unequal-variance t comparison of two summarized samples.

    null="le" tests the hypothesis that a's population mean is at most b's
    (small p supports a > b); null="eq" is the two-sided version. Degrees of
    freedom follow the standard unequal-variance approximation. Zero
    variance on both sides with equal means returns p = 1, flagged.
    """
    if null not in NULL_KINDS:
        raise ValueError(f"null must be one of {NULL_KINDS}")
    va, vb = a.std**2 / a.n, b.std**2 / b.n
    se2 = va + vb
    if se2 == 0.0:
        if a.mean == b.mean:
            return WelchResult(t=0.0, df=math.nan, p=1.0, degenerate=True)
        t = math.inf if a.mean > b.mean else -math.inf
        if null == "le":
            p = 0.0 if t > 0 else 1.0
        else:
            p = 0.0
        return WelchResult(t=t, df=math.nan, p=p, degenerate=True)
    df = se2**2 / (va**2 / (a.n - 1) + vb**2 / (b.n - 1))
    t = (a.mean - b.mean) / math.sqrt(se2)
    if null == "le":
        p = float(scipy_stats.t.sf(t, df))
    else:
        p = float(2.0 * scipy_stats.t.sf(abs(t), df))
    return WelchResult(t=t, df=df, p=p)


def _as_summary(x: "Sequence[RunMetrics] | MetricsSummary") -> MetricsSummary:
    if isinstance(x, MetricsSummary):
        return x
    return aggregate(x)


def compare(
    a: "Sequence[RunMetrics] | MetricsSummary",
    b: "Sequence[RunMetrics] | MetricsSummary",
    null: str = "le",
    *,
    alpha: float = 0.01,
    name_a: str = "a",
    name_b: str = "b",
) -> ComparisonResult:
    """Compare two run batches (or published summaries) on both metrics."""
    sa, sb = _as_summary(a), _as_summary(b)
    acc = welch_test(sa.accuracy, sb.accuracy, null)
    f1 = welch_test(sa.weighted_f1, sb.weighted_f1, null)
    significant = acc.p < alpha and f1.p < alpha
    verdict = "greater" if null == "le" and significant else "equal-undetermined"
    return ComparisonResult(
        a=name_a,
        b=name_b,
        null=null,
        alpha=alpha,
        p_accuracy=acc.p,
        p_f1=f1.p,
        verdict=verdict,
        degenerate=acc.degenerate or f1.degenerate,
    )


METRICS_HEADER = ["run_id", "seed", "config_hash", "accuracy", "weighted_f1", "per_class_f1"]


def write_metrics_csv(path: str | Path, runs: Sequence[RunMetrics]) -> None:
    lines = [",".join(METRICS_HEADER)]
    for r in runs:
        per_class = ";".join(repr(float(v)) for v in r.per_class_f1)
        lines.append(
            f"{r.run_id},{r.seed},{r.config_hash},{r.accuracy!r},{r.weighted_f1!r},{per_class}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics_csv(path: str | Path) -> list[RunMetrics]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split(",") != METRICS_HEADER:
        raise ValueError(f"{path}: not a metrics CSV")
    runs = []
    for line in lines[1:]:
        run_id, seed, config_hash, acc, f1, per_class = line.split(",")
        pcf = tuple(float(v) for v in per_class.split(";")) if per_class else ()
        runs.append(
            RunMetrics(
                seed=int(seed),
                accuracy=float(acc),
                weighted_f1=float(f1),
                per_class_f1=pcf,
                run_id=run_id,
                config_hash=config_hash,
            )
        )
    return runs


def _fmt(x: float | None) -> str:
    if x is None:
        return "-"
    return f"{x:.6g}"


def render_report(
    runs_by_config: Mapping[str, Sequence[RunMetrics]],
    comparisons: Sequence[ComparisonResult] = (),
) -> str:
    """Deterministic Markdown: one summary row per configuration, then the
    pairwise comparison table."""
    if not runs_by_config:
        raise ValueError("nothing to report")
    lines = ["# Results", "", "## Summaries", ""]
    lines.append("| configuration | n | accuracy (mean +/- std) | weighted F1 (mean +/- std) |")
    lines.append("|---|---|---|---|")
    for name in sorted(runs_by_config):
        runs = runs_by_config[name]
        if len(runs) >= 2:
            s = aggregate(runs)
            acc = f"{_fmt(s.accuracy.mean)} +/- {_fmt(s.accuracy.std)}"
            f1 = f"{_fmt(s.weighted_f1.mean)} +/- {_fmt(s.weighted_f1.std)}"
            n = s.accuracy.n
        else:
            (r,) = runs
            acc, f1, n = _fmt(r.accuracy), _fmt(r.weighted_f1), 1
        lines.append(f"| {name} | {n} | {acc} | {f1} |")
    if comparisons:
        lines += ["", "## Comparisons", ""]
        lines.append("| a | b | null | p (accuracy) | p (F1) | verdict |")
        lines.append("|---|---|---|---|---|---|")
        for c in comparisons:
            lines.append(
                f"| {c.a} | {c.b} | {c.null} | {_fmt(c.p_accuracy)} | {_fmt(c.p_f1)} | {c.verdict} |"
            )
    return "\n".join(lines) + "\n"


def emit_report(
    out_dir: str | Path,
    runs_by_config: Mapping[str, Sequence[RunMetrics]],
    comparisons: Sequence[ComparisonResult] = (),
    *,
    schedule_config=None,
    lr_curve: tuple[Sequence[float], Sequence[float]] | None = None,
) -> Path:
    """Write report.md, metrics.csv, and static plots under ``out_dir``.

    Fails before creating anything when there are no results. Rendering is
    deterministic, so re-running over the same inputs reproduces identical
    bytes.
    """
    if not runs_by_config:
        raise ValueError("nothing to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = out_dir / "report.md"
    report.write_text(render_report(runs_by_config, comparisons))
    all_runs = [r for name in sorted(runs_by_config) for r in runs_by_config[name]]
    write_metrics_csv(out_dir / "metrics.csv", all_runs)

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plots = out_dir / "plots"
    plots.mkdir(exist_ok=True)

    fig, ax = plt.subplots(figsize=(8, 4))
    width = 0.8 / max(1, len(runs_by_config))
    for i, name in enumerate(sorted(runs_by_config)):
        runs = runs_by_config[name]
        if not runs or not runs[0].per_class_f1:
            continue
        mat = np.array([r.per_class_f1 for r in runs])
        means = mat.mean(axis=0)
        ax.bar(np.arange(len(means)) + i * width, means, width=width, label=name)
    ax.set_xlabel("class index")
    ax.set_ylabel("F1")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(plots / "per_class_f1.png", dpi=100)
    plt.close(fig)

    if schedule_config is not None:
        from .schedule import schedule_curve

        steps, lrs, momenta = schedule_curve(schedule_config)
        fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
        axes[0].plot(steps, lrs)
        axes[0].set_ylabel("lr")
        axes[1].plot(steps, momenta)
        axes[1].set_ylabel("momentum")
        axes[1].set_xlabel("step")
        fig.tight_layout()
        fig.savefig(plots / "schedule.png", dpi=100)
        plt.close(fig)

    if lr_curve is not None:
        lrs, losses = lr_curve
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.plot(lrs, losses)
        ax.set_xscale("log")
        ax.set_xlabel("learning rate")
        ax.set_ylabel("smoothed loss")
        fig.tight_layout()
        fig.savefig(plots / "lr_find.png", dpi=100)
        plt.close(fig)
    return report

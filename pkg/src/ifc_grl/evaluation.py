"""Evaluation reports and the ablation driver."""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .dataset import BimObject, ClassLabel, DatasetSplit
from .metrics import MetricsReport, confusion_matrix, confusion_rate_table, metrics, per_class_accuracy
from .model import GRModel, VARIANTS, save_model
from .training import History, TrainConfig, predict, train

logger = logging.getLogger(__name__)

ABLATION_NAMES = OrderedDict([
    ("full", "full"),
    ("geometric_only", "w/o relational"),
    ("relational_only", "w/o geometric"),
    ("no_fusion", "w/o fusion"),
])


@dataclass
class Evaluation:
    cm: np.ndarray
    report: MetricsReport
    rates: List[Tuple[Tuple[int, int], float]]


def evaluate(model: GRModel, objects: Sequence[BimObject]) -> Evaluation:
    labels = [int(o.label) for o in objects]
    cm = confusion_matrix(predict(model, objects), labels, model.n_classes)
    return Evaluation(cm, metrics(cm), confusion_rate_table(cm))


def _name(code: int) -> str:
    try:
        return ClassLabel(code).name
    except ValueError:
        return f"class{code}"


def format_text(ev: Evaluation, title: str = "") -> str:
    r = ev.report
    lines = []
    if title:
        lines += [title, ""]
    lines += [
        f"{'Accuracy':<20}{r.accuracy:.4f}",
        f"{'Balanced accuracy':<20}{r.balanced_accuracy:.4f}",
        f"{'Precision':<20}{r.precision:.4f}",
        f"{'Recall':<20}{r.recall:.4f}",
        f"{'F1 score':<20}{r.f1:.4f}",
        "",
        f"{'Object type':<18}{'Total':>7}{'Correct':>9}{'Accuracy(%)':>13}",
    ]
    total = correct = 0
    for code, n, ok in per_class_accuracy(ev.cm):
        if n == 0:
            continue
        total += n
        correct += ok
        lines.append(f"{_name(code):<18}{n:>7}{ok:>9}{100.0 * ok / n:>13.1f}")
    lines.append(f"{'Total':<18}{total:>7}{correct:>9}{100.0 * correct / max(total, 1):>13.1f}")
    lines += ["", f"{'Type 1':<18}{'Type 2':<18}{'Confusion rate(%)':>18}"]
    for (a, b), rate in ev.rates:
        lines.append(f"{_name(a):<18}{_name(b):<18}{100.0 * rate:>18.1f}")
    return "\n".join(lines) + "\n"


def format_kv(ev: Evaluation) -> str:
    lines = [f"{k}={v!r}" for k, v in ev.report.as_dict().items()]
    lines.append("confusion_matrix=" + ";".join(",".join(map(str, row)) for row in ev.cm.tolist()))
    for (a, b), rate in ev.rates:
        lines.append(f"confusion_rate.{_name(a)}.{_name(b)}={rate!r}")
    return "\n".join(lines) + "\n"


def write_report(ev: Evaluation, path: Union[str, Path], title: str = "") -> Tuple[Path, Path]:
    """Text table at ``path`` and key=value lines at ``path`` + ``.kv``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kv_path = path.with_name(path.name + ".kv")
    path.write_text(format_text(ev, title), encoding="utf-8")
    kv_path.write_text(format_kv(ev), encoding="utf-8")
    return path, kv_path


def format_history(history: History) -> str:
    lines = ["epoch\ttrain_loss\ttest_accuracy"]
    lines += [f"{r.epoch}\t{r.train_loss!r}\t{r.test_accuracy!r}" for r in history.epochs]
    lines.append(f"best_epoch\t{history.best_epoch}")
    return "\n".join(lines) + "\n"


def ablation_suite(split: DatasetSplit, config: TrainConfig, out_dir: Union[str, Path, None] = None,
                   variants: Sequence[str] = VARIANTS,
                   relation_transform: str = "log1p") -> "OrderedDict[str, Tuple[Evaluation, History]]":
    """Train every variant with the same seed and configuration."""
    results: "OrderedDict[str, Tuple[Evaluation, History]]" = OrderedDict()
    for variant in variants:
        model = GRModel(variant, config.seed, relation_transform=relation_transform)
        history = train(model, split, config)
        ev = evaluate(model, split.test)
        results[variant] = (ev, history)
        logger.info("%s: accuracy %.4f", variant, ev.report.accuracy)
        if out_dir is not None:
            vdir = Path(out_dir) / variant
            save_model(model, vdir)
            (vdir / "history.txt").write_text(format_history(history), encoding="utf-8")
    if out_dir is not None:
        Path(out_dir, "ablation.txt").write_text(format_ablation(results), encoding="utf-8")
        kv = []
        for variant, (ev, _) in results.items():
            kv += [f"{variant}.{k}={v!r}" for k, v in ev.report.as_dict().items()]
        Path(out_dir, "ablation.kv").write_text("\n".join(kv) + "\n", encoding="utf-8")
    return results


def format_ablation(results: Dict[str, Tuple[Evaluation, History]]) -> str:
    header = f"{'Model':<18}{'Accuracy':>10}{'Bal. acc':>10}{'Precision':>11}{'Recall':>9}{'F1':>9}"
    lines = [header]
    for variant in ("relational_only", "geometric_only", "no_fusion", "full"):
        if variant not in results:
            continue
        r = results[variant][0].report
        lines.append(f"{ABLATION_NAMES[variant]:<18}{r.accuracy:>10.4f}{r.balanced_accuracy:>10.4f}"
                     f"{r.precision:>11.4f}{r.recall:>9.4f}{r.f1:>9.4f}")
    return "\n".join(lines) + "\n"

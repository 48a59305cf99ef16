"""AUROC evaluation and strategy-by-dataset reports."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import SplitManifest, load_image

log = logging.getLogger(__name__)

MISSING = "—"


class EvaluationError(ValueError):
    pass


@dataclass
class ScoredSet:
    scores: list[float]
    labels: list[int]
    dataset_name: str = ""
    strategy: str = "clap"


def compute_auroc(scores, labels=None) -> float:
    """Area under the ROC curve, trapezoidal over tie-grouped thresholds.

    Tied scores sit on one threshold, so ties contribute half credit, the
    same as Mann-Whitney pair counting. Accumulation is done in integer
    counts and divided once at the end.
    """
    if isinstance(scores, ScoredSet):
        scores, labels = scores.scores, scores.labels
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("AUROC needs both normal and abnormal samples")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each tie group in descending-score order
    ends = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[ends]
    fp = np.cumsum(1 - y)[ends]
    tp = np.r_[0, tp]
    fp = np.r_[0, fp]
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    return twice_area / (2 * n_pos * n_neg)


def auroc_bruteforce(scores, labels) -> float:
    """O(n^2) pair counting with half credit for ties."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    pos, neg = s[y == 1], s[y == 0]
    if not len(pos) or not len(neg):
        raise EvaluationError("AUROC needs both normal and abnormal samples")
    diff = pos[:, None] - neg[None, :]
    twice_wins = 2 * int((diff > 0).sum()) + int((diff == 0).sum())
    return twice_wins / (2 * len(pos) * len(neg))


@dataclass
class EvalReport:
    strategy: str
    per_dataset: dict[str, float]
    config_digest: str = ""
    failures: dict[str, int] = field(default_factory=dict)

    @property
    def average(self) -> float:
        vals = list(self.per_dataset.values())
        return float(np.mean(vals)) if vals else float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["average"] = self.average
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["strategy"], dict(d["per_dataset"]), d.get("config_digest", ""),
                   dict(d.get("failures", {})))


@dataclass
class ImageResult:
    path: str
    label: str
    score: float
    threshold: float | None
    mask_fraction: float
    dataset: str = ""


def evaluate(
    manifests: SplitManifest | Sequence[SplitManifest],
    scorer: Callable[[np.ndarray, str, int], object],
    strategy: str,
    image_side: int | None = None,
    config_digest: str = "",
) -> tuple[EvalReport, list[ImageResult]]:
    """Score every test record and compute per-dataset AUROC.

    ``scorer(image, strategy, index)`` returns a pipeline result with
    ``score``, ``threshold`` and ``mask``. Unreadable images are skipped and
    counted in ``report.failures``.
    """
    if isinstance(manifests, SplitManifest):
        manifests = [manifests]
    per_dataset, failures, results = {}, {}, []
    for m in manifests:
        test = m.subset("test")
        if len({r.label for r in test}) < 2:
            raise EvaluationError(f"{m.dataset_name}: test split needs both classes")
        scores, labels, failed = [], [], 0
        for i, rec in enumerate(test):
            try:
                img = load_image(rec.image_path, image_side)
            except (OSError, ValueError) as exc:
                log.warning("skipping %s: %s", rec.image_path, exc)
                failed += 1
                continue
            res = scorer(img, strategy, i)
            thr = None if np.isnan(res.threshold) else float(res.threshold)
            results.append(ImageResult(rec.image_path, rec.label, float(res.score), thr,
                                       res.mask.selected_fraction, m.dataset_name))
            scores.append(res.score)
            labels.append(rec.target)
        per_dataset[m.dataset_name] = compute_auroc(ScoredSet(scores, labels, m.dataset_name, strategy))
        failures[m.dataset_name] = failed + m.skipped
    return EvalReport(strategy, per_dataset, config_digest, failures), results


# ---------------------------------------------------------------------------
# rendering


def _grid(reports: Sequence[EvalReport]) -> tuple[list[str], list[list[str]]]:
    datasets: list[str] = []
    for r in reports:
        for name in r.per_dataset:
            if name not in datasets:
                datasets.append(name)
    header = ["Strategy", *datasets, "Average"]
    rows = []
    for r in reports:
        cells = [f"{100 * r.per_dataset[d]:.2f}" if d in r.per_dataset else MISSING
                 for d in datasets]
        rows.append([r.strategy.upper(), *cells, f"{100 * r.average:.2f}"])
    return header, rows


def render_csv(reports: Sequence[EvalReport]) -> str:
    header, rows = _grid(reports)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def render_text(reports: Sequence[EvalReport]) -> str:
    header, rows = _grid(reports)
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    line = lambda cells: " | ".join(str(c).rjust(w) for c, w in zip(cells, widths))
    out = [line(header), "-+-".join("-" * w for w in widths)]
    out += [line(r) for r in rows]
    return "\n".join(out) + "\n"


def render_json(reports: Sequence[EvalReport]) -> str:
    return json.dumps({"reports": [r.to_dict() for r in reports]}, indent=2, sort_keys=True) + "\n"


def parse_json(text: str) -> list[EvalReport]:
    return [EvalReport.from_dict(d) for d in json.loads(text)["reports"]]


def render_report(reports: EvalReport | Sequence[EvalReport], fmt: str = "text") -> str:
    if isinstance(reports, EvalReport):
        reports = [reports]
    return {"text": render_text, "csv": render_csv, "json": render_json}[fmt](reports)


def write_reports(reports: Sequence[EvalReport], out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(render_json(reports))
    (out / "report.csv").write_text(render_csv(reports))
    (out / "report.txt").write_text(render_text(reports))

"""Interaction-count evaluation: IoU, clicks-to-threshold, and aggregation.

The central measurement is how many simulated corrective clicks a model
needs before its mask reaches an IoU threshold, capped (default 20). One
session per sample is run to the cap and every per-click IoU recorded, so
counts for all thresholds derive from a single trajectory — which also makes
the count monotone in the threshold by construction. A sample whose final
IoU still sits below the threshold at the cap counts as a failure for that
threshold; reaching it exactly at the last click is a success.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .clicksim import next_click
from .errors import ConfigError, NoErrorPixels, ShapeError


def iou(pred, gt) -> float:
    """Intersection over union of two binary masks; both empty -> 1.0."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    p = pred != 0
    g = gt != 0
    union = int((p | g).sum())
    if union == 0:
        return 1.0
    return int((p & g).sum()) / union


@dataclass
class EvalConfig:
    thresholds: tuple = (0.85, 0.90, 0.95)
    click_cap: int = 20

    def __post_init__(self):
        self.thresholds = tuple(float(t) for t in self.thresholds)
        if not self.thresholds:
            raise ConfigError("need at least one IoU threshold")
        if list(self.thresholds) != sorted(self.thresholds):
            raise ConfigError(f"thresholds must ascend: {self.thresholds}")
        if any(not 0.0 < t <= 1.0 for t in self.thresholds):
            raise ConfigError(f"thresholds must lie in (0, 1]: {self.thresholds}")
        if self.click_cap < 1:
            raise ConfigError("click_cap must be >= 1")


def record_session(model, image: np.ndarray, gt: np.ndarray,
                   cap: int = 20) -> tuple[list, list[float]]:
    """Run one interactive session to the click cap.

    Encodes once, then repeatedly asks the simulator for the next corrective
    click and re-predicts. Returns (clicks placed, IoU after each click);
    both lists stop early if the prediction becomes exact.
    """
    gt = np.asarray(gt)
    taps = model.encode(np.asarray(image, dtype=np.float32)[None])
    prev = np.zeros(gt.shape, dtype=np.uint8)
    clicks = []
    ious = []
    for _ in range(cap):
        try:
            clicks.append(next_click(prev, gt))
        except NoErrorPixels:
            break
        prev = model.predict(taps, clicks, prev)
        ious.append(iou(prev, gt))
    return clicks, ious


def click_trajectory(model, image: np.ndarray, gt: np.ndarray,
                     cap: int = 20) -> list[float]:
    """Per-click IoUs, padded with 1.0 up to the cap when a session ends
    early on an exact prediction (no further model calls happen)."""
    _, ious = record_session(model, image, gt, cap)
    return ious + [1.0] * (cap - len(ious))


def noc_from_trajectory(ious: list[float], threshold: float) -> tuple[int, bool]:
    """(clicks needed, success) for one threshold given a session's IoUs."""
    for k, value in enumerate(ious, start=1):
        if value >= threshold:
            return k, True
    return len(ious), False


def noc(model, image, gt, threshold: float, cap: int = 20) -> tuple[int, float]:
    """Clicks until IoU >= threshold (capped) and the IoU when stopping."""
    ious = click_trajectory(model, image, gt, cap)
    clicks, _ = noc_from_trajectory(ious, threshold)
    return clicks, ious[clicks - 1]


@dataclass
class EvalReport:
    thresholds: tuple
    click_cap: int
    records: list = field(default_factory=list)
    skipped: list = field(default_factory=list)  # (sample id, reason)

    def add(self, sample_id: str, class_label: str, ious: list[float]) -> None:
        nocs, successes = {}, {}
        for t in self.thresholds:
            n, ok = noc_from_trajectory(ious, t)
            nocs[t], successes[t] = n, ok
        self.records.append({
            "id": sample_id,
            "class_label": class_label,
            "ious": [float(v) for v in ious],
            "noc": nocs,
            "success": successes,
        })

    def class_labels(self) -> list[str]:
        return sorted({r["class_label"] for r in self.records})

    def _select(self, class_label=None):
        if class_label is None:
            return self.records
        return [r for r in self.records if r["class_label"] == class_label]

    def mean_noc(self, threshold: float, class_label: str | None = None) -> float:
        rows = self._select(class_label)
        if not rows:
            return float("nan")
        return float(np.mean([r["noc"][threshold] for r in rows]))

    def failure_count(self, threshold: float, class_label: str | None = None) -> int:
        return sum(not r["success"][threshold] for r in self._select(class_label))

    def summary_rows(self) -> list[dict]:
        rows = []
        for label in self.class_labels() + [None]:
            row = {"class_label": label if label is not None else "overall",
                   "samples": len(self._select(label))}
            for t in self.thresholds:
                row[f"mean_noc@{t:g}"] = round(self.mean_noc(t, label), 4)
                row[f"failures@{t:g}"] = self.failure_count(t, label)
            rows.append(row)
        return rows

    def to_text(self) -> str:
        lines = [f"samples={len(self.records)} skipped={len(self.skipped)} "
                 f"cap={self.click_cap}"]
        for row in self.summary_rows():
            cells = [f"{row['class_label']:<12} n={row['samples']:<4}"]
            for t in self.thresholds:
                cells.append(f"NoC@{t:g}={row[f'mean_noc@{t:g}']:.3f} "
                             f"fail={row[f'failures@{t:g}']}")
            lines.append("  ".join(cells))
        for sid, reason in self.skipped:
            lines.append(f"skipped {sid}: {reason}")
        return "\n".join(lines)

    def write(self, records_path, summary_path) -> None:
        with open(records_path, "w") as fh:
            for r in self.records:
                flat = dict(r)
                flat["noc"] = {f"{t:g}": v for t, v in r["noc"].items()}
                flat["success"] = {f"{t:g}": v for t, v in r["success"].items()}
                fh.write(json.dumps(flat) + "\n")
        summary = {
            "thresholds": list(self.thresholds),
            "click_cap": self.click_cap,
            "rows": self.summary_rows(),
            "skipped": [{"id": s, "reason": r} for s, r in self.skipped],
        }
        with open(summary_path, "w") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")


def evaluate_dataset(model, samples, config: EvalConfig | None = None,
                     skipped: list | None = None) -> EvalReport:
    """Run capped click sessions over every sample and aggregate.

    `skipped` carries (id, reason) pairs for samples the caller could not
    load; they are reported, never silently dropped.
    """
    config = config or EvalConfig()
    report = EvalReport(config.thresholds, config.click_cap,
                        skipped=list(skipped or []))
    for sample in samples:
        ious = click_trajectory(model, sample.image, sample.mask, config.click_cap)
        report.add(sample.id, sample.class_label, ious)
    return report

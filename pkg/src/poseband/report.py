"""Coverage and sharpness metrics, volume estimation, method comparison.

The interval-score metric reuses the training loss implementation verbatim,
so evaluating it on the same arrays gives bit-equal numbers. Report JSON
excludes wall-clock timings (those go to a sibling timings file) so that
identical (config, seed) runs produce byte-identical report artifacts.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInput, ValidationError
from .geometry import POSE_DIMS
from .methods.cqr import IntervalBand
from .nn import interval_score_loss
from .regions import BallUnion, BinUnionProduct, Box
from .rng import stream

REPORT_SCHEMA_VERSION = 1


def coverage_metrics(inside: np.ndarray, joint_inside: np.ndarray | None = None):
    """Per-dimension and joint coverage from a boolean membership matrix.

    ``inside`` is (n_test, d): label within the per-dimension interval.
    ``joint_inside`` overrides the joint definition for regions that are not
    axis-aligned products (e.g. ball unions); by default joint = all
    dimensions simultaneously, so joint <= min per-dimension coverage.
    """
    inside = np.atleast_2d(np.asarray(inside, dtype=bool))
    if inside.size == 0:
        raise InvalidInput("empty test set")
    per_dim = inside.mean(axis=0)
    if joint_inside is None:
        joint = float(np.all(inside, axis=1).mean())
    else:
        joint_inside = np.asarray(joint_inside, dtype=bool)
        if joint_inside.shape != (inside.shape[0],):
            raise InvalidInput("joint_inside must have one entry per test sample")
        joint = float(joint_inside.mean())
    return per_dim, joint


def band_coverage(band: IntervalBand, labels: np.ndarray):
    return coverage_metrics(band.contains(labels))


def interval_score_metric(labels, lower, upper, alpha) -> float:
    """Mean interval score; shares the loss implementation bit-for-bit."""
    return interval_score_loss(labels, lower, upper, alpha)


def volume_estimate(region, n_samples: int = 100_000, seed: int = 0):
    """(volume, standard_error) of a region; boxes are exact (stderr 0).

    Ball unions are estimated by Monte Carlo over their bounding box with
    the binomial standard error reported.
    """
    if isinstance(region, Box):
        return region.volume(), 0.0
    if isinstance(region, BinUnionProduct):
        return region.volume(), 0.0
    if isinstance(region, BallUnion):
        box = region.bounding_box()
        box_volume = box.volume()
        if box_volume == 0.0:
            return 0.0, 0.0
        rng = stream(seed, "volume-mc")
        points = rng.uniform(box.lower, box.upper, size=(int(n_samples), region.dim))
        hit = region.contains(points)
        p = float(hit.mean())
        stderr = box_volume * math.sqrt(max(p * (1.0 - p), 0.0) / n_samples)
        return box_volume * p, stderr
    raise InvalidInput(f"cannot estimate the volume of {type(region).__name__}")


@dataclass
class MethodReport:
    """Deterministic evaluation summary for one method at one alpha."""

    method: str
    alpha: float
    n_test: int
    dims: tuple[str, ...]
    per_dim_coverage: dict
    joint_coverage: float
    per_dim_avg_width: dict
    mean_width: float
    mean_interval_score: float | None
    region_volume: float
    region_volume_stderr: float
    region_dim: int
    unbounded: bool = False
    fallback_rate: float | None = None
    timings: dict | None = None  # wall-clock medians; excluded from JSON dict

    def to_json_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "method": self.method,
            "alpha": self.alpha,
            "n_test": self.n_test,
            "dims": list(self.dims),
            "per_dim_coverage": {k: self.per_dim_coverage[k] for k in self.dims},
            "joint_coverage": self.joint_coverage,
            "per_dim_avg_width": {k: self.per_dim_avg_width[k] for k in self.dims},
            "mean_width": self.mean_width,
            "mean_interval_score": self.mean_interval_score,
            "region_volume": self.region_volume,
            "region_volume_stderr": self.region_volume_stderr,
            "region_dim": self.region_dim,
            "unbounded": self.unbounded,
            "fallback_rate": self.fallback_rate,
        }

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def from_json_dict(cls, d: dict) -> "MethodReport":
        return cls(
            method=d["method"],
            alpha=d["alpha"],
            n_test=d["n_test"],
            dims=tuple(d["dims"]),
            per_dim_coverage=dict(d["per_dim_coverage"]),
            joint_coverage=d["joint_coverage"],
            per_dim_avg_width=dict(d["per_dim_avg_width"]),
            mean_width=d["mean_width"],
            mean_interval_score=d["mean_interval_score"],
            region_volume=d["region_volume"],
            region_volume_stderr=d["region_volume_stderr"],
            region_dim=d["region_dim"],
            unbounded=d["unbounded"],
            fallback_rate=d["fallback_rate"],
        )

    @classmethod
    def load(cls, path) -> "MethodReport":
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


_METRIC_ROWS = (
    ["joint_coverage", "mean_width", "mean_interval_score", "region_volume", "region_dim"]
    + [f"coverage_{name}" for name in POSE_DIMS]
    + [f"width_{name}" for name in POSE_DIMS]
    + ["unbounded", "fallback_rate", "fit_time", "calibrate_time", "predict_time"]
)


@dataclass
class ComparisonTable:
    """Metric rows by method columns, emitted as CSV, JSON and text."""

    methods: tuple[str, ...]
    rows: list  # (metric_name, {method: value-or-None})

    def to_json(self, path=None):
        payload = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "methods": list(self.methods),
            "rows": [
                {"metric": name, "values": {m: values.get(m) for m in self.methods}}
                for name, values in self.rows
            ],
        }
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", *self.methods])
            for name, values in self.rows:
                writer.writerow(
                    [name]
                    + [
                        "" if values.get(m) is None else repr(values[m])
                        for m in self.methods
                    ]
                )

    def render(self) -> str:
        widths = [max(len("metric"), *(len(r[0]) for r in self.rows))]
        cols = [list(self.methods)]
        lines = []
        header = ["metric".ljust(widths[0])]
        for m in self.methods:
            header.append(m.rjust(12))
        lines.append("  ".join(header))
        for name, values in self.rows:
            cells = [name.ljust(widths[0])]
            for m in self.methods:
                v = values.get(m)
                if v is None:
                    cells.append("-".rjust(12))
                elif isinstance(v, float):
                    cells.append(f"{v:.6g}".rjust(12))
                else:
                    cells.append(str(v).rjust(12))
            lines.append("  ".join(cells))
        return "\n".join(lines) + "\n"


def compare_methods(reports: list[MethodReport]) -> ComparisonTable:
    """Align method reports into one table; alphas must match."""
    if len(reports) < 2:
        raise ValidationError("comparison needs at least two method reports")
    alphas = {r.alpha for r in reports}
    if len(alphas) != 1:
        raise ValidationError(f"mismatched alphas across reports: {sorted(alphas)}")
    methods = tuple(r.method for r in reports)
    if len(set(methods)) != len(methods):
        raise ValidationError("duplicate method names in comparison")
    by_method = {r.method: r for r in reports}
    rows = []
    for metric in _METRIC_ROWS:
        values = {}
        for m, r in by_method.items():
            if metric.startswith("coverage_"):
                values[m] = r.per_dim_coverage.get(metric[len("coverage_") :])
            elif metric.startswith("width_"):
                values[m] = r.per_dim_avg_width.get(metric[len("width_") :])
            elif metric.endswith("_time"):
                values[m] = (r.timings or {}).get(metric[: -len("_time")])
            elif metric == "unbounded":
                values[m] = int(r.unbounded)
            else:
                values[m] = getattr(r, metric)
        rows.append((metric, values))
    return ComparisonTable(methods=methods, rows=rows)


def load_comparison_csv(path):
    """Read back a comparison CSV into (methods, rows) for round-trip checks."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        methods = tuple(header[1:])
        rows = []
        for record in reader:
            values = {
                m: (None if cell == "" else float(cell))
                for m, cell in zip(methods, record[1:])
            }
            rows.append((record[0], values))
    return methods, rows

"""Relative-error metric and evaluation reports."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    pass


def relative_errors(pred: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Per-sample ||ref - pred|| / ||ref|| over the last axis."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise MetricError(f"prediction shape {pred.shape} differs from reference {ref.shape}")
    den = np.linalg.norm(ref, axis=-1)
    zero = np.argwhere(den == 0)
    if zero.size:
        raise MetricError(f"reference sample {tuple(int(i) for i in zero[0])} has zero norm")
    return np.linalg.norm(ref - pred, axis=-1) / den


def relative_error(pred: np.ndarray, ref: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean relative L2 error in percent over the samples selected by ``mask``.

    A sample is one row of the last axis (e.g. one (t, mu) snapshot).
    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if mask is not None:
        pred, ref = pred[mask], ref[mask]
    if pred.ndim == 1:
        pred, ref = pred[None], ref[None]
    if pred.size == 0:
        raise MetricError("no test samples")
    return float(100.0 * relative_errors(pred, ref).mean())


@dataclass
class MetricsReport:
    level_errors: list[float]
    member_error_mean: list[float] = field(default_factory=list)
    member_error_std: list[float] = field(default_factory=list)
    mean_std: list[float] = field(default_factory=list)
    per_time: np.ndarray | None = None  # (levels, K) mean relative error (%) per time instant
    times: np.ndarray | None = None
    runtime: dict = field(default_factory=dict)
    n_members: int = 1
    n_test: int = 0

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "relative_error_percent"])
        for l, e in enumerate(self.level_errors):
            w.writerow([l, repr(float(e))])
        return buf.getvalue()

    def per_time_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time"] + [f"level{l}" for l in range(len(self.level_errors))])
        if self.per_time is not None:
            for k, t in enumerate(self.times):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in self.per_time[:, k]])
        return buf.getvalue()

    def text(self) -> str:
        lines = [f"test samples: {self.n_test}   ensemble members: {self.n_members}", ""]
        head = f"{'level':>5}  {'rel.err %':>10}"
        if self.n_members > 1:
            head += f"  {'member mean':>11}  {'member std':>10}  {'mean 1-sigma':>12}"
        lines.append(head)
        for l, e in enumerate(self.level_errors):
            row = f"{l:>5}  {e:>10.3f}"
            if self.n_members > 1:
                row += (f"  {self.member_error_mean[l]:>11.3f}  {self.member_error_std[l]:>10.3f}"
                        f"  {self.mean_std[l]:>12.4g}")
            lines.append(row)
        if self.runtime:
            lines.append("")
            lines.extend(f"{k}: {v:.3f}" for k, v in sorted(self.runtime.items()))
        return "\n".join(lines) + "\n"

"""Evaluation metrics: RMSE, Pearson and Spearman correlation.

Plain float64 numpy. Correlations on degenerate (constant) input raise
rather than returning 0, so a broken model cannot silently score as
"uncorrelated but fine" inside a cross-validation average.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np


class UndefinedCorrelationError(ValueError):
    """Correlation is undefined (constant vector or fewer than 2 points)."""


def _pair(predictions, targets, min_n: int = 1) -> tuple[np.ndarray, np.ndarray]:
    yp = np.asarray(predictions, dtype=np.float64).ravel()
    yt = np.asarray(targets, dtype=np.float64).ravel()
    if yp.shape != yt.shape:
        raise ValueError(f"prediction/target lengths differ: {yp.size} vs {yt.size}")
    if yp.size < min_n:
        if min_n >= 2:
            raise UndefinedCorrelationError(f"need at least {min_n} pairs, got {yp.size}")
        raise ValueError(f"need at least {min_n} pairs, got {yp.size}")
    return yp, yt


def rmse(predictions, targets) -> float:
    """Root mean squared prediction error."""
    yp, yt = _pair(predictions, targets, min_n=1)
    return float(np.sqrt(np.mean((yp - yt) ** 2)))


def plcc(predictions, targets) -> float:
    """Pearson linear correlation coefficient."""
    yp, yt = _pair(predictions, targets, min_n=2)
    dp = yp - yp.mean()
    dt = yt - yt.mean()
    denom = math.sqrt(float((dp * dp).sum()) * float((dt * dt).sum()))
    if denom == 0.0:
        raise UndefinedCorrelationError("a vector has zero variance; PLCC undefined")
    return float((dp * dt).sum() / denom)


def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def srcc(predictions, targets) -> float:
    """Spearman rank correlation.

    Tie-free data uses the closed form 1 - 6*sum(d^2)/(N(N^2-1)) on rank
    differences; with ties it falls back to Pearson over average ranks.
    """
    yp, yt = _pair(predictions, targets, min_n=2)
    if np.unique(yp).size == 1 or np.unique(yt).size == 1:
        raise UndefinedCorrelationError("a vector is constant; SRCC undefined")
    rp = average_ranks(yp)
    rt = average_ranks(yt)
    if np.unique(yp).size == yp.size and np.unique(yt).size == yt.size:
        d = rp - rt
        n = yp.size
        return float(1.0 - 6.0 * float(d @ d) / (n * (n * n - 1)))
    return plcc(rp, rt)


@dataclass
class EvalReport:
    """Per-round metric triads plus their mean and standard deviation."""

    rounds: list[dict] = field(default_factory=list)  # {"round", "rmse", "plcc", "srcc"}

    def add_round(self, round_id: int, rmse_v: float, plcc_v: float, srcc_v: float) -> None:
        self.rounds.append({"round": int(round_id), "rmse": float(rmse_v),
                            "plcc": float(plcc_v), "srcc": float(srcc_v)})

    def _column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rounds], dtype=np.float64)

    def mean(self) -> dict:
        return {k: float(self._column(k).mean()) for k in ("rmse", "plcc", "srcc")}

    def std(self) -> dict:
        return {k: float(self._column(k).std()) for k in ("rmse", "plcc", "srcc")}

    def to_dict(self) -> dict:
        return {"rounds": self.rounds, "mean": self.mean(), "std": self.std()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["round", "rmse", "plcc", "srcc"])
        for r in self.rounds:
            writer.writerow([r["round"], repr(r["rmse"]), repr(r["plcc"]), repr(r["srcc"])])
        m, s = self.mean(), self.std()
        writer.writerow(["mean", repr(m["rmse"]), repr(m["plcc"]), repr(m["srcc"])])
        writer.writerow(["std", repr(s["rmse"]), repr(s["plcc"]), repr(s["srcc"])])
        return buf.getvalue()

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        data = json.loads(text)
        report = cls()
        for r in data["rounds"]:
            report.add_round(r["round"], r["rmse"], r["plcc"], r["srcc"])
        return report

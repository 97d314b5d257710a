"""Sample records, rater-score aggregation, and manifest files.

A manifest is a UTF-8 CSV with header
``image_path,mos,level,e1,e2,e3,j1,j2,j3``; the six rating columns are
optional and may be blank. MOS lives on a 0-100 scale; the three-level
label is Good / Usable / Reject.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LEVELS = ("Good", "Usable", "Reject")
TIERS = ("experienced", "junior")

MANIFEST_HEADER = ["image_path", "mos", "level", "e1", "e2", "e3", "j1", "j2", "j3"]


class ManifestError(ValueError):
    """A manifest row is malformed; the message carries the line number."""


class AggregationError(ValueError):
    """Rater scores cannot be aggregated (missing tier, empty input)."""


@dataclass(frozen=True)
class RatingRecord:
    rater_id: str
    tier: str  # experienced | junior
    score: int  # integer 0-100
    level: str | None = None

    def __post_init__(self):
        if self.tier not in TIERS:
            raise AggregationError(f"unknown rater tier {self.tier!r}")
        if not isinstance(self.score, int) or isinstance(self.score, bool):
            raise AggregationError(f"rating score must be an integer, got {self.score!r}")
        if not 0 <= self.score <= 100:
            raise AggregationError(f"rating score {self.score} outside 0-100")
        if self.level is not None and self.level not in LEVELS:
            raise AggregationError(f"unknown level {self.level!r}")


@dataclass(frozen=True)
class SampleRecord:
    image_path: str
    mos: float
    level: str
    ratings: tuple[int, ...] | None = None  # e1,e2,e3,j1,j2,j3 when present

    def __post_init__(self):
        if not 0.0 <= self.mos <= 100.0:
            raise ManifestError(f"mos {self.mos} outside [0, 100] for {self.image_path!r}")
        if self.level not in LEVELS:
            raise ManifestError(f"unknown level {self.level!r} for {self.image_path!r}")


@dataclass(frozen=True)
class AggregationWeights:
    """Tier weights of the opinion-score sum; they intentionally sum to
    0.99 over six raters (3 experienced + 3 junior)."""

    lambda_experienced: float = 0.22
    lambda_junior: float = 0.11
    normalize: bool = False

    def __post_init__(self):
        if self.lambda_experienced < 0 or self.lambda_junior < 0:
            raise AggregationError("aggregation weights must be non-negative")


def aggregate_mos(ratings: list[RatingRecord],
                  weights: AggregationWeights | None = None) -> float:
    """Weighted sum of opinion scores: lam_exp * sum(experienced) +
    lam_jr * sum(junior)."""
    weights = weights or AggregationWeights()
    if not ratings:
        raise AggregationError("no ratings to aggregate")
    exp_scores = [r.score for r in ratings if r.tier == "experienced"]
    jr_scores = [r.score for r in ratings if r.tier == "junior"]
    if weights.lambda_experienced > 0 and not exp_scores and jr_scores:
        raise AggregationError("no experienced ratings but lambda_experienced > 0")
    if weights.lambda_junior > 0 and not jr_scores and exp_scores:
        raise AggregationError("no junior ratings but lambda_junior > 0")
    mos = weights.lambda_experienced * sum(exp_scores) + weights.lambda_junior * sum(jr_scores)
    if weights.normalize:
        total = (weights.lambda_experienced * len(exp_scores)
                 + weights.lambda_junior * len(jr_scores))
        mos /= total
    return float(mos)


def rating_sd_stats(per_image: dict[str, list[int]]) -> dict:
    """Population SD per image plus dataset-level quartiles.

    Images with fewer than two ratings are skipped and counted in
    ``skipped``.
    """
    sds: dict[str, float] = {}
    skipped = 0
    for image_id, scores in per_image.items():
        if len(scores) < 2:
            skipped += 1
            continue
        sds[image_id] = float(np.std(np.asarray(scores, dtype=np.float64)))
    values = np.array(sorted(sds.values()), dtype=np.float64)
    quartiles = {"q25": None, "q50": None, "q75": None}
    if values.size:
        quartiles = {
            "q25": float(np.quantile(values, 0.25)),
            "q50": float(np.quantile(values, 0.50)),
            "q75": float(np.quantile(values, 0.75)),
        }
    return {"per_image": sds, "quartiles": quartiles, "skipped": skipped}


def level_from_score(score: float, good_min: float = 75.0, reject_max: float = 55.0) -> str:
    """Three-level label from a score: >= good_min is Good, < reject_max
    is Reject, Usable in between."""
    if good_min <= reject_max:
        raise ValueError(f"good_min ({good_min}) must exceed reject_max ({reject_max})")
    if score >= good_min:
        return "Good"
    if score < reject_max:
        return "Reject"
    return "Usable"


def write_manifest(records: list[SampleRecord], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for rec in records:
            ratings = ["" for _ in range(6)] if rec.ratings is None else list(rec.ratings)
            writer.writerow([rec.image_path, repr(rec.mos), rec.level, *ratings])


def load_manifest(path: str | Path) -> list[SampleRecord]:
    path = Path(path)
    records: list[SampleRecord] = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty file, expected header {MANIFEST_HEADER}")
        if header != MANIFEST_HEADER:
            raise ManifestError(f"{path}: bad header {header}, expected {MANIFEST_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ManifestError(f"{path}:{lineno}: expected {len(MANIFEST_HEADER)} columns, got {len(row)}")
            image_path, mos_text, level = row[0], row[1], row[2]
            try:
                mos = float(mos_text)
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: mos {mos_text!r} is not a number")
            rating_cells = row[3:9]
            ratings: tuple[int, ...] | None = None
            if any(cell.strip() for cell in rating_cells):
                try:
                    ratings = tuple(int(cell) for cell in rating_cells)
                except ValueError:
                    raise ManifestError(f"{path}:{lineno}: rating columns must be integers, got {rating_cells}")
            try:
                records.append(SampleRecord(image_path, mos, level, ratings))
            except ManifestError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}")
    return records

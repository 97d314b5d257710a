"""Append-only annotation store: projects, images, ratings.

Each project persists as a JSON-lines journal under the store root;
reloading a store replays the journals, so every rating written before a
shutdown is present after restart. Appends are serialized through a
single writer lock; reads work on in-memory state.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import (TIERS, AggregationError, AggregationWeights, RatingRecord,
                      aggregate_mos, rating_sd_stats)

DISAGREEMENT_SD = 8.0


class UnknownRaterError(KeyError):
    pass


class UnknownProjectError(KeyError):
    pass


class UnknownImageError(KeyError):
    pass


class DuplicateRatingError(ValueError):
    pass


@dataclass
class ImageEntry:
    image_id: str
    path: str
    is_reference: bool = False
    level_hint: str | None = None  # shown for reference-set images


@dataclass
class Project:
    project_id: str
    name: str
    raters: dict[str, str]  # rater_id -> tier
    is_reference: bool = False
    images: dict[str, ImageEntry] = field(default_factory=dict)
    image_order: list[str] = field(default_factory=list)
    # (image_id, rater_id) -> RatingRecord
    ratings: dict[tuple[str, str], RatingRecord] = field(default_factory=dict)


class AnnotationStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.projects: dict[str, Project] = {}
        for journal in sorted(self.root.glob("project_*.jsonl")):
            self._replay(journal)

    # -- persistence -----------------------------------------------------

    def _journal_path(self, project_id: str) -> Path:
        return self.root / f"project_{project_id}.jsonl"

    def _append(self, project_id: str, event: dict) -> None:
        with self._journal_path(project_id).open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")

    def _replay(self, journal: Path) -> None:
        with journal.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    self._apply(json.loads(line))

    def _apply(self, event: dict) -> None:
        kind = event["type"]
        if kind == "project":
            self.projects[event["project_id"]] = Project(
                event["project_id"], event["name"], dict(event["raters"]),
                bool(event.get("is_reference", False)))
        elif kind == "image":
            project = self.projects[event["project_id"]]
            entry = ImageEntry(event["image_id"], event["path"],
                               bool(event.get("is_reference", False)),
                               event.get("level_hint"))
            if entry.image_id not in project.images:
                project.image_order.append(entry.image_id)
            project.images[entry.image_id] = entry
        elif kind == "rating":
            project = self.projects[event["project_id"]]
            record = RatingRecord(event["rater_id"], event["tier"],
                                  int(event["score"]), event.get("level"))
            project.ratings[(event["image_id"], event["rater_id"])] = record
        else:
            raise ValueError(f"unknown journal event type {kind!r}")

    # -- operations ------------------------------------------------------

    def _project(self, project_id: str) -> Project:
        try:
            return self.projects[project_id]
        except KeyError:
            raise UnknownProjectError(project_id)

    def project(self, project_id: str) -> Project:
        """Read-only view of one project; raises UnknownProjectError."""
        return self._project(project_id)

    def create_project(self, name: str, raters: dict[str, str],
                       is_reference: bool = False) -> str:
        for rater_id, tier in raters.items():
            if tier not in TIERS:
                raise AggregationError(f"rater {rater_id!r} has unknown tier {tier!r}")
        with self._lock:
            project_id = uuid.uuid4().hex[:12]
            event = {"type": "project", "project_id": project_id, "name": name,
                     "raters": raters, "is_reference": is_reference}
            self._apply(event)
            self._append(project_id, event)
        return project_id

    def add_image(self, project_id: str, image_id: str, path: str,
                  is_reference: bool = False, level_hint: str | None = None) -> None:
        with self._lock:
            self._project(project_id)
            event = {"type": "image", "project_id": project_id, "image_id": image_id,
                     "path": path, "is_reference": is_reference, "level_hint": level_hint}
            self._apply(event)
            self._append(project_id, event)

    def rater_tier(self, project_id: str, rater_id: str) -> str:
        project = self._project(project_id)
        try:
            return project.raters[rater_id]
        except KeyError:
            raise UnknownRaterError(rater_id)

    def next_unrated(self, project_id: str, rater_id: str) -> ImageEntry | None:
        project = self._project(project_id)
        self.rater_tier(project_id, rater_id)
        for image_id in project.image_order:
            if (image_id, rater_id) not in project.ratings:
                return project.images[image_id]
        return None

    def add_rating(self, project_id: str, rater_id: str, image_id: str,
                   score: int, level: str | None = None) -> RatingRecord:
        with self._lock:
            project = self._project(project_id)
            tier = self.rater_tier(project_id, rater_id)
            if image_id not in project.images:
                raise UnknownImageError(image_id)
            if (image_id, rater_id) in project.ratings:
                raise DuplicateRatingError(f"rater {rater_id!r} already rated {image_id!r}")
            record = RatingRecord(rater_id, tier, score, level)
            event = {"type": "rating", "project_id": project_id, "image_id": image_id,
                     "rater_id": rater_id, "tier": tier, "score": score, "level": level}
            self._apply(event)
            self._append(project_id, event)
        return record

    def aggregate(self, project_id: str,
                  weights: AggregationWeights | None = None) -> dict:
        """Per-image MOS (where computable), SD, and a disagreement flag."""
        with self._lock:  # snapshot against concurrent writers
            project = self._project(project_id)
            ratings = dict(project.ratings)
        by_image: dict[str, list[RatingRecord]] = {}
        for (image_id, _), record in ratings.items():
            by_image.setdefault(image_id, []).append(record)
        sd_stats = rating_sd_stats({k: [r.score for r in v] for k, v in by_image.items()})
        images = {}
        for image_id, records in sorted(by_image.items()):
            try:
                mos = aggregate_mos(records, weights)
            except AggregationError:
                mos = None  # a tier is still missing
            sd = sd_stats["per_image"].get(image_id)
            images[image_id] = {
                "mos": mos,
                "sd": sd,
                "n_ratings": len(records),
                "disagreement": bool(sd is not None and sd > DISAGREEMENT_SD),
            }
        return {"images": images, "sd_quartiles": sd_stats["quartiles"]}

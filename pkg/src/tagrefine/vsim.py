"""Mining of visual-similarity ("confusability") scores from detector output.

Two labels are visually similar when a detector keeps proposing both as
candidates for the same bounding box. Over a corpus of detection records we
accumulate, per label pair, the summed confidences of their co-candidacies,
and per label the total confidence mass; the final score is the Jaccard-style
ratio

    pair_conf(a, b) / (total_conf(a) + total_conf(b))

which is 1.0 for labels that only ever appear together and 0.0 for labels
that never share a box.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator

from .errors import LoadError
from .labels import canon_label

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoundingBox:
    box_id: str
    candidates: tuple[tuple[str, float], ...]  # (label, conf), conf > 0

    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.candidates)


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    boxes: tuple[BoundingBox, ...]


def validate_record(record: DetectionRecord) -> None:
    """Raise ValueError if any box breaks the candidate invariants."""
    for box in record.boxes:
        seen = set()
        for label, conf in box.candidates:
            if not (conf > 0) or not math.isfinite(conf):
                raise ValueError(
                    f"image {record.image_id!r} box {box.box_id!r}: "
                    f"non-positive confidence {conf!r} for {label!r}"
                )
            if label in seen:
                raise ValueError(
                    f"image {record.image_id!r} box {box.box_id!r}: "
                    f"duplicate candidate label {label!r}"
                )
            seen.add(label)


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a < b else (b, a)


class MiningAccumulator:
    """Streaming sums behind the similarity ratio; mergeable across shards.

    Sums are exact rationals (float confidences convert losslessly), so the
    finalized table is identical under any record order or shard split.
    """

    def __init__(self):
        self.pair_conf: dict[tuple[str, str], Fraction] = {}
        self.total_conf: dict[str, Fraction] = {}
        self.records_seen = 0
        self.records_rejected = 0

    def add(self, record: DetectionRecord) -> None:
        """Fold one validated record in; raises ValueError on a bad record."""
        validate_record(record)
        zero = Fraction(0)
        for box in record.boxes:
            cands = [(label, Fraction(conf)) for label, conf in box.candidates]
            for label, conf in cands:
                self.total_conf[label] = self.total_conf.get(label, zero) + conf
            for i in range(len(cands)):
                la, ca = cands[i]
                for j in range(i + 1, len(cands)):
                    lb, cb = cands[j]
                    key = _pair(la, lb)
                    self.pair_conf[key] = self.pair_conf.get(key, zero) + ca + cb
        self.records_seen += 1

    def merge(self, other: "MiningAccumulator") -> "MiningAccumulator":
        """In-place monoid combine (shard-parallel mining)."""
        zero = Fraction(0)
        for key, val in other.pair_conf.items():
            self.pair_conf[key] = self.pair_conf.get(key, zero) + val
        for label, val in other.total_conf.items():
            self.total_conf[label] = self.total_conf.get(label, zero) + val
        self.records_seen += other.records_seen
        self.records_rejected += other.records_rejected
        return self


def accumulate(corpus: Iterable[DetectionRecord]) -> MiningAccumulator:
    """Accumulate a record stream, rejecting invalid records with a warning."""
    acc = MiningAccumulator()
    for record in corpus:
        try:
            acc.add(record)
        except ValueError as exc:
            log.warning("record rejected: %s", exc)
            acc.records_rejected += 1
    return acc


class VsimTable:
    """Symmetric sparse label-pair similarity in [0, 1]; missing pairs are 0."""

    def __init__(self, scores: dict[tuple[str, str], float] | None = None):
        self._scores: dict[tuple[str, str], float] = {}
        self._neighbors: dict[str, dict[str, float]] = {}
        for (a, b), s in (scores or {}).items():
            self._put(a, b, s)

    def _put(self, a: str, b: str, score: float) -> None:
        if a == b:
            raise ValueError(f"self-pair {a!r}")
        if not (0.0 <= score <= 1.0):
            raise ValueError(f"similarity {score!r} outside [0, 1] for ({a!r}, {b!r})")
        self._scores[_pair(a, b)] = score
        self._neighbors.setdefault(a, {})[b] = score
        self._neighbors.setdefault(b, {})[a] = score

    def get(self, a: str, b: str) -> float:
        if a == b:
            return 0.0
        return self._scores.get(_pair(a, b), 0.0)

    def neighbors(self, label: str) -> dict[str, float]:
        return self._neighbors.get(label, {})

    def pairs(self) -> Iterator[tuple[str, str, float]]:
        """All stored pairs, (a, b, score) with a < b, sorted."""
        for a, b in sorted(self._scores):
            yield a, b, self._scores[(a, b)]

    def __len__(self) -> int:
        return len(self._scores)

    def __eq__(self, other) -> bool:
        return isinstance(other, VsimTable) and self._scores == other._scores


def finalize(acc: MiningAccumulator) -> VsimTable:
    """Close out an accumulator into the ratio table.

    Pairs with zero co-candidate mass are omitted (implicit score 0); the
    denominator is positive for every stored pair because both labels were
    observed with positive confidence.
    """
    scores = {}
    for (a, b), num in acc.pair_conf.items():
        denom = acc.total_conf[a] + acc.total_conf[b]
        if num > 0:
            scores[(a, b)] = float(num / denom)
    return VsimTable(scores)


def similar_set(table: VsimTable, label: str, tau_s: float) -> set[str]:
    """Labels visually similar to `label` at threshold tau_s in (0, 1]."""
    if not (0.0 < tau_s <= 1.0):
        raise ValueError(f"tau_s must be in (0, 1], got {tau_s!r}")
    return {
        other
        for other, score in table.neighbors(label).items()
        if score >= tau_s and other != label
    }


# --- corpus and table serialization -----------------------------------------

def parse_record(obj: dict) -> DetectionRecord:
    """Build a DetectionRecord from one decoded corpus JSON object."""
    try:
        image_id = str(obj["image"])
        boxes = []
        for box_obj in obj.get("boxes", []):
            cands = tuple(
                (canon_label(c["label"]), float(c["conf"]))
                for c in box_obj.get("candidates", [])
            )
            boxes.append(BoundingBox(box_id=str(box_obj["id"]), candidates=cands))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed detection record: {exc}") from exc
    record = DetectionRecord(image_id=image_id, boxes=tuple(boxes))
    validate_record(record)
    return record


def read_detections_jsonl(path) -> tuple[list[DetectionRecord], int]:
    """Read a detections/corpus JSONL file leniently.

    Malformed or invariant-breaking lines are skipped with a warning;
    returns (records, skipped_count). Duplicate image ids keep the first
    occurrence.
    """
    records: list[DetectionRecord] = []
    seen_ids: set[str] = set()
    skipped = 0
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise LoadError(path, f"cannot open: {exc.strerror}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                record = parse_record(json.loads(line))
                if record.image_id in seen_ids:
                    raise ValueError(f"duplicate image id {record.image_id!r}")
            except ValueError as exc:
                log.warning("%s:%d skipped: %s", path, lineno, exc)
                skipped += 1
                continue
            seen_ids.add(record.image_id)
            records.append(record)
    return records, skipped


def write_vsim_tsv(table: VsimTable, path) -> None:
    """Write `label1<TAB>label2<TAB>score` rows, label1 < label2, sorted."""
    with open(path, "w", encoding="utf-8") as fh:
        for a, b, score in table.pairs():
            fh.write(f"{a}\t{b}\t{score:.6f}\n")


def read_vsim_tsv(path) -> VsimTable:
    scores: dict[tuple[str, str], float] = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise LoadError(path, f"cannot open: {exc.strerror}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise LoadError(path, f"expected 3 tab-separated fields, got {len(parts)}", lineno)
            try:
                a, b = canon_label(parts[0]), canon_label(parts[1])
                score = float(parts[2])
            except ValueError as exc:
                raise LoadError(path, str(exc), lineno) from exc
            if a == b:
                raise LoadError(path, f"self-pair {a!r}", lineno)
            if not (0.0 <= score <= 1.0):
                raise LoadError(path, f"score {score!r} outside [0, 1]", lineno)
            key = _pair(a, b)
            if key in scores:
                raise LoadError(path, f"duplicate pair {key!r}", lineno)
            scores[key] = score
    return VsimTable(scores)

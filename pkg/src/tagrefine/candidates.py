"""Per-image candidate label generation.

Each box's candidate set is its original detections, plus undetected labels
the detector tends to confuse with them, plus hypernyms generalizing both.
Abstract candidates are commonsense phrases asserted about any of the
image's visual candidates; they attach to the image globally, not to a box.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import ConfigError
from .knowledge import AbstractAssertion, KnowledgeStore
from .labels import Origin
from .scoring import Hyperparameters, SrelFn, gconf, vconf
from .vsim import BoundingBox, DetectionRecord, VsimTable, similar_set


@dataclass(frozen=True)
class VisualCandidate:
    label: str
    origin: Origin
    vconf: float = 0.0  # 0 for hypernym candidates
    gconf: float = 0.0  # 0 for original/similar candidates


@dataclass(frozen=True)
class AbstractCandidate:
    label: str
    cnet: float  # strongest supporting assertion weight
    supports: tuple[tuple[str, float], ...]  # (visual label, its aconf)

    def max_aconf(self) -> float:
        return max((a for _, a in self.supports), default=0.0)


@dataclass
class CandidateSets:
    box_ids: tuple[str, ...]
    per_box: dict[str, list[VisualCandidate]]
    abstract: list[AbstractCandidate]

    def visual_labels(self) -> set[str]:
        return {c.label for cands in self.per_box.values() for c in cands}

    def is_empty(self) -> bool:
        return not any(self.per_box.values()) and not self.abstract


def expand_similar(box: BoundingBox, vsim_table: VsimTable, tau_s: float) -> set[str]:
    """Visually-similar labels the detector did not propose for this box."""
    original = set(box.labels())
    out: set[str] = set()
    for label in original:
        out |= similar_set(vsim_table, label, tau_s)
    return out - original


def expand_hypernyms(
    visual_labels: Iterable[str], parents: Mapping[str, tuple[str, ...]]
) -> dict[str, tuple[str, ...]]:
    """Hypernym parents of the given labels, keyed parent -> children here."""
    children_of: dict[str, set[str]] = {}
    for label in visual_labels:
        for parent in parents.get(label, ()):
            children_of.setdefault(parent, set()).add(label)
    return {parent: tuple(sorted(kids)) for parent, kids in children_of.items()}


def generate_abstract(
    visual_candidates: set[str],
    assertions: Iterable[AbstractAssertion],
    cap: int,
    srel_fn: SrelFn,
) -> list[AbstractCandidate]:
    """Abstract phrases asserted about any of the image's visual candidates.

    Ranked by the best supporting aconf, ties broken lexicographically,
    truncated to `cap` to keep the joint selection tractable. Phrases that
    collide with a visual candidate label are skipped (abstract labels live
    in their own space).
    """
    if cap < 1:
        raise ConfigError(f"abstract candidate cap must be >= 1, got {cap!r}")
    supporting: dict[str, dict[str, float]] = {}  # object -> subject -> max score
    for a in assertions:
        if a.subject not in visual_candidates or a.object in visual_candidates:
            continue
        by_subject = supporting.setdefault(a.object, {})
        if a.score > by_subject.get(a.subject, 0.0):
            by_subject[a.subject] = a.score

    out: list[AbstractCandidate] = []
    for obj in sorted(supporting):
        by_subject = supporting[obj]
        cnet = max(by_subject.values())
        supports = tuple(
            (subject, cnet * srel_fn(subject, obj)) for subject in sorted(by_subject)
        )
        out.append(AbstractCandidate(label=obj, cnet=cnet, supports=supports))
    out.sort(key=lambda c: (-c.max_aconf(), c.label))
    return out[:cap]


def generate(
    record: DetectionRecord,
    store: KnowledgeStore,
    hp: Hyperparameters,
    srel_fn: SrelFn,
) -> CandidateSets:
    """Build the full candidate space for one image.

    A label keeps the strongest origin it qualifies for
    (original > similar > hypernym) and appears once per box.
    """
    per_box: dict[str, list[VisualCandidate]] = {}
    for box in record.boxes:
        original = list(box.labels())
        similar = sorted(expand_similar(box, store.vsim, hp.tau_s))
        box_visual = set(original) | set(similar)
        hyper = expand_hypernyms(box_visual, store.parents)

        cands: list[VisualCandidate] = []
        for label in original:
            cands.append(
                VisualCandidate(label=label, origin=Origin.ORIGINAL,
                                vconf=vconf(box, label, store.vsim))
            )
        for label in similar:
            cands.append(
                VisualCandidate(label=label, origin=Origin.SIMILAR,
                                vconf=vconf(box, label, store.vsim))
            )
        for label in sorted(hyper):
            if label in box_visual:
                continue  # already an original/similar candidate of this box
            cands.append(
                VisualCandidate(label=label, origin=Origin.HYPERNYM,
                                gconf=gconf(box_visual, label, store.parents, srel_fn))
            )
        per_box[box.box_id] = cands

    all_visual = {c.label for cands in per_box.values() for c in cands}
    abstract = generate_abstract(all_visual, store.assertions, hp.abstract_cap, srel_fn)
    return CandidateSets(
        box_ids=tuple(box.box_id for box in record.boxes),
        per_box=per_box,
        abstract=abstract,
    )

"""End-to-end refinement of detection records against a knowledge store."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, Sequence

from .candidates import generate
from .ilp import (
    RefinedLabel,
    build_instance,
    extract_labels,
    solve_exact,
    truncate_to_cap,
    write_lp,
)
from .knowledge import KnowledgeStore
from .relatedness import Relatedness, image_coherence
from .scoring import Hyperparameters
from .vsim import DetectionRecord

log = logging.getLogger(__name__)

# with the joint budget disabled, output still trims to the standard budget
POST_TRUNCATION_CAP = 5


def make_relatedness(store: KnowledgeStore, hp: Hyperparameters) -> Relatedness:
    return Relatedness(store.embeddings, store.coloc, delta=hp.delta)


def refine_record(
    record: DetectionRecord,
    store: KnowledgeStore,
    hp: Hyperparameters,
    rel: Relatedness | None = None,
    lp_dir: str | None = None,
) -> tuple[list[RefinedLabel], float]:
    """Refine one image: candidates, exact selection, label extraction."""
    if rel is None:
        rel = make_relatedness(store, hp)
    cands = generate(record, store, hp, rel.srel)
    inst = build_instance(cands, hp, rel.srel)
    if lp_dir is not None:
        stem = "".join(c if c.isalnum() or c in "-_." else "_" for c in record.image_id)
        with open(Path(lp_dir) / f"{stem}.lp", "w", encoding="utf-8") as fh:
            write_lp(inst, fh)
    assignment = solve_exact(inst)
    if hp.budget is None:
        assignment = truncate_to_cap(inst, assignment, POST_TRUNCATION_CAP)
    refined = extract_labels(assignment, cands)
    return refined, assignment.objective_value


def refined_to_json(record: DetectionRecord, refined: Sequence[RefinedLabel], objective: float) -> dict:
    return {
        "image": record.image_id,
        "labels": [
            {"label": r.label, "space": r.space.value, "box": r.box} for r in refined
        ],
        "objective": objective,
    }


def refine_records(
    records: Sequence[DetectionRecord],
    store: KnowledgeStore,
    hp: Hyperparameters,
    jobs: int = 1,
    lp_dir: str | None = None,
) -> list[dict]:
    """Refine many images; output order always matches input order."""
    rel = make_relatedness(store, hp)

    def one(record: DetectionRecord) -> dict:
        refined, objective = refine_record(record, store, hp, rel=rel, lp_dir=lp_dir)
        return refined_to_json(record, refined, objective)

    if jobs <= 1 or len(records) <= 1:
        return [one(r) for r in records]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, records))


def select_incoherent(
    records: Iterable[DetectionRecord],
    store: KnowledgeStore,
    hp: Hyperparameters,
    min_boxes: int = 3,
    max_boxes: int = 7,
    coherence_cut: float = 0.1,
) -> list[DetectionRecord]:
    """Keep images whose detections look contextually incoherent.

    An image qualifies with `min_boxes..max_boxes` boxes whose top-confidence
    original labels have mean pairwise relatedness below the cut; those are
    the images where joint refinement has noise to remove.
    """
    rel = make_relatedness(store, hp)
    out = []
    for record in records:
        if not min_boxes <= len(record.boxes) <= max_boxes:
            continue
        top = []
        for box in record.boxes:
            if box.candidates:
                top.append(max(box.candidates, key=lambda lc: (lc[1], lc[0]))[0])
        if image_coherence(top, rel) < coherence_cut:
            out.append(record)
    return out

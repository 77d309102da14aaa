"""Confidence scores feeding the selection objective.

Three families:

* vconf -- how strongly the detector (directly or through visual similarity)
  backs a concrete label for a box;
* gconf -- how strongly a hypernym generalizes the box's visual labels,
  summed semantic relatedness to its children present in the box;
* aconf -- how strongly an abstract phrase fits a visual label, the
  assertion's source weight times their semantic relatedness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping

from .errors import ConfigError, ContractViolation
from .knowledge import AbstractAssertion
from .vsim import BoundingBox, VsimTable

SrelFn = Callable[[str, str], float]

MAX_ABSTRACT_LABELS = 5  # hard cap on abstract labels per image


@dataclass(frozen=True)
class Hyperparameters:
    """Objective weights and selection bounds.

    `budget` of None disables the joint label budget; the pipeline then
    truncates output to 5 labels by marginal contribution instead.
    `visir_star` swaps the joint budget for a cap on visual labels at 80%
    of the input boxes.
    """

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    kappa: float = 1.0
    delta: float = 0.5
    budget: int | None = 5
    visir_star: bool = False
    tau_s: float = 0.1
    abstract_cap: int = 25  # candidate cap before solving, not a selection bound

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "kappa"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {value!r}")
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigError(f"delta must be in [0, 1], got {self.delta!r}")
        if self.budget is not None and self.budget < 1:
            raise ConfigError(f"budget must be >= 1 or none, got {self.budget!r}")
        if not 0.0 < self.tau_s <= 1.0:
            raise ConfigError(f"tau_s must be in (0, 1], got {self.tau_s!r}")
        if self.abstract_cap < 1:
            raise ConfigError(f"abstract_cap must be >= 1, got {self.abstract_cap!r}")

    def scaled(self, c: float) -> "Hyperparameters":
        """Jointly scale the three evidence weights (argmax-invariant for c > 0)."""
        return replace(self, alpha=self.alpha * c, beta=self.beta * c, gamma=self.gamma * c)


def vconf(box: BoundingBox, label: str, vsim_table: VsimTable) -> float:
    """Visual confidence of a concrete label for a box.

    Original detections keep their detector confidence; visually-similar
    additions earn the similarity-weighted sum of the box's original
    confidences. Anything else is a caller bug.
    """
    originals = dict(box.candidates)
    if label in originals:
        return originals[label]
    sims = [(conf, vsim_table.get(orig_label, label)) for orig_label, conf in box.candidates]
    if not any(s > 0.0 for _, s in sims):
        raise ContractViolation(
            f"label {label!r} is neither original nor visually similar in box {box.box_id!r}"
        )
    return sum(conf * s for conf, s in sims)


def gconf(
    box_visual_labels: Iterable[str],
    hypernym: str,
    parents: Mapping[str, tuple[str, ...]],
    srel_fn: SrelFn,
) -> float:
    """Generalization confidence: summed relatedness to children in this box.

    Exactly 0 for labels that are themselves original or similar candidates
    of the box.
    """
    labels = list(box_visual_labels)
    if hypernym in labels:
        return 0.0
    total = 0.0
    for child in labels:
        if hypernym in parents.get(child, ()):
            total += srel_fn(hypernym, child)
    return total


def aconf(label: str, assertion: AbstractAssertion, srel_fn: SrelFn) -> float:
    """Abstraction confidence: assertion weight times semantic relatedness."""
    return assertion.score * srel_fn(label, assertion.object)

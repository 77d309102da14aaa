"""Exact joint label selection as a 0-1 integer linear program.

Variables:

* ``X_i_j`` -- box ``i`` takes its visual candidate ``j`` (at most one per box);
* ``Y_k``   -- the image takes abstract candidate ``k`` (at most five);
* ``Z_i_j_m_k = X_i_j * X_m_k`` for boxes ``i < m`` -- cross-box coherence;
* ``W_i_j_k = X_i_j * Y_k``                         -- visual/abstract coherence.

The objective is a nonnegative-weighted sum of unary evidence on X plus
coherence rewards on Z and W. Because every coefficient is nonnegative, Z
and W equal their defining products at any optimum, so the exact search
runs over X and Y only: depth-first branch and bound over per-box choices
(including "no label") with an admissible optimistic bound, and an exact
closed-form completion of the abstract subset at each leaf.

Ties are broken by preferring the lexicographically smallest chosen-label
multiset, then fewer labels, then labeling earlier boxes. `brute_force`
enumerates every feasible assignment under the same tie-break and is the
testing oracle for `solve_exact`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .candidates import CandidateSets
from .errors import ConfigError, ContractViolation, InstanceTooLarge
from .labels import GLOBAL_BOX, SPACE_OF_ORIGIN, Space
from .scoring import MAX_ABSTRACT_LABELS, Hyperparameters, SrelFn

BRUTE_FORCE_MAX_STATES = 10_000_000
_PRUNE_EPS = 1e-9


@dataclass
class IlpInstance:
    box_ids: tuple[str, ...]
    box_labels: tuple[tuple[str, ...], ...]   # candidate labels per box
    unary: tuple[tuple[float, ...], ...]      # alpha * (vconf + kappa * gconf)
    abstract_labels: tuple[str, ...]
    z: dict[tuple[int, int, int, int], float]  # (i, j, m, k), i < m
    w: dict[tuple[int, int, int], float]       # (i, j, k)
    budget: int | None
    visual_cap: int | None                     # selected-visual bound (80% variant)
    max_abstract: int = MAX_ABSTRACT_LABELS

    def __post_init__(self):
        for per_box in self.unary:
            for c in per_box:
                _check_coeff(c)
        for (i, j, m, k), c in self.z.items():
            if not i < m:
                raise ContractViolation(f"pairwise variable spans boxes {i} >= {m}")
            _check_coeff(c)
        for _, c in self.w.items():
            _check_coeff(c)
        if self.budget is not None and self.budget < 1:
            raise ConfigError(f"budget must be >= 1 or none, got {self.budget!r}")

    @property
    def n_boxes(self) -> int:
        return len(self.box_labels)

    @property
    def n_abstract(self) -> int:
        return len(self.abstract_labels)

    def n_primary_vars(self) -> int:
        return sum(len(labels) for labels in self.box_labels) + self.n_abstract

    def search_states(self) -> float:
        states = 1.0
        for labels in self.box_labels:
            states *= 1 + len(labels)
        return states * (2.0 ** self.n_abstract)


def _check_coeff(c: float) -> None:
    if not math.isfinite(c) or c < 0:
        raise ContractViolation(f"objective coefficient {c!r} not finite nonnegative")


@dataclass
class Assignment:
    chosen_visual: dict[str, str | None]  # box id -> label (None = unlabeled)
    chosen_abstract: frozenset[str]
    objective_value: float

    def n_visual(self) -> int:
        return sum(1 for v in self.chosen_visual.values() if v is not None)

    def n_labels(self) -> int:
        return self.n_visual() + len(self.chosen_abstract)


def build_instance(
    cands: CandidateSets, hp: Hyperparameters, srel_fn: SrelFn
) -> IlpInstance:
    """Assemble coefficients and bounds from a candidate space.

    Zero-coefficient pairwise variables are omitted; they cannot change the
    optimum and only inflate the search.
    """
    box_labels = tuple(
        tuple(c.label for c in cands.per_box[box_id]) for box_id in cands.box_ids
    )
    unary = tuple(
        tuple(hp.alpha * (c.vconf + hp.kappa * c.gconf) for c in cands.per_box[box_id])
        for box_id in cands.box_ids
    )
    abstract_labels = tuple(a.label for a in cands.abstract)

    z: dict[tuple[int, int, int, int], float] = {}
    if hp.beta > 0:
        for i in range(len(box_labels)):
            for m in range(i + 1, len(box_labels)):
                for j, lj in enumerate(box_labels[i]):
                    for k, lk in enumerate(box_labels[m]):
                        coeff = hp.beta * srel_fn(lj, lk)
                        if coeff > 0.0:
                            z[(i, j, m, k)] = coeff

    w: dict[tuple[int, int, int], float] = {}
    if hp.gamma > 0:
        for k, cand in enumerate(cands.abstract):
            for i in range(len(box_labels)):
                for j, lj in enumerate(box_labels[i]):
                    coeff = hp.gamma * cand.cnet * srel_fn(lj, cand.label)
                    if coeff > 0.0:
                        w[(i, j, k)] = coeff

    return IlpInstance(
        box_ids=cands.box_ids,
        box_labels=box_labels,
        unary=unary,
        abstract_labels=abstract_labels,
        z=z,
        w=w,
        budget=hp.budget,
        visual_cap=math.floor(0.8 * len(box_labels)) if hp.visir_star else None,
    )


# --- objective and ordering ----------------------------------------------------

def objective_value(
    inst: IlpInstance, choice: Sequence[int | None], abstract: Iterable[int]
) -> float:
    """Canonical objective of a complete assignment.

    Terms are summed in one fixed order (unaries, cross-box pairs, then
    per-abstract gains) so equivalent assignments get bit-identical values
    regardless of which solver produced them.
    """
    val = 0.0
    n = inst.n_boxes
    for i in range(n):
        j = choice[i]
        if j is not None:
            val += inst.unary[i][j]
    for i in range(n):
        ji = choice[i]
        if ji is None:
            continue
        for m in range(i + 1, n):
            jm = choice[m]
            if jm is not None:
                val += inst.z.get((i, ji, m, jm), 0.0)
    for k in sorted(abstract):
        val += _abstract_gain(inst, choice, k)
    return val


def _abstract_gain(inst: IlpInstance, choice: Sequence[int | None], k: int) -> float:
    gain = 0.0
    for i in range(inst.n_boxes):
        j = choice[i]
        if j is not None:
            gain += inst.w.get((i, j, k), 0.0)
    return gain


def _assignment_key(inst, choice, abstract, obj):
    """Total order on assignments: higher objective, then the tie-break chain."""
    chosen_labels = [
        inst.box_labels[i][j] for i, j in enumerate(choice) if j is not None
    ]
    chosen_labels += [inst.abstract_labels[k] for k in abstract]
    per_box = tuple(
        (j is None, "" if j is None else inst.box_labels[i][j])
        for i, j in enumerate(choice)
    )
    return (
        -obj,
        tuple(sorted(chosen_labels)),
        len(chosen_labels),
        per_box,
        tuple(sorted(abstract)),
    )


def _abstract_allowance(inst: IlpInstance, n_vis: int) -> int:
    allowance = min(inst.max_abstract, inst.n_abstract)
    if inst.budget is not None:
        allowance = min(allowance, inst.budget - n_vis)
    return max(allowance, 0)


def _best_abstract(inst: IlpInstance, choice: Sequence[int | None], allowance: int) -> tuple[int, ...]:
    """Exact abstract completion for a fixed visual choice, tie-break aware.

    All gains are nonnegative, so the value-optimal subsets are: every
    candidate above the allowance cutoff, a lexicographic choice among
    cutoff ties, and optionally zero-gain candidates in leftover slots.
    A zero-gain label improves the tie-break multiset exactly when it sorts
    below the largest label already chosen.
    """
    if allowance <= 0 or inst.n_abstract == 0:
        return ()
    gains = [(_abstract_gain(inst, choice, k), k) for k in range(inst.n_abstract)]
    positives = sorted(
        ((g, inst.abstract_labels[k], k) for g, k in gains if g > 0.0),
        key=lambda t: (-t[0], t[1]),
    )
    chosen = [k for _, _, k in positives[:allowance]]
    slots = allowance - len(chosen)
    if slots > 0:
        merged = [inst.box_labels[i][j] for i, j in enumerate(choice) if j is not None]
        merged += [inst.abstract_labels[k] for k in chosen]
        if merged:
            top = max(merged)
            zeros = sorted(
                (inst.abstract_labels[k], k) for g, k in gains if g == 0.0
            )
            for label, k in zeros:
                if slots == 0 or label >= top:
                    break
                chosen.append(k)
                slots -= 1
    return tuple(sorted(chosen))


# --- solvers --------------------------------------------------------------------

def solve_exact(inst: IlpInstance) -> Assignment:
    """Branch and bound over per-box choices with exact abstract completion."""
    n = inst.n_boxes

    # static optimistic potentials
    zmax: dict[tuple[int, int], dict[int, float]] = {}
    for (i, j, m, k), c in inst.z.items():
        side = zmax.setdefault((i, j), {})
        side[m] = max(side.get(m, 0.0), c)
        side = zmax.setdefault((m, k), {})
        side[i] = max(side.get(i, 0.0), c)
    zpot = [
        [sum(zmax.get((i, j), {}).values()) for j in range(len(inst.box_labels[i]))]
        for i in range(n)
    ]
    box_pot = [
        max(
            [inst.unary[i][j] + zpot[i][j] for j in range(len(inst.box_labels[i]))],
            default=0.0,
        )
        for i in range(n)
    ]
    box_pot = [max(0.0, p) for p in box_pot]
    suffix_pot = [0.0] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix_pot[i] = suffix_pot[i + 1] + box_pot[i]

    wub = [0.0] * inst.n_abstract
    per_box_wmax: dict[tuple[int, int], float] = {}
    for (i, j, k), c in inst.w.items():
        key = (i, k)
        per_box_wmax[key] = max(per_box_wmax.get(key, 0.0), c)
    for (i, k), c in per_box_wmax.items():
        wub[k] += c
    abstract_ub = sum(sorted((u for u in wub if u > 0.0), reverse=True)[: inst.max_abstract])

    # candidate order per box: strongest static potential first (search speed
    # only; the final answer is the key-minimal assignment regardless)
    order = [
        sorted(
            range(len(inst.box_labels[i])),
            key=lambda j: (-(inst.unary[i][j] + zpot[i][j]), j),
        )
        for i in range(n)
    ]

    best_key: tuple | None = None
    best_obj = -math.inf
    best_choice: list[int | None] = []
    best_abstract: tuple[int, ...] = ()
    choice: list[int | None] = [None] * n

    def leaf(n_vis: int) -> None:
        nonlocal best_key, best_obj, best_choice, best_abstract
        abstract = _best_abstract(inst, choice, _abstract_allowance(inst, n_vis))
        obj = objective_value(inst, choice, abstract)
        key = _assignment_key(inst, choice, abstract, obj)
        if best_key is None or key < best_key:
            best_key = key
            best_obj = obj
            best_choice = list(choice)
            best_abstract = abstract

    def dfs(i: int, value: float, n_vis: int) -> None:
        if i == n:
            leaf(n_vis)
            return
        if best_key is not None and value + suffix_pot[i] + abstract_ub < best_obj - _PRUNE_EPS:
            return
        can_take = (inst.budget is None or n_vis < inst.budget) and (
            inst.visual_cap is None or n_vis < inst.visual_cap
        )
        if can_take:
            for j in order[i]:
                delta = inst.unary[i][j]
                for m in range(i):
                    jm = choice[m]
                    if jm is not None:
                        delta += inst.z.get((m, jm, i, j), 0.0)
                choice[i] = j
                dfs(i + 1, value + delta, n_vis + 1)
            choice[i] = None
        dfs(i + 1, value, n_vis)

    dfs(0, 0.0, 0)
    return _to_assignment(inst, best_choice, best_abstract, best_obj)


def brute_force(inst: IlpInstance) -> Assignment:
    """Exhaustive oracle: every feasible X/Y assignment, products for Z/W."""
    if inst.search_states() > BRUTE_FORCE_MAX_STATES:
        raise InstanceTooLarge(
            f"{inst.search_states():.3g} states exceed the "
            f"{BRUTE_FORCE_MAX_STATES} brute-force bound"
        )
    n = inst.n_boxes
    best_key = None
    best = None

    options = [[None, *range(len(labels))] for labels in inst.box_labels]
    for choice in itertools.product(*options):
        n_vis = sum(1 for j in choice if j is not None)
        if inst.budget is not None and n_vis > inst.budget:
            continue
        if inst.visual_cap is not None and n_vis > inst.visual_cap:
            continue
        allowance = _abstract_allowance(inst, n_vis)
        for r in range(allowance + 1):
            for abstract in itertools.combinations(range(inst.n_abstract), r):
                obj = objective_value(inst, choice, abstract)
                key = _assignment_key(inst, choice, abstract, obj)
                if best_key is None or key < best_key:
                    best_key = key
                    best = (list(choice), abstract, obj)
    assert best is not None  # the empty assignment is always feasible
    return _to_assignment(inst, *best)


def _to_assignment(inst, choice, abstract, obj) -> Assignment:
    chosen_visual = {
        inst.box_ids[i]: (None if j is None else inst.box_labels[i][j])
        for i, j in enumerate(choice)
    }
    chosen_abstract = frozenset(inst.abstract_labels[k] for k in abstract)
    return Assignment(
        chosen_visual=chosen_visual,
        chosen_abstract=chosen_abstract,
        objective_value=obj,
    )


def _indices_of(inst: IlpInstance, a: Assignment) -> tuple[list[int | None], list[int]]:
    box_index = {box_id: i for i, box_id in enumerate(inst.box_ids)}
    choice: list[int | None] = [None] * inst.n_boxes
    for box_id, label in a.chosen_visual.items():
        if box_id not in box_index:
            raise ContractViolation(f"unknown box id {box_id!r}")
        if label is None:
            continue
        i = box_index[box_id]
        try:
            choice[i] = inst.box_labels[i].index(label)
        except ValueError:
            raise ContractViolation(
                f"label {label!r} is not a candidate of box {box_id!r}"
            ) from None
    abstract = []
    for label in a.chosen_abstract:
        try:
            abstract.append(inst.abstract_labels.index(label))
        except ValueError:
            raise ContractViolation(f"unknown abstract label {label!r}") from None
    return choice, sorted(abstract)


def truncate_to_cap(inst: IlpInstance, a: Assignment, cap: int) -> Assignment:
    """Drop lowest-marginal labels until at most `cap` remain.

    Used when the joint budget constraint is disabled: the solver output is
    trimmed after the fact by each label's marginal objective contribution,
    recomputed after every drop. Marginal ties drop the lexicographically
    larger label.
    """
    choice, abstract = _indices_of(inst, a)
    while (sum(1 for j in choice if j is not None) + len(abstract)) > cap:
        marginals: list[tuple[float, str, str, int]] = []
        full = objective_value(inst, choice, abstract)
        for i, j in enumerate(choice):
            if j is None:
                continue
            reduced = list(choice)
            reduced[i] = None
            contribution = full - objective_value(inst, reduced, abstract)
            marginals.append((contribution, inst.box_labels[i][j], "visual", i))
        for k in abstract:
            reduced_abstract = [x for x in abstract if x != k]
            contribution = full - objective_value(inst, choice, reduced_abstract)
            marginals.append((contribution, inst.abstract_labels[k], "abstract", k))
        lowest = min(m[0] for m in marginals)
        tied = sorted((m for m in marginals if m[0] == lowest), key=lambda t: t[1])
        _, _, kind, idx = tied[-1]
        if kind == "visual":
            choice[idx] = None
        else:
            abstract.remove(idx)
    obj = objective_value(inst, choice, abstract)
    return _to_assignment(inst, choice, tuple(abstract), obj)


# --- output extraction ------------------------------------------------------------

@dataclass(frozen=True)
class RefinedLabel:
    label: str
    space: Space
    box: str  # box id, or GLOBAL for abstract labels


def extract_labels(a: Assignment, cands: CandidateSets) -> list[RefinedLabel]:
    """Flatten a feasible assignment into the refined label list.

    Visual labels come first in box input order, then abstract labels
    lexicographically. Raises ContractViolation when the assignment refers
    to labels outside the candidate space or overruns the abstract cap.
    """
    origin_of = {
        box_id: {c.label: c.origin for c in cands.per_box[box_id]}
        for box_id in cands.box_ids
    }
    abstract_labels = {c.label for c in cands.abstract}
    if len(a.chosen_abstract) > MAX_ABSTRACT_LABELS:
        raise ContractViolation(
            f"{len(a.chosen_abstract)} abstract labels exceed the cap of {MAX_ABSTRACT_LABELS}"
        )
    out: list[RefinedLabel] = []
    for box_id in cands.box_ids:
        label = a.chosen_visual.get(box_id)
        if label is None:
            continue
        if label not in origin_of[box_id]:
            raise ContractViolation(
                f"label {label!r} is not a candidate of box {box_id!r}"
            )
        out.append(
            RefinedLabel(label=label, space=SPACE_OF_ORIGIN[origin_of[box_id][label]], box=box_id)
        )
    for box_id in a.chosen_visual:
        if box_id not in origin_of:
            raise ContractViolation(f"unknown box id {box_id!r}")
    for label in sorted(a.chosen_abstract):
        if label not in abstract_labels:
            raise ContractViolation(f"unknown abstract label {label!r}")
        out.append(RefinedLabel(label=label, space=Space.AL, box=GLOBAL_BOX))
    return out


# --- external solver dump -----------------------------------------------------------

def write_lp(inst: IlpInstance, fh) -> None:
    """Write an LP-format view of the instance, linearization triples included."""

    def fmt(c: float) -> str:
        return f"{c:.9g}"

    terms = []
    for i, per_box in enumerate(inst.unary):
        for j, c in enumerate(per_box):
            terms.append(f"{fmt(c)} X_{i}_{j}")
    for k in range(inst.n_abstract):
        terms.append(f"0 Y_{k}")
    for (i, j, m, k) in sorted(inst.z):
        terms.append(f"{fmt(inst.z[(i, j, m, k)])} Z_{i}_{j}_{m}_{k}")
    for (i, j, k) in sorted(inst.w):
        terms.append(f"{fmt(inst.w[(i, j, k)])} W_{i}_{j}_{k}")

    fh.write("\\ joint label selection instance\n")
    fh.write("Maximize\n obj: " + (" + ".join(terms) if terms else "0") + "\n")
    fh.write("Subject To\n")
    for i, labels in enumerate(inst.box_labels):
        if labels:
            row = " + ".join(f"X_{i}_{j}" for j in range(len(labels)))
            fh.write(f" box_{i}: {row} <= 1\n")
    if inst.n_abstract:
        row = " + ".join(f"Y_{k}" for k in range(inst.n_abstract))
        fh.write(f" abstract_cap: {row} <= {inst.max_abstract}\n")
    x_all = [f"X_{i}_{j}" for i, labels in enumerate(inst.box_labels) for j in range(len(labels))]
    if inst.budget is not None and (x_all or inst.n_abstract):
        row = " + ".join(x_all + [f"Y_{k}" for k in range(inst.n_abstract)])
        fh.write(f" total_budget: {row} <= {inst.budget}\n")
    if inst.visual_cap is not None and x_all:
        fh.write(f" visual_cap: {' + '.join(x_all)} <= {inst.visual_cap}\n")
    for (i, j, m, k) in sorted(inst.z):
        name = f"Z_{i}_{j}_{m}_{k}"
        fh.write(f" lin_{name}_a: {name} - X_{i}_{j} <= 0\n")
        fh.write(f" lin_{name}_b: {name} - X_{m}_{k} <= 0\n")
        fh.write(f" lin_{name}_c: X_{i}_{j} + X_{m}_{k} - {name} <= 1\n")
    for (i, j, k) in sorted(inst.w):
        name = f"W_{i}_{j}_{k}"
        fh.write(f" lin_{name}_a: {name} - X_{i}_{j} <= 0\n")
        fh.write(f" lin_{name}_b: {name} - Y_{k} <= 0\n")
        fh.write(f" lin_{name}_c: X_{i}_{j} + Y_{k} - {name} <= 1\n")
    fh.write("Binaries\n")
    names = x_all + [f"Y_{k}" for k in range(inst.n_abstract)]
    names += [f"Z_{i}_{j}_{m}_{k}" for (i, j, m, k) in sorted(inst.z)]
    names += [f"W_{i}_{j}_{k}" for (i, j, k) in sorted(inst.w)]
    for name in names:
        fh.write(f" {name}\n")
    fh.write("End\n")

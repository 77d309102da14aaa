"""Background-knowledge tables: parsed once, validated, then immutable.

All file formats are UTF-8 text; lines starting with `#` are comments and
blank lines are skipped. Loaders are pure functions of the file contents,
so loading the same file twice yields equal tables.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import LoadError
from .labels import canon_label, tokens
from .vsim import VsimTable

log = logging.getLogger(__name__)

HYPERNYM_MAX_DEPTH = 3
MAX_PARENTS_PER_CHILD = 3
PERMITTED_RELATIONS = ("usedFor", "hasProperty")


def _open(path):
    try:
        return open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise LoadError(path, f"cannot open: {exc.strerror}") from exc


def _data_lines(fh):
    """Yield (lineno, stripped line) skipping blanks and # comments."""
    for lineno, raw in enumerate(fh, start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield lineno, line


def _tsv_fields(path, lineno, line, n):
    parts = line.split("\t")
    if len(parts) != n:
        raise LoadError(path, f"expected {n} tab-separated fields, got {len(parts)}", lineno)
    return parts


# --- embeddings ---------------------------------------------------------------

@dataclass
class EmbeddingTable:
    """Dense word vectors keyed by token; every vector has length `dim`."""

    dim: int
    vectors: dict[str, np.ndarray]
    duplicates: int = 0  # tokens that appeared more than once (last wins)

    def vector(self, token: str) -> np.ndarray | None:
        return self.vectors.get(token)

    def label_vector(self, label: str) -> np.ndarray | None:
        """Mean of in-vocabulary token vectors; None if all tokens are OOV."""
        in_vocab = [self.vectors[t] for t in tokens(label) if t in self.vectors]
        if not in_vocab:
            return None
        if len(in_vocab) == 1:
            return in_vocab[0]
        return np.mean(in_vocab, axis=0)

    def __len__(self) -> int:
        return len(self.vectors)


def load_embeddings(path) -> EmbeddingTable:
    """Parse `token v1 v2 ... vd` lines (whitespace separated).

    All rows must agree on the dimension; non-numeric or non-finite
    components are load errors. Duplicate tokens resolve last-wins and are
    counted in the returned table.
    """
    vectors: dict[str, np.ndarray] = {}
    dim = 0
    duplicates = 0
    with _open(path) as fh:
        for lineno, line in _data_lines(fh):
            parts = line.split()
            if len(parts) < 2:
                raise LoadError(path, "expected `token v1 ... vd`", lineno)
            token = canon_label(parts[0])
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=float)
            except ValueError as exc:
                raise LoadError(path, f"non-numeric vector component: {exc}", lineno) from exc
            if not np.all(np.isfinite(vec)):
                raise LoadError(path, "non-finite vector component", lineno)
            if dim == 0 and not vectors:
                dim = vec.size
            elif vec.size != dim:
                raise LoadError(
                    path, f"dimension mismatch: expected {dim}, got {vec.size}", lineno
                )
            if token in vectors:
                duplicates += 1
            vec.setflags(write=False)
            vectors[token] = vec
    if duplicates:
        log.warning("%s: %d duplicate embedding tokens (last wins)", path, duplicates)
    return EmbeddingTable(dim=dim, vectors=vectors, duplicates=duplicates)


# --- frequency allowlist -------------------------------------------------------

@dataclass
class FrequencyAllowlist:
    """Popularity scores used to prune exotic hypernyms; absent labels score 0."""

    entries: dict[str, float] = field(default_factory=dict)

    def score(self, label: str) -> float:
        return self.entries.get(label, 0.0)


def load_allowlist(path) -> FrequencyAllowlist:
    """Parse `label<TAB>score` rows; scores must be nonnegative reals."""
    entries: dict[str, float] = {}
    with _open(path) as fh:
        for lineno, line in _data_lines(fh):
            label_s, score_s = _tsv_fields(path, lineno, line, 2)
            try:
                label = canon_label(label_s)
                score = float(score_s)
            except ValueError as exc:
                raise LoadError(path, str(exc), lineno) from exc
            if not math.isfinite(score) or score < 0:
                raise LoadError(path, f"negative or non-finite score {score_s!r}", lineno)
            entries[label] = score
    return FrequencyAllowlist(entries=entries)


# --- hypernyms -----------------------------------------------------------------

@dataclass(frozen=True)
class HypernymEdge:
    child: str
    parent: str
    depth: int  # levels above the child, 1..3


def load_hypernyms(path, allowlist: FrequencyAllowlist, threshold: float = 0.0) -> set[HypernymEdge]:
    """Parse `child<TAB>parent<TAB>depth` rows into the retained edge set.

    Rows with depth outside 1..3, self-loops, or parents scoring below the
    allowlist threshold are dropped with a warning. A child keeps at most the
    3 best-scoring parents (ties broken lexicographically by parent).
    Retention is deterministic under permutation of the input lines.
    """
    by_pair: dict[tuple[str, str], int] = {}  # (child, parent) -> min depth
    dropped = 0
    with _open(path) as fh:
        for lineno, line in _data_lines(fh):
            child_s, parent_s, depth_s = _tsv_fields(path, lineno, line, 3)
            try:
                child = canon_label(child_s)
                parent = canon_label(parent_s)
                depth = int(depth_s)
            except ValueError as exc:
                raise LoadError(path, str(exc), lineno) from exc
            if not 1 <= depth <= HYPERNYM_MAX_DEPTH:
                log.warning("%s:%d dropped: depth %d outside 1..%d",
                            path, lineno, depth, HYPERNYM_MAX_DEPTH)
                dropped += 1
                continue
            if child == parent:
                log.warning("%s:%d dropped: self-loop %r", path, lineno, child)
                dropped += 1
                continue
            if allowlist.score(parent) < threshold:
                log.warning("%s:%d dropped: parent %r below allowlist threshold",
                            path, lineno, parent)
                dropped += 1
                continue
            key = (child, parent)
            by_pair[key] = min(depth, by_pair.get(key, depth))

    by_child: dict[str, list[tuple[str, int]]] = {}
    for (child, parent), depth in by_pair.items():
        by_child.setdefault(child, []).append((parent, depth))

    edges: set[HypernymEdge] = set()
    for child, parents in by_child.items():
        if len(parents) > MAX_PARENTS_PER_CHILD:
            parents = sorted(parents, key=lambda pd: (-allowlist.score(pd[0]), pd[0]))
            parents = parents[:MAX_PARENTS_PER_CHILD]
        for parent, depth in parents:
            edges.add(HypernymEdge(child=child, parent=parent, depth=depth))
    if dropped:
        log.warning("%s: %d hypernym rows dropped", path, dropped)
    return edges


def build_parent_index(edges: Iterable[HypernymEdge]) -> dict[str, tuple[str, ...]]:
    """child -> sorted tuple of retained hypernym parents."""
    index: dict[str, set[str]] = {}
    for edge in edges:
        index.setdefault(edge.child, set()).add(edge.parent)
    return {child: tuple(sorted(parents)) for child, parents in index.items()}


# --- commonsense assertions ----------------------------------------------------

@dataclass(frozen=True)
class AbstractAssertion:
    subject: str   # visual label
    relation: str  # usedFor | hasProperty
    object: str    # abstract label or phrase
    score: float   # positive source weight


def load_assertions(path) -> set[AbstractAssertion]:
    """Parse `subject<TAB>relation<TAB>object<TAB>score` rows.

    Only usedFor/hasProperty survive; rows with other relations or
    non-positive scores are dropped (counted in one summary warning).
    Non-numeric scores are load errors.
    """
    assertions: set[AbstractAssertion] = set()
    dropped_relation = 0
    dropped_score = 0
    with _open(path) as fh:
        for lineno, line in _data_lines(fh):
            subj_s, rel_s, obj_s, score_s = _tsv_fields(path, lineno, line, 4)
            try:
                score = float(score_s)
            except ValueError as exc:
                raise LoadError(path, f"non-numeric score {score_s!r}", lineno) from exc
            if not math.isfinite(score):
                raise LoadError(path, f"non-finite score {score_s!r}", lineno)
            rel = rel_s.strip()
            if rel not in PERMITTED_RELATIONS:
                dropped_relation += 1
                continue
            if score <= 0:
                dropped_score += 1
                continue
            try:
                subject = canon_label(subj_s)
                obj = canon_label(obj_s)
            except ValueError as exc:
                raise LoadError(path, str(exc), lineno) from exc
            assertions.add(
                AbstractAssertion(subject=subject, relation=rel, object=obj, score=score)
            )
    if dropped_relation or dropped_score:
        log.warning("%s: dropped %d rows with unsupported relations, %d with non-positive scores",
                    path, dropped_relation, dropped_score)
    return assertions


# --- co-location counts ----------------------------------------------------------

class ColocTable:
    """Symmetric co-tagging counts with per-label marginals."""

    def __init__(self, counts: dict[tuple[str, str], int] | None = None):
        self._counts: dict[tuple[str, str], int] = {}
        self.totals: dict[str, int] = {}
        self.max_count = 0
        for (a, b), n in (counts or {}).items():
            self._add(a, b, n)

    def _add(self, a: str, b: str, n: int) -> None:
        if a == b:
            return
        key = (a, b) if a < b else (b, a)
        self._counts[key] = self._counts.get(key, 0) + n
        self.totals[a] = self.totals.get(a, 0) + n
        self.totals[b] = self.totals.get(b, 0) + n
        if self._counts[key] > self.max_count:
            self.max_count = self._counts[key]

    def get(self, a: str, b: str) -> int:
        if a == b:
            return 0
        key = (a, b) if a < b else (b, a)
        return self._counts.get(key, 0)

    def pairs(self):
        for a, b in sorted(self._counts):
            yield a, b, self._counts[(a, b)]

    def __len__(self):
        return len(self._counts)

    def __eq__(self, other):
        return isinstance(other, ColocTable) and self._counts == other._counts


def load_coloc(path) -> ColocTable:
    """Parse `label1<TAB>label2<TAB>count`; repeated pairs (either order) sum."""
    table = ColocTable()
    self_pairs = 0
    with _open(path) as fh:
        for lineno, line in _data_lines(fh):
            a_s, b_s, count_s = _tsv_fields(path, lineno, line, 3)
            try:
                a = canon_label(a_s)
                b = canon_label(b_s)
                count = int(count_s)
            except ValueError as exc:
                raise LoadError(path, str(exc), lineno) from exc
            if count < 0:
                raise LoadError(path, f"negative count {count}", lineno)
            if a == b:
                self_pairs += 1
                continue
            table._add(a, b, count)
    if self_pairs:
        log.warning("%s: ignored %d self-pair rows", path, self_pairs)
    return table


# --- assembled store --------------------------------------------------------------

@dataclass
class KnowledgeStore:
    """Everything the refinement pipeline reads; immutable after assembly.

    Safe for concurrent reads: tables are built single-threaded here and
    never mutated afterwards.
    """

    embeddings: EmbeddingTable
    hypernym_edges: frozenset[HypernymEdge]
    parents: Mapping[str, tuple[str, ...]]          # child -> retained parents
    assertions: tuple[AbstractAssertion, ...]        # sorted, deterministic
    by_subject: Mapping[str, tuple[AbstractAssertion, ...]]
    coloc: ColocTable
    allowlist: FrequencyAllowlist
    vsim: VsimTable

    @classmethod
    def assemble(
        cls,
        embeddings: EmbeddingTable | None = None,
        hypernym_edges: Iterable[HypernymEdge] = (),
        assertions: Iterable[AbstractAssertion] = (),
        coloc: ColocTable | None = None,
        allowlist: FrequencyAllowlist | None = None,
        vsim: VsimTable | None = None,
    ) -> "KnowledgeStore":
        edge_set = frozenset(hypernym_edges)
        sorted_assertions = tuple(
            sorted(assertions, key=lambda a: (a.subject, a.object, a.relation, -a.score))
        )
        by_subject: dict[str, list[AbstractAssertion]] = {}
        for a in sorted_assertions:
            by_subject.setdefault(a.subject, []).append(a)
        return cls(
            embeddings=embeddings or EmbeddingTable(dim=0, vectors={}),
            hypernym_edges=edge_set,
            parents=build_parent_index(edge_set),
            assertions=sorted_assertions,
            by_subject={s: tuple(v) for s, v in by_subject.items()},
            coloc=coloc or ColocTable(),
            allowlist=allowlist or FrequencyAllowlist(),
            vsim=vsim or VsimTable(),
        )

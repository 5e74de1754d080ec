"""Batch-wise training-set expansion under a labeling budget.

Each batch sorts the pool into three groups, using two cuts on the
nearest-neighbor distance to the current training set:

* ``t_low`` comes from the labeling budget. The ``budget`` most distant pool
  samples are selected for labeling. The rest are ``InsufficientNovelty``.
* ``t_high`` comes from the error tolerance. A selected sample within it is
  ``NovelTrusted``. One beyond it is ``NovelAbstain``.

Both selected categories join the training set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from .confidence import DistanceErrorModel, threshold_from_budget, threshold_from_tolerance
from .embedspace import EmbeddingSet
from .errors import DataError, ParameterError
from .nnindex import NeighborIndex, nn_distance

TRAINING = "Training"
NOVEL_TRUSTED = "NovelTrusted"
INSUFFICIENT_NOVELTY = "InsufficientNovelty"
NOVEL_ABSTAIN = "NovelAbstain"
CATEGORIES = (TRAINING, NOVEL_TRUSTED, INSUFFICIENT_NOVELTY, NOVEL_ABSTAIN)


@dataclass(frozen=True)
class SelectionEntry:
    id: int
    nn_dist: float
    category: str


@dataclass(frozen=True)
class SelectionReport:
    batch_index: int
    entries: tuple[SelectionEntry, ...]
    t_low: float
    t_high: float
    budget: int

    def ids_in(self, *categories: str) -> list[int]:
        return [e.id for e in self.entries if e.category in categories]

    def counts(self) -> dict[str, int]:
        out = {c: 0 for c in CATEGORIES}
        for e in self.entries:
            out[e.category] += 1
        return out

    @property
    def selected(self) -> list[int]:
        return self.ids_in(NOVEL_TRUSTED, NOVEL_ABSTAIN)

    @property
    def pool_ids(self) -> list[int]:
        return self.ids_in(NOVEL_TRUSTED, NOVEL_ABSTAIN, INSUFFICIENT_NOVELTY)


@dataclass(frozen=True)
class ExpansionState:
    training: tuple[int, ...]
    pool: tuple[int, ...]
    history: tuple[SelectionReport, ...] = field(default=())

    def __post_init__(self):
        if set(self.training) & set(self.pool):
            raise DataError("training and pool ids must be disjoint")

    @classmethod
    def from_embeddings(cls, emb: EmbeddingSet) -> "ExpansionState":
        return cls(tuple(sorted(emb.split_ids("train"))), tuple(sorted(emb.split_ids("new"))))


def categorize_batch(
    state: ExpansionState,
    embeddings: EmbeddingSet,
    budget: int,
    tolerance: float,
    calibration: DistanceErrorModel,
    k: int = 1,
) -> SelectionReport:
    if not state.pool:
        raise ParameterError("cannot categorize an empty pool")
    if not state.training:
        raise ParameterError("cannot categorize against an empty training set")
    if budget < 0:
        raise ParameterError(f"budget must be >= 0, got {budget}")
    index = NeighborIndex(state.training, embeddings.vectors(state.training))
    kk = min(k, len(index))
    dists = [(i, nn_distance(index, embeddings.vectors([i])[0], kk)) for i in state.pool]
    t_low, selected = threshold_from_budget(dists, budget)
    t_high = math.inf if math.isinf(tolerance) else threshold_from_tolerance(calibration, tolerance)
    chosen = set(selected)
    entries = [SelectionEntry(i, 0.0, TRAINING) for i in state.training]
    for i, d in dists:
        if i not in chosen:
            cat = INSUFFICIENT_NOVELTY
        elif d <= t_high:
            cat = NOVEL_TRUSTED
        else:
            cat = NOVEL_ABSTAIN
        entries.append(SelectionEntry(i, d, cat))
    return SelectionReport(len(state.history), tuple(entries), t_low, t_high, budget)


def apply_batch(state: ExpansionState, report: SelectionReport) -> ExpansionState:
    if sorted(report.pool_ids) != sorted(state.pool) or sorted(report.ids_in(TRAINING)) != sorted(state.training):
        raise DataError(f"report for batch {report.batch_index} does not match the expansion state")
    moved = set(report.selected)
    return ExpansionState(
        training=tuple(sorted(state.training + tuple(moved))),
        pool=tuple(i for i in state.pool if i not in moved),
        history=state.history + (report,),
    )


def empty_report(state: ExpansionState, budget: int) -> SelectionReport:
    entries = tuple(SelectionEntry(i, 0.0, TRAINING) for i in state.training)
    return SelectionReport(len(state.history), entries, math.inf, math.inf, budget)


# (training ids, batch index) -> (recomputed embeddings, recalibrated model)
RetrainFn = Callable[[tuple[int, ...], int], tuple[EmbeddingSet, DistanceErrorModel]]


def run_expansion(
    state: ExpansionState,
    embeddings: EmbeddingSet,
    calibration: DistanceErrorModel,
    batches: int,
    budget: int,
    tolerance: float,
    k: int = 1,
    retrain: RetrainFn | None = None,
) -> tuple[ExpansionState, list[SelectionReport], list[EmbeddingSet]]:
    """Run ``batches`` rounds of categorize/apply.

    With ``retrain`` given, it is called between batches on the grown
    training set and its embeddings and calibration replace the current ones.
    Returns the final state, the per-batch reports, and the embedding set
    each report was computed in.
    """
    if batches < 1:
        raise ParameterError(f"batches must be >= 1, got {batches}")
    reports, spaces = [], []
    for b in range(batches):
        if b > 0 and retrain is not None and state.pool:
            embeddings, calibration = retrain(state.training, b)
        if state.pool:
            report = categorize_batch(state, embeddings, budget, tolerance, calibration, k)
        else:
            report = empty_report(state, budget)
        state = apply_batch(state, report)
        reports.append(report)
        spaces.append(embeddings)
    return state, reports, spaces

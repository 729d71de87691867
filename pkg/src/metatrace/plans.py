"""Metadata-label assignment plans: the uniform protocol and the five
counterfactual setups (all-same, all-diff, pos-same, neg-same, uniform).

Plans are either global (one class per training image, independent of the
query) or query-conditional (class decided by whether a training image
shares the query's semantic label). They serialize as compact descriptors,
never as materialized maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from metatrace.labels import LabelSpace
from metatrace.seeding import derive_rng

SETUP_KINDS = ("all_same", "all_diff", "pos_same", "neg_same", "uniform")
UNIFORM_NUM_SEEDS = 10  # seeds averaged for the uniform setup


class PlanError(ValueError):
    """Raised on inconsistent scheme or plan parameters."""


@dataclass(frozen=True)
class AssignmentScheme:
    """One concrete setup cell: kind plus its class indices / seed."""

    kind: str
    space: LabelSpace
    test_class: int
    train_class: int | None = None  # p_j for all_diff / pos_same / neg_same
    seed: int | None = None  # uniform only

    def __post_init__(self):
        if self.kind not in SETUP_KINDS:
            raise PlanError(f"unknown setup kind {self.kind!r}")
        M = self.space.M
        if not 0 <= self.test_class < M:
            raise PlanError(f"test_class {self.test_class} out of range for M={M}")
        if self.kind in ("all_diff", "pos_same", "neg_same"):
            if self.train_class is None:
                raise PlanError(f"{self.kind} requires a train_class")
            if not 0 <= self.train_class < M:
                raise PlanError(f"train_class {self.train_class} out of range for M={M}")
            if self.train_class == self.test_class:
                raise PlanError(f"{self.kind} requires train_class != test_class")
        if self.kind == "uniform" and self.seed is None:
            raise PlanError("uniform requires a seed")

    def to_json(self) -> dict:
        out = {
            "kind": self.kind,
            "family": self.space.family,
            "test_class": self.test_class,
        }
        if self.train_class is not None:
            out["train_class"] = self.train_class
        if self.seed is not None:
            out["seed"] = self.seed
        return out


@dataclass(frozen=True)
class AssignmentPlan:
    """Resolved assignment: global map or query-conditional match rule."""

    kind: str  # "global" | "query_conditional"
    test_class: int
    global_classes: np.ndarray | None = None  # class index per train row
    match_class: int | None = None  # class for semantic matches
    mismatch_class: int | None = None

    def classes_for_query(
        self, train_semantic: np.ndarray, query_semantic: int | None = None
    ) -> np.ndarray:
        """Per-training-row class indices for one query."""
        if self.kind == "global":
            return self.global_classes
        if query_semantic is None:
            raise PlanError("query-conditional plan needs the query's semantic label")
        match = train_semantic == query_semantic
        return np.where(match, self.match_class, self.mismatch_class)


def assign_uniform(train_ids: list[str], space: LabelSpace, seed: int) -> AssignmentPlan:
    """Draw each training image's class independently uniform over M."""
    rng = derive_rng(seed, f"uniform-assign:{space.family}")
    classes = rng.integers(0, space.M, size=len(train_ids))
    # test class is chosen by the caller; keep a placeholder of 0
    return AssignmentPlan(kind="global", test_class=0, global_classes=classes)


def resolve_plan(scheme: AssignmentScheme, train_ids: list[str]) -> AssignmentPlan:
    """Turn a scheme into an executable plan for a fixed training set."""
    n = len(train_ids)
    if scheme.kind == "all_same":
        classes = np.full(n, scheme.test_class, dtype=np.int64)
        return AssignmentPlan(
            kind="global", test_class=scheme.test_class, global_classes=classes
        )
    if scheme.kind == "all_diff":
        classes = np.full(n, scheme.train_class, dtype=np.int64)
        return AssignmentPlan(
            kind="global", test_class=scheme.test_class, global_classes=classes
        )
    if scheme.kind == "uniform":
        plan = assign_uniform(train_ids, scheme.space, scheme.seed)
        return AssignmentPlan(
            kind="global",
            test_class=scheme.test_class,
            global_classes=plan.global_classes,
        )
    return assign_counterfactual(scheme)


def assign_counterfactual(scheme: AssignmentScheme) -> AssignmentPlan:
    """Query-conditional rule for the pos-same / neg-same setups."""
    if scheme.kind not in ("pos_same", "neg_same"):
        raise PlanError(f"counterfactual rule undefined for {scheme.kind!r}")
    if scheme.kind == "pos_same":
        match_class, mismatch_class = scheme.test_class, scheme.train_class
    else:
        match_class, mismatch_class = scheme.train_class, scheme.test_class
    return AssignmentPlan(
        kind="query_conditional",
        test_class=scheme.test_class,
        match_class=match_class,
        mismatch_class=mismatch_class,
    )


def enumerate_setup_grid(
    space: LabelSpace,
    kind: str,
    seeds: list[int] | None = None,
) -> list[AssignmentScheme]:
    """All concrete schemes of one setup kind.

    all_same yields M cells; the paired kinds yield every ordered (p_i, p_j)
    with i != j; uniform yields one cell per (p_i, seed) over 10 seeds.
    """
    if kind not in SETUP_KINDS:
        raise PlanError(f"unknown setup kind {kind!r}")
    M = space.M
    if kind == "all_same":
        return [AssignmentScheme(kind=kind, space=space, test_class=i) for i in range(M)]
    if kind == "uniform":
        if seeds is None:
            seeds = list(range(UNIFORM_NUM_SEEDS))
        return [
            AssignmentScheme(kind=kind, space=space, test_class=i, seed=s)
            for i in range(M)
            for s in seeds
        ]
    return [
        AssignmentScheme(kind=kind, space=space, test_class=i, train_class=j)
        for i in range(M)
        for j in range(M)
        if i != j
    ]

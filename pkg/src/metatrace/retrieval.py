"""Paired-capture retrieval: recall@k under same-type vs different-type
negatives. Each pair member serves once as query; its positive is the other
member of the pair, and the negative pool is every non-pair image of the
required camera type.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from metatrace.coredata import EmbeddingSet, SampleRecord
from metatrace.seeding import derive_rng

MODES = ("same", "different")


class RetrievalError(ValueError):
    """Raised on malformed pairs or invalid retrieval parameters."""


@dataclass(frozen=True)
class RetrievalInstance:
    query_id: str
    positive_id: str
    negative_ids: tuple[str, ...]
    mode: str


@dataclass(frozen=True)
class RetrievalReport:
    mode: str
    recall: dict[int, float]
    positive_ranks: tuple[int, ...]  # 1-based rank of the positive per query
    n_queries: int

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "recall": {str(k): v for k, v in self.recall.items()},
            "n_queries": self.n_queries,
            "positive_ranks": list(self.positive_ranks),
        }


def _check_pairs(records: list[SampleRecord]) -> dict[str, list[SampleRecord]]:
    pairs: dict[str, list[SampleRecord]] = {}
    for rec in records:
        if rec.pair_id is None or rec.camera_type is None:
            raise RetrievalError(
                f"record {rec.sample_id!r} lacks pair_id or camera_type"
            )
        pairs.setdefault(rec.pair_id, []).append(rec)
    for pid, members in pairs.items():
        if len(members) != 2:
            raise RetrievalError(
                f"pair {pid!r} has {len(members)} members, expected 2"
            )
        if members[0].camera_type == members[1].camera_type:
            raise RetrievalError(f"pair {pid!r} members share a camera type")
    return pairs


def build_instances(
    records: list[SampleRecord],
    mode: str,
    negative_pool_size: int | None = None,
    seed: int = 0,
) -> list[RetrievalInstance]:
    """One retrieval instance per record-as-query, negatives filtered by mode."""
    if mode not in MODES:
        raise RetrievalError(f"mode must be one of {MODES}, got {mode!r}")
    pairs = _check_pairs(records)
    instances = []
    for rec in records:
        partner = next(
            m for m in pairs[rec.pair_id] if m.sample_id != rec.sample_id
        )
        if mode == "same":
            negatives = [
                r.sample_id
                for r in records
                if r.pair_id != rec.pair_id and r.camera_type == rec.camera_type
            ]
        else:
            negatives = [
                r.sample_id
                for r in records
                if r.pair_id != rec.pair_id and r.camera_type != rec.camera_type
            ]
        if negative_pool_size is not None and negative_pool_size < len(negatives):
            rng = derive_rng(seed, f"retrieval-pool:{rec.sample_id}:{mode}")
            keep = rng.choice(len(negatives), size=negative_pool_size, replace=False)
            negatives = [negatives[i] for i in sorted(keep)]
        instances.append(
            RetrievalInstance(
                query_id=rec.sample_id,
                positive_id=partner.sample_id,
                negative_ids=tuple(negatives),
                mode=mode,
            )
        )
    return instances


def recall_at_k(
    instances: list[RetrievalInstance],
    emb: EmbeddingSet,
    k_list: list[int],
) -> RetrievalReport:
    """Fraction of instances whose positive ranks within the top k by cosine."""
    if not instances:
        raise RetrievalError("no instances to evaluate")
    for k in k_list:
        if k < 1:
            raise RetrievalError(f"k must be >= 1, got {k}")
    index = emb.row_index()
    unit = emb.matrix.astype(np.float64)
    norms = np.linalg.norm(unit, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    unit = unit / norms
    mode = instances[0].mode
    ranks = []
    for inst in instances:
        missing = [
            sid
            for sid in (inst.query_id, inst.positive_id, *inst.negative_ids)
            if sid not in index
        ]
        if missing:
            raise RetrievalError(f"ids missing from embeddings: {missing[:5]}")
        q = unit[index[inst.query_id]]
        db_ids = [inst.positive_id, *inst.negative_ids]
        db = unit[np.array([index[sid] for sid in db_ids], dtype=np.intp)]
        sims = db @ q
        order = np.lexsort((np.arange(len(db_ids)), -sims))
        rank = int(np.nonzero(order == 0)[0][0]) + 1  # positive occupies slot 0
        ranks.append(rank)
    ranks_arr = np.array(ranks)
    recall = {k: float(np.mean(ranks_arr <= k)) for k in k_list}
    return RetrievalReport(
        mode=mode,
        recall=recall,
        positive_ranks=tuple(ranks),
        n_queries=len(instances),
    )

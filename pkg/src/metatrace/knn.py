"""Cosine kNN semantic classification under counterfactual assignment plans,
neighbor metadata-match rates, conditional similarity histograms, and
qualitative neighbor dumps.

All similarity accumulation happens in float64 over float32 inputs, so the
vectorized paths agree bit-stably with naive oracles across batch sizes.
Tie-breaking is fixed: similarity ties go to the lower row index, plurality
vote ties to the tied class holding the best-ranked neighbor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from metatrace.coredata import EmbeddingSet, VariantEmbeddingTensor
from metatrace.plans import AssignmentScheme, resolve_plan


class KnnError(ValueError):
    """Raised on invalid kNN inputs (dim mismatch, k out of range)."""


@dataclass(frozen=True)
class KnnConfig:
    """k and the fixed cosine/plurality voting rule."""

    k: int = 10

    def __post_init__(self):
        if self.k < 1:
            raise KnnError(f"k must be >= 1, got {self.k}")


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    mat = matrix.astype(np.float64)
    norms = np.linalg.norm(mat, axis=-1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return mat / norms


def _rank_neighbors(sims: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k highest similarities; ties to lower index."""
    # lexsort: primary key last. Sort by (-sim, index) ascending.
    order = np.lexsort((np.arange(sims.shape[0]), -sims))
    return order[:k]


def _vote(neighbor_labels: np.ndarray) -> int:
    """Plurality over ranked neighbor labels, ties to the best-ranked class."""
    labels, counts = np.unique(neighbor_labels, return_counts=True)
    best = counts.max()
    tied = set(labels[counts == best].tolist())
    if len(tied) == 1:
        return int(next(iter(tied)))
    for lab in neighbor_labels:  # ranked order: first tied class wins
        if int(lab) in tied:
            return int(lab)
    raise AssertionError("unreachable: some tied class must appear")


def knn_predict(
    query: np.ndarray,
    train_matrix: np.ndarray,
    labels: np.ndarray,
    cfg: KnnConfig,
) -> int:
    """Predict the plurality label among the k nearest cosine neighbors."""
    query = np.asarray(query)
    train_matrix = np.asarray(train_matrix)
    if train_matrix.ndim != 2 or train_matrix.shape[0] == 0:
        raise KnnError("training matrix must be nonempty and 2-D")
    if query.shape[-1] != train_matrix.shape[1]:
        raise KnnError(
            f"dim mismatch: query {query.shape[-1]}, train {train_matrix.shape[1]}"
        )
    if cfg.k > train_matrix.shape[0]:
        raise KnnError(f"k={cfg.k} exceeds training size {train_matrix.shape[0]}")
    sims = _unit_rows(train_matrix) @ _unit_rows(query.reshape(1, -1))[0]
    ranked = _rank_neighbors(sims, cfg.k)
    return _vote(np.asarray(labels)[ranked])


def evaluate_scheme(
    test: EmbeddingSet,
    test_semantic: np.ndarray,
    tensor: VariantEmbeddingTensor,
    train_semantic: np.ndarray,
    scheme: AssignmentScheme,
    cfg: KnnConfig,
) -> float:
    """Mean kNN correctness with per-query counterfactual training sets.

    Each training row's embedding is gathered from the tensor column chosen
    by the scheme's plan (global, or conditioned on whether the row shares
    the query's semantic label). Test embeddings must already correspond to
    the scheme's test class.
    """
    if tuple(tensor.class_names) != tuple(scheme.space.class_names):
        raise KnnError(
            f"tensor classes {tensor.class_names} do not match scheme space "
            f"{scheme.space.class_names}"
        )
    if test.d != tensor.d:
        raise KnnError(f"dim mismatch: test {test.d}, tensor {tensor.d}")
    n = tensor.n
    if cfg.k > n:
        raise KnnError(f"k={cfg.k} exceeds training size {n}")
    train_semantic = np.asarray(train_semantic)
    test_semantic = np.asarray(test_semantic)
    plan = resolve_plan(scheme, list(tensor.ids))
    queries = _unit_rows(test.matrix)

    if plan.kind == "global":
        gathered = tensor.tensor[np.arange(n), plan.global_classes, :]
        sims_all = queries @ _unit_rows(gathered).T  # q x n
        correct = 0
        for qi in range(queries.shape[0]):
            ranked = _rank_neighbors(sims_all[qi], cfg.k)
            correct += int(_vote(train_semantic[ranked]) == test_semantic[qi])
        return correct / queries.shape[0]

    # Query-conditional: blend the two relevant per-column similarity maps.
    unit_match = _unit_rows(tensor.tensor[:, plan.match_class, :])
    unit_mismatch = _unit_rows(tensor.tensor[:, plan.mismatch_class, :])
    sims_match = queries @ unit_match.T
    sims_mismatch = queries @ unit_mismatch.T
    correct = 0
    for qi in range(queries.shape[0]):
        is_match = train_semantic == test_semantic[qi]
        sims = np.where(is_match, sims_match[qi], sims_mismatch[qi])
        ranked = _rank_neighbors(sims, cfg.k)
        correct += int(_vote(train_semantic[ranked]) == test_semantic[qi])
    return correct / queries.shape[0]


def neighbor_match_rate(
    emb: EmbeddingSet, meta_labels: np.ndarray, k_list: list[int]
) -> dict[int, float]:
    """Percentage of each point's top-k neighbors sharing its metadata label."""
    meta_labels = np.asarray(meta_labels)
    n = emb.n
    if meta_labels.shape[0] != n:
        raise KnnError(f"{meta_labels.shape[0]} labels for {n} embeddings")
    for k in k_list:
        if k >= n:
            raise KnnError(f"k={k} requires more than {n} points (self excluded)")
    unit = _unit_rows(emb.matrix)
    sims = unit @ unit.T
    np.fill_diagonal(sims, -np.inf)  # self excluded
    max_k = max(k_list)
    rates = {k: 0.0 for k in k_list}
    for qi in range(n):
        ranked = _rank_neighbors(sims[qi], max_k)
        same = meta_labels[ranked] == meta_labels[qi]
        for k in k_list:
            rates[k] += float(np.mean(same[:k]))
    return {k: 100.0 * v / n for k, v in rates.items()}


@dataclass(frozen=True)
class SimilarityHistogram:
    """Four conditional cosine densities keyed by (semantic, metadata) match."""

    bin_edges: np.ndarray
    counts: dict[tuple[bool, bool], np.ndarray] = field(default_factory=dict)

    def density(self, sem_match: bool, meta_match: bool) -> np.ndarray:
        counts = self.counts[(sem_match, meta_match)]
        total = counts.sum()
        return counts / total if total > 0 else counts.astype(np.float64)

    def cell_count(self, sem_match: bool, meta_match: bool) -> int:
        return int(self.counts[(sem_match, meta_match)].sum())

    def mean_similarity(self, sem_match: bool, meta_match: bool) -> float:
        counts = self.counts[(sem_match, meta_match)]
        total = counts.sum()
        if total == 0:
            return float("nan")
        centers = (self.bin_edges[:-1] + self.bin_edges[1:]) / 2.0
        return float((counts * centers).sum() / total)


def similarity_histogram(
    queries: EmbeddingSet,
    database: EmbeddingSet,
    query_semantic: np.ndarray,
    db_semantic: np.ndarray,
    query_meta: np.ndarray,
    db_meta: np.ndarray,
    bins: int = 100,
) -> SimilarityHistogram:
    """Histogram query-database cosines into four (sem, meta) match cells.

    Pairs where query and database entries share a sample id are excluded.
    """
    if bins < 2:
        raise KnnError(f"need at least 2 bins, got {bins}")
    if queries.d != database.d:
        raise KnnError(f"dim mismatch: {queries.d} vs {database.d}")
    edges = np.linspace(-1.0, 1.0, bins + 1)
    sims = _unit_rows(queries.matrix) @ _unit_rows(database.matrix).T
    sims = np.clip(sims, -1.0, 1.0)
    db_index = database.row_index()
    counts = {
        (s, m): np.zeros(bins, dtype=np.int64) for s in (True, False) for m in (True, False)
    }
    query_semantic = np.asarray(query_semantic)
    db_semantic = np.asarray(db_semantic)
    query_meta = np.asarray(query_meta)
    db_meta = np.asarray(db_meta)
    for qi, qid in enumerate(queries.ids):
        self_col = db_index.get(qid, -1)
        sem_match = db_semantic == query_semantic[qi]
        meta_match = db_meta == query_meta[qi]
        row = sims[qi]
        for s in (True, False):
            for m in (True, False):
                mask = (sem_match == s) & (meta_match == m)
                if self_col >= 0:
                    mask = mask.copy()
                    mask[self_col] = False
                if mask.any():
                    idx = np.minimum(
                        np.searchsorted(edges, row[mask], side="right") - 1, bins - 1
                    )
                    idx = np.maximum(idx, 0)
                    counts[(s, m)] += np.bincount(idx, minlength=bins)
    return SimilarityHistogram(bin_edges=edges, counts=counts)


def dump_neighbors(
    query: np.ndarray,
    database: EmbeddingSet,
    semantic_labels: np.ndarray,
    meta_labels: np.ndarray,
    k: int,
    exclude_id: str | None = None,
) -> list[dict]:
    """Ranked top-k neighbor records for qualitative inspection."""
    if k > database.n:
        raise KnnError(f"k={k} exceeds database size {database.n}")
    sims = _unit_rows(database.matrix) @ _unit_rows(np.asarray(query).reshape(1, -1))[0]
    if exclude_id is not None:
        idx = database.row_index().get(exclude_id)
        if idx is not None:
            sims = sims.copy()
            sims[idx] = -np.inf
    ranked = _rank_neighbors(sims, k)
    return [
        {
            "id": database.ids[i],
            "similarity": float(sims[i]),
            "semantic_label": int(np.asarray(semantic_labels)[i]),
            "meta_label": int(np.asarray(meta_labels)[i]),
        }
        for i in ranked
    ]

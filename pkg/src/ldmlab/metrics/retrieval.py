"""Cosine-similarity retrieval: image-image precision@k and image-text top-1."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data.grammar import CLASS_INDEX, PRESENT, TOY_CLASSES
from ..errors import InvalidArgumentError

DEFAULT_KS = (5, 10, 50)


def _unit_rows(x):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms == 0, 1.0, norms)


def cosine_matrix(queries, candidates) -> np.ndarray:
    q, c = np.asarray(queries), np.asarray(candidates)
    if q.ndim != 2 or c.ndim != 2 or q.shape[1] != c.shape[1]:
        raise InvalidArgumentError(f"embedding dimensions differ: {q.shape} vs {c.shape}")
    return _unit_rows(q) @ _unit_rows(c).T


def rank_candidates(queries, candidates, candidate_ids=None) -> np.ndarray:
    """(n_query, n_cand) candidate indices, most similar first; equal
    similarities are ordered by ascending candidate id."""
    sims = cosine_matrix(queries, candidates)
    ids = np.arange(sims.shape[1]) if candidate_ids is None else np.asarray(candidate_ids)
    return np.stack([np.lexsort((ids, -row)) for row in sims]) if len(sims) else np.zeros((0, sims.shape[1]), int)


@dataclass
class RetrievalPool:
    query_embeddings: np.ndarray
    query_labels: np.ndarray
    candidate_embeddings: np.ndarray
    candidate_labels: np.ndarray
    candidate_ids: np.ndarray | None = None
    candidate_texts: list | None = None
    query_texts: list | None = None

    def __post_init__(self):
        self.query_labels = np.asarray(self.query_labels)
        self.candidate_labels = np.asarray(self.candidate_labels)
        if self.query_labels.ndim != 1 or self.candidate_labels.ndim != 1:
            raise InvalidArgumentError("retrieval pools hold exactly one label per item")
        if len(self.query_labels) != len(self.query_embeddings):
            raise InvalidArgumentError("one label per query required")
        if len(self.candidate_labels) != len(self.candidate_embeddings):
            raise InvalidArgumentError("one label per candidate required")
        if self.candidate_ids is None:
            self.candidate_ids = np.arange(len(self.candidate_labels))


def retrieval_precision_at_k(pool: RetrievalPool, ks=DEFAULT_KS) -> dict:
    """Mean fraction of each query's top-k candidates sharing its label."""
    n_cand = len(pool.candidate_labels)
    for k in ks:
        if k > n_cand or k <= 0:
            raise InvalidArgumentError(f"k={k} outside [1, {n_cand}]")
    order = rank_candidates(pool.query_embeddings, pool.candidate_embeddings, pool.candidate_ids)
    hits = pool.candidate_labels[order] == pool.query_labels[:, None]
    return {k: float(hits[:, :k].mean()) for k in ks}


def image_text_retrieve(query_embedding, candidate_embeddings, candidate_texts, top=None):
    """Candidate impressions ranked by cosine similarity to one query: list of
    (text, similarity, index)."""
    cands = np.asarray(candidate_embeddings, dtype=np.float64)
    if len(candidate_texts) == 0 or cands.size == 0:
        raise InvalidArgumentError("empty candidate set")
    if len(candidate_texts) != len(cands):
        raise InvalidArgumentError("one embedding per candidate impression required")
    q = np.asarray(query_embedding, dtype=np.float64).reshape(1, -1)
    sims = cosine_matrix(q, cands)[0]
    order = np.lexsort((np.arange(len(sims)), -sims))
    if top is not None:
        order = order[:top]
    return [(candidate_texts[i], float(sims[i]), int(i)) for i in order]


def single_label(records, classes=TOY_CLASSES):
    """(kept_indices, label_names) for records with exactly one positive toy class."""
    idx, names = [], []
    cols = [CLASS_INDEX[c] for c in classes]
    for i, r in enumerate(records):
        labels = getattr(r, "labels", r)
        pos = [c for c, j in zip(classes, cols) if labels[j] == PRESENT]
        if len(pos) == 1:
            idx.append(i)
            names.append(pos[0])
    return idx, names


def sample_pool_indices(n_available, n_query=200, n_candidates=400, seed=0):
    if n_query + n_candidates > n_available:
        raise InvalidArgumentError(f"need {n_query + n_candidates} single-label items, have {n_available}")
    perm = np.random.default_rng(seed).permutation(n_available)
    return np.sort(perm[:n_query]), np.sort(perm[n_query:n_query + n_candidates])


class ToyImageTextEmbedder:
    """Shared label-space embedding: images through a classifier's class
    probabilities, impressions through the rule labeler (present=1)."""

    def __init__(self, classifier, classes=TOY_CLASSES):
        self.classifier = classifier
        self.classes = classes

    def images(self, images):
        return self.classifier.predict_proba(images) - 0.5

    def texts(self, texts):
        from ..data.grammar import label_extract

        cols = [CLASS_INDEX[c] for c in self.classes]
        return np.stack([(label_extract(t)[cols] == PRESENT).astype(np.float64) - 0.5 for t in texts])

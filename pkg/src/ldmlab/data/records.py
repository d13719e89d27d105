from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grammar import CHEXPERT_CLASSES, CLASS_INDEX, FINDING_CLASSES, PRESENT

VIEWS = ("PA", "AP", "LAT")
SPLITS = ("train", "test")


@dataclass
class ReportRecord:
    record_id: str
    impression: str
    view: str
    labels: np.ndarray
    split: str
    subgroup: str = "p10"
    image: Optional[np.ndarray] = field(default=None, repr=False)
    image_path: Optional[str] = None

    def __post_init__(self):
        if self.view not in VIEWS:
            raise ValueError(f"unknown view {self.view!r}")
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.labels.shape != (len(CHEXPERT_CLASSES),):
            raise ValueError(f"labels must have {len(CHEXPERT_CLASSES)} slots")

    @property
    def is_no_finding(self):
        return self.labels[CLASS_INDEX["No Finding"]] == PRESENT

    def positive(self, label):
        return self.labels[CLASS_INDEX[label]] == PRESENT


@dataclass
class CorpusSpec:
    """Recipe for a synthetic corpus and its splits.

    ``no_finding_cap`` may be an absolute count, a fraction of the split size,
    or ``None`` for the default (size of the largest positive-finding class).
    """

    seed: int = 0
    n_train: int = 2000
    n_test: int = 400
    views_included: tuple = ("PA",)
    test_views: tuple = ("PA",)
    view_probs: tuple = (0.6, 0.25, 0.15)
    prevalence: dict = field(default_factory=lambda: {c: 0.2 for c in FINDING_CLASSES})
    negation_prob: float = 0.3
    max_fillers: int = 3
    short_fraction: float = 0.01
    long_fraction: float = 0.02
    no_finding_cap: Optional[float] = None
    image_size: int = 32
    holdout_subgroup: str = "p19"
    train_subgroups: tuple = tuple(f"p{i}" for i in range(10, 19))

    def __post_init__(self):
        self.views_included = tuple(self.views_included)
        self.test_views = tuple(self.test_views)
        self.train_subgroups = tuple(self.train_subgroups)
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("split sizes must be non-negative")
        if self.no_finding_cap is not None and self.no_finding_cap < 0:
            raise ValueError("no_finding_cap must be >= 0")
        for v in (*self.views_included, *self.test_views):
            if v not in VIEWS:
                raise ValueError(f"unknown view {v!r}")


def corpus_fingerprint(records) -> str:
    h = hashlib.sha256()
    for r in records:
        h.update(r.record_id.encode())
        h.update(r.impression.encode())
        h.update(r.labels.tobytes())
        if r.image is not None:
            h.update(np.ascontiguousarray(r.image, dtype=np.float32).tobytes())
    return h.hexdigest()[:16]

"""Report filtering, No-Finding capping and split construction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import IntegrityError
from ..nn.tokenizer import count_tokens
from .grammar import CHEXPERT_CLASSES, CLASS_INDEX, FINDING_CLASSES, PRESENT
from .records import CorpusSpec

MIN_IMPRESSION_CHARS = 7
MAX_TOKENS = 77


@dataclass
class FilterResult:
    records: list
    dropped_short: int = 0
    dropped_tokens: int = 0

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


def filter_reports(records, min_chars=MIN_IMPRESSION_CHARS, max_tokens=MAX_TOKENS) -> FilterResult:
    """Keep impressions with at least ``min_chars`` raw characters and at most
    ``max_tokens`` tokens (begin/end markers included). Order is preserved.

    A record failing both rules is counted under the length rule only.
    """
    kept, short, too_long = [], 0, 0
    for rec in records:
        if len(rec.impression) < min_chars:
            short += 1
        elif count_tokens(rec.impression) > max_tokens:
            too_long += 1
        else:
            kept.append(rec)
    return FilterResult(kept, short, too_long)


def default_no_finding_cap(records) -> int:
    counts = [sum(1 for r in records if r.positive(c)) for c in FINDING_CLASSES]
    return max(counts) if counts else 0


def cap_no_finding(records, cap, seed=0) -> list:
    """Keep at most ``cap`` No-Finding records, chosen uniformly with ``seed``.

    ``cap`` may be a fraction in (0, 1) of the input size. Non-No-Finding
    records pass through untouched and the input order is preserved.
    """
    records = list(records)
    nf_idx = [i for i, r in enumerate(records) if r.is_no_finding]
    if cap is None:
        cap = default_no_finding_cap(records)
    elif 0 < cap < 1 and not float(cap).is_integer():
        cap = int(round(cap * len(records)))
    cap = int(cap)
    if cap >= len(nf_idx):
        return records
    rng = np.random.default_rng(seed)
    keep = set(rng.choice(nf_idx, size=cap, replace=False).tolist()) if cap > 0 else set()
    drop = set(nf_idx) - keep
    return [r for i, r in enumerate(records) if i not in drop]


@dataclass
class Splits:
    train: list
    test: list
    table: dict = field(default_factory=dict)

    def named(self):
        return {"train": self.train, "test": self.test}


def count_table(named_corpora) -> dict:
    """Per-split composition in the layout of the dataset table:
    ``n``, positive counts for all 14 classes, and impression char/token stats."""
    table = {}
    for name, records in named_corpora.items():
        col = {"n": len(records)}
        for cls in CHEXPERT_CLASSES:
            col[cls] = int(sum(1 for r in records if r.labels[CLASS_INDEX[cls]] == PRESENT))
        chars = np.array([len(r.impression) for r in records], dtype=float)
        toks = np.array([count_tokens(r.impression) for r in records], dtype=float)
        col["Mean no. char."] = float(chars.mean()) if len(chars) else 0.0
        col["Std char."] = float(chars.std(ddof=1)) if len(chars) > 1 else 0.0
        col["Mean no. tok."] = float(toks.mean()) if len(toks) else 0.0
        col["Std tok."] = float(toks.std(ddof=1)) if len(toks) > 1 else 0.0
        table[name] = col
    return table


TABLE_ROWS = ("n", *CHEXPERT_CLASSES, "Mean no. char.", "Std char.", "Mean no. tok.", "Std tok.")


def make_splits(records, spec: CorpusSpec) -> Splits:
    """Partition by subgroup tag: the holdout subgroup is the test split."""
    if spec.holdout_subgroup in spec.train_subgroups:
        raise IntegrityError(f"subgroup {spec.holdout_subgroup} assigned to both train and test")
    train, test = [], []
    for r in records:
        if r.subgroup == spec.holdout_subgroup:
            if r.view in spec.test_views:
                test.append(r)
        elif r.subgroup in spec.train_subgroups:
            if r.view in spec.views_included:
                train.append(r)
    train_ids = {r.record_id for r in train}
    overlap = train_ids.intersection(r.record_id for r in test)
    if overlap:
        raise IntegrityError(f"{len(overlap)} record ids in both splits")
    train = cap_no_finding(train, spec.no_finding_cap, seed=spec.seed)
    test = cap_no_finding(test, spec.no_finding_cap, seed=spec.seed + 1)
    return Splits(train, test, count_table({"train": train, "test": test}))


def build_corpus(spec: CorpusSpec) -> Splits:
    from .toy import toy_corpus_generate

    return make_splits(filter_reports(toy_corpus_generate(spec)).records, spec)

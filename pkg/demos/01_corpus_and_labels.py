"""Build the synthetic chest-film corpus and look at what the filters and the
labeler do to it.

    python3 demos/01_corpus_and_labels.py --n-train 2000
"""
import argparse

import numpy as np

from ldmlab.data import (
    CorpusSpec,
    build_corpus,
    cap_no_finding,
    filter_reports,
    label_extract,
    toy_corpus_generate,
)
from ldmlab.data.filtering import TABLE_ROWS
from ldmlab.data.grammar import TOY_CLASSES, positive_set


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-train", type=int, default=2000)
    ap.add_argument("--n-test", type=int, default=400)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = CorpusSpec(seed=args.seed, n_train=args.n_train, n_test=args.n_test)
    raw = toy_corpus_generate(spec)
    print(f"generated {len(raw)} raw records")
    for r in raw[:4]:
        print(f"  [{r.view}] {r.impression}")

    # Short and over-long impressions fall out first.
    kept = filter_reports(raw)
    print(f"\nfilter: kept {len(kept)}, dropped {kept.dropped_short} short and {kept.dropped_tokens} over-long")

    # The labeler reads the generated text back into the labels it came from.
    agree = np.mean([np.array_equal(label_extract(r.impression), r.labels) for r in kept])
    print(f"labeler agreement with generating labels: {agree:.3f}")
    sample = kept.records[0]
    print(f"  '{sample.impression}' -> {sorted(positive_set(sample.labels))}")

    n_nf = sum(r.is_no_finding for r in kept)
    capped = cap_no_finding(kept.records, n_nf // 2, seed=args.seed)
    print(f"\nNo-Finding cap at {n_nf // 2}: {n_nf} -> {sum(r.is_no_finding for r in capped)} records")

    splits = build_corpus(spec)
    print("\nsplit composition (PA only; test split is the held-out subgroup)")
    print(f"{'':28s}{'train':>10s}{'test':>10s}")
    for row in TABLE_ROWS:
        tr, te = splits.table["train"][row], splits.table["test"][row]
        if row in TOY_CLASSES or not isinstance(tr, int) or row == "n":
            print(f"{row:28s}{tr:>10.6g}{te:>10.6g}")


if __name__ == "__main__":
    main()

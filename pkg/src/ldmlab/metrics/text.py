"""Report-text scores: BLEU-4, ROUGE-L, entity overlap with and without an
NLI consistency filter, and label F1.

NER, NLI and sentence similarity are plugins (plain callables). The toy
versions below read the caption grammar's phrase inventory.
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from ..data.grammar import (CHEXPERT_CLASSES, LABEL_F1_CLASSES, NO_FINDING_PHRASES, NOUNS, PRESENT, label_extract,
                            split_sentences)
from ..nn.tokenizer import split_words

BLEU_EPSILON = 1e-9
ENTAILMENT, NEUTRAL, CONTRADICTION = "entailment", "neutral", "contradiction"


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(generated: str, reference: str, epsilon=BLEU_EPSILON) -> float:
    """Sentence BLEU-4, uniform weights, brevity penalty; zero n-gram matches
    are replaced by ``epsilon``."""
    hyp, ref = split_words(generated), split_words(reference)
    if not hyp or not ref:
        return 0.0
    log_p = 0.0
    for n in range(1, 5):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        total = max(sum(h.values()), 1)
        matched = sum(min(c, r[g]) for g, c in h.items())
        log_p += math.log(matched / total if matched else epsilon / total) / 4
    bp = 1.0 if len(hyp) > len(ref) else math.exp(1.0 - len(ref) / len(hyp))
    return float(bp * math.exp(log_p))


def lcs_length(a, b) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(generated: str, reference: str) -> float:
    """ROUGE-L F1 from the longest common token subsequence."""
    hyp, ref = split_words(generated), split_words(reference)
    if not hyp or not ref:
        return 0.0
    lcs = lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(hyp), lcs / len(ref)
    return 2 * p * r / (p + r)


# toy plugins --------------------------------------------------------------

_ENTITY_PATTERNS = [(label, re.compile(r"\b(" + "|".join(map(re.escape, nouns)) + r")\b", re.IGNORECASE))
                    for label, nouns in NOUNS.items()]
_NEGATED = re.compile(r"^\s*(no|without)\b|\bno evidence of\b", re.IGNORECASE)


def toy_ner(text: str) -> set:
    """Finding entities (canonical noun) mentioned anywhere in ``text``."""
    return {NOUNS[label][0] for label, pat in _ENTITY_PATTERNS if pat.search(text)}


def toy_nli(premise: str, hypothesis: str) -> str:
    """Negation-marker rule table: a shared entity asserted in one sentence
    and negated in the other is a contradiction."""
    shared = toy_ner(premise) & toy_ner(hypothesis)
    if not shared:
        return NEUTRAL
    if bool(_NEGATED.search(premise)) != bool(_NEGATED.search(hypothesis)):
        return CONTRADICTION
    return ENTAILMENT


def token_jaccard(a: str, b: str) -> float:
    """Sentence similarity stand-in: Jaccard overlap of token sets."""
    sa, sb = set(split_words(a)), set(split_words(b))
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


# entity scores ------------------------------------------------------------

@dataclass
class EntityScore:
    score: float
    precision: float
    recall: float
    convention: str = ""


def _harmonic(tp_p, n_gen, tp_r, n_ref):
    if n_gen == 0 and n_ref == 0:
        return EntityScore(1.0, 1.0, 1.0, "both-empty")
    if n_gen == 0 or n_ref == 0:
        return EntityScore(0.0, 0.0, 0.0, "one-empty")
    p, r = tp_p / n_gen, tp_r / n_ref
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return EntityScore(f, p, r)


def fact_ent_detail(generated, reference, ner=toy_ner) -> EntityScore:
    eg, er = set(ner(generated)), set(ner(reference))
    common = len(eg & er)
    return _harmonic(common, len(eg), common, len(er))


def fact_ent(generated: str, reference: str, ner=toy_ner) -> float:
    return fact_ent_detail(generated, reference, ner).score


def _valid_entities(source, target, ner, nli, sent_sim):
    """Entities of ``source`` whose sentence is not contradicted by its most
    similar sentence in ``target``."""
    target_sents = split_sentences(target) or [target]
    valid = set()
    for sent in split_sentences(source) or [source]:
        ents = set(ner(sent))
        if not ents:
            continue
        sims = [sent_sim(sent, t) for t in target_sents]
        counterpart = target_sents[int(np.argmax(sims))]
        if nli(counterpart, sent) != CONTRADICTION:
            valid |= ents
    return valid


def fact_entnli_detail(generated, reference, ner=toy_ner, nli=toy_nli, sent_sim=token_jaccard) -> EntityScore:
    eg, er = set(ner(generated)), set(ner(reference))
    vg = _valid_entities(generated, reference, ner, nli, sent_sim)
    vr = _valid_entities(reference, generated, ner, nli, sent_sim)
    return _harmonic(len(eg & er & vg), len(eg), len(eg & er & vr), len(er))


def fact_entnli(generated: str, reference: str, ner=toy_ner, nli=toy_nli, sent_sim=token_jaccard) -> float:
    """Entity overlap where a matched entity only counts if its sentence is
    not contradicted by the counterpart (most similar) sentence on the other side."""
    return fact_entnli_detail(generated, reference, ner, nli, sent_sim).score


def positive_labels(text: str, classes=LABEL_F1_CLASSES, extractor=label_extract) -> set:
    labels = extractor(text)
    return {c for c in classes if labels[CHEXPERT_CLASSES.index(c)] == PRESENT}


def label_f1_detail(generated, reference, extractor=label_extract, classes=LABEL_F1_CLASSES) -> EntityScore:
    g = positive_labels(generated, classes, extractor)
    r = positive_labels(reference, classes, extractor)
    tp = len(g & r)
    return _harmonic(tp, len(g), tp, len(r))


def label_f1(generated: str, reference: str, extractor=label_extract, classes=LABEL_F1_CLASSES) -> float:
    """Micro F1 between positive-label sets over ``classes``; 1.0 when both
    sides extract nothing (flagged via :func:`label_f1_detail`)."""
    return label_f1_detail(generated, reference, extractor, classes).score


def radgraph_score(generated, reference, relation_extractor=None):
    """Entity-relation overlap; needs an externally trained relation extractor."""
    if relation_extractor is None:
        raise NotImplementedError("no relation extractor is bundled; pass one to score relations")
    eg, er = set(relation_extractor(generated)), set(relation_extractor(reference))
    return _harmonic(len(eg & er), len(eg), len(eg & er), len(er)).score


def text_metric_suite(generated, reference) -> dict:
    """Mean of each score over paired lists of texts, plus convention counts."""
    rows = {"bleu4": [], "rouge_l": [], "label_f1": [], "fact_ent": [], "fact_entnli": []}
    flags = Counter()
    for g, r in zip(generated, reference):
        rows["bleu4"].append(bleu4(g, r))
        rows["rouge_l"].append(rouge_l(g, r))
        lf = label_f1_detail(g, r)
        rows["label_f1"].append(lf.score)
        if lf.convention:
            flags[f"label_f1.{lf.convention}"] += 1
        fe = fact_ent_detail(g, r)
        rows["fact_ent"].append(fe.score)
        if fe.convention:
            flags[f"fact_ent.{fe.convention}"] += 1
        rows["fact_entnli"].append(fact_entnli(g, r))
    out = {k: float(np.mean(v)) if v else 0.0 for k, v in rows.items()}
    out.update({f"count.{k}": float(v) for k, v in flags.items()})
    return out


def toy_captioner(probs, classes, threshold=0.5) -> str:
    """Template report from class probabilities: one canonical sentence per
    positive finding, or the normal phrase when none clears ``threshold``."""
    found = [c for c, p in zip(classes, probs) if p >= threshold and c in NOUNS]
    if not found:
        return NO_FINDING_PHRASES[0]
    return " ".join(f"{NOUNS[c][0].capitalize()}." for c in found)

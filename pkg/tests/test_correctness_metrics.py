import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldmlab.data import general_corpus_generate
from ldmlab.diffusion import ModelPreset, Pipeline
from ldmlab.errors import InvalidArgumentError, UndefinedMetricError
from ldmlab.metrics import (
    RetrievalPool,
    auroc,
    binary_auroc,
    bleu4,
    chexpert_at_10,
    chexpert_at_k,
    fact_ent,
    fact_entnli,
    forgetting_probe,
    image_text_retrieve,
    label_f1,
    preprocess_for_classifier,
    retrieval_precision_at_k,
    rouge_l,
    toy_captioner,
    toy_nli,
)
from ldmlab.metrics import classification
from ldmlab.metrics.text import CONTRADICTION, ENTAILMENT, NEUTRAL, label_f1_detail, radgraph_score


# preprocessing --------------------------------------------------------------

def test_preprocess_resize_chain(monkeypatch):
    sizes = []
    real = classification._resize

    def spy(img, h, w):
        sizes.append((h, w))
        return real(img, h, w)

    monkeypatch.setattr(classification, "_resize", spy)
    out = preprocess_for_classifier(np.zeros((768, 1024), dtype=np.float32))
    assert sizes == [(512, 683), (224, 224)]
    assert out.shape == (224, 224)


def test_preprocess_crops_long_side_edges():
    img = np.zeros((768, 1024), dtype=np.float32)
    img[:, :100] = 1.0
    img[:, -100:] = 1.0
    assert preprocess_for_classifier(img).max() == 0.0


def test_preprocess_constant_image():
    out = preprocess_for_classifier(np.full((300, 200), 0.25, dtype=np.float32), crop=64, size=32)
    assert out.shape == (32, 32)
    np.testing.assert_allclose(out, 0.25, atol=1e-6)


# AUROC ----------------------------------------------------------------------

def test_auroc_examples():
    assert binary_auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)
    assert binary_auroc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    assert binary_auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0


def _pairwise_auroc(s, y):
    pos = [a for a, t in zip(s, y) if t]
    neg = [a for a, t in zip(s, y) if not t]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=30))
def test_auroc_matches_pairwise_count(pairs):
    scores, truth = [float(s) for s, _ in pairs], [t for _, t in pairs]
    if all(truth) or not any(truth):
        with pytest.raises(UndefinedMetricError):
            binary_auroc(scores, truth)
    else:
        assert binary_auroc(scores, truth) == pytest.approx(_pairwise_auroc(scores, truth), abs=1e-12)


def test_macro_skips_single_valued_class():
    scores = np.array([[0.9, 0.1], [0.1, 0.2], [0.8, 0.3]])
    truths = np.array([[1, 0], [0, 0], [1, 0]])
    res = auroc(scores, truths, ["a", "b"])
    assert res.undefined == ["b"]
    assert res.macro == 1.0


# retrieval ------------------------------------------------------------------

def test_precision_at_k_matches_brute_force():
    rng = np.random.default_rng(0)
    q, c = rng.standard_normal((15, 4)), rng.standard_normal((30, 4))
    ql, cl = rng.integers(0, 3, 15), rng.integers(0, 3, 30)
    got = retrieval_precision_at_k(RetrievalPool(q, ql, c, cl), ks=(1, 5, 10))
    for k in (1, 5, 10):
        hits = []
        for i in range(15):
            sims = [(np.dot(q[i], c[j]) / np.linalg.norm(q[i]) / np.linalg.norm(c[j]), -j) for j in range(30)]
            top = [-j for _, j in sorted(sims, reverse=True)[:k]]
            hits.append(np.mean([cl[j] == ql[i] for j in top]))
        assert got[k] == pytest.approx(np.mean(hits))


def test_precision_at_five_construction():
    q = np.array([[1.0, 0.0]])
    angles = [0.1, 0.2, 0.3, 0.4, 0.5, 2.5, 2.8, 3.0]
    cands = np.array([[np.cos(a), np.sin(a)] for a in angles])
    labels = np.array(["a", "b", "a", "b", "b", "a", "a", "a"])
    assert retrieval_precision_at_k(RetrievalPool(q, ["a"], cands, labels), ks=(5,))[5] == pytest.approx(0.4)


def test_precision_k_bounds():
    pool = RetrievalPool(np.eye(2), [0, 1], np.eye(2), [0, 1])
    with pytest.raises(InvalidArgumentError):
        retrieval_precision_at_k(pool, ks=(3,))


def test_retrieval_tie_break_by_candidate_id():
    pool = RetrievalPool(np.array([[1.0, 0.0]]), [1], np.array([[1.0, 0.0], [1.0, 0.0]]), [0, 1],
                         candidate_ids=np.array([5, 2]))
    assert retrieval_precision_at_k(pool, ks=(1,))[1] == 1.0


def test_image_text_retrieve_self_first():
    rng = np.random.default_rng(1)
    cands = rng.standard_normal((6, 5))
    texts = [f"text {i}" for i in range(6)]
    ranked = image_text_retrieve(cands[3], cands, texts)
    assert ranked[0][0] == "text 3" and ranked[0][1] == pytest.approx(1.0)
    assert [s for _, s, _ in ranked] == sorted((s for _, s, _ in ranked), reverse=True)
    with pytest.raises(InvalidArgumentError):
        image_text_retrieve(cands[0], np.zeros((0, 5)), [])


# report-text metrics --------------------------------------------------------

def test_fact_ent_half():
    assert fact_ent("Cardiomegaly. Small left effusion.", "Cardiomegaly. Mild pneumonia.") == pytest.approx(0.5)


def test_fact_ent_degenerate():
    assert fact_ent("Stable.", "Unchanged.") == 1.0
    assert fact_ent("Stable.", "Edema.") == 0.0


def test_toy_nli_rules():
    assert toy_nli("Mild edema.", "No edema.") == CONTRADICTION
    assert toy_nli("Mild edema.", "Large edema.") == ENTAILMENT
    assert toy_nli("Mild edema.", "Cardiomegaly.") == NEUTRAL


def test_fact_entnli_contradiction_zeroes_match():
    assert fact_ent("No edema.", "Mild edema.") == 1.0
    assert fact_entnli("No edema.", "Mild edema.") == 0.0


def test_fact_entnli_with_permissive_plugin_equals_fact_ent():
    gen, ref = "Cardiomegaly. No edema.", "Cardiomegaly. Mild edema. Small pneumothorax."
    assert fact_entnli(gen, ref, nli=lambda p, h: ENTAILMENT) == pytest.approx(fact_ent(gen, ref))
    assert fact_entnli(gen, ref, nli=lambda p, h: CONTRADICTION) == 0.0
    assert fact_entnli("Stable.", "Unchanged.") == 1.0


def test_label_f1_examples():
    assert label_f1("Cardiomegaly. Large left effusion.", "Cardiomegaly.") == pytest.approx(2 / 3)
    d = label_f1_detail("Clinical correlation is recommended.", "Stable exam.")
    assert d.score == 1.0 and d.convention == "both-empty"


def test_rouge_l_example():
    assert rouge_l("the cat sat down", "the cat sat up") == pytest.approx(0.75)
    assert rouge_l("a b", "c d") == 0.0


def test_bleu4_examples():
    assert bleu4("a b c d e", "a b c d e") == pytest.approx(1.0)
    assert bleu4("a b c d e", "a b c d f") == pytest.approx((0.8 * 0.75 * (2 / 3) * 0.5) ** 0.25)
    short = bleu4("a b c d", "a b c d e f")
    assert short == pytest.approx(np.exp(1 - 6 / 4))


def test_radgraph_needs_extractor():
    with pytest.raises(NotImplementedError):
        radgraph_score("a", "b")
    assert radgraph_score("x y", "x z", relation_extractor=str.split) == pytest.approx(0.5)


def test_toy_captioner():
    classes = ("Cardiomegaly", "Edema", "No Finding")
    assert toy_captioner([0.9, 0.2, 0.1], classes) == "Cardiomegaly."
    assert toy_captioner([0.1, 0.2, 0.9], classes) == "No acute cardiopulmonary process."


# CheXpert@k -----------------------------------------------------------------

def test_chexpert_at_10_perfect_separation():
    labels = np.repeat(np.eye(3, dtype=bool), 12, axis=0)
    emb = labels.astype(float) + 0.01 * np.random.default_rng(0).standard_normal(labels.shape)
    per_class, macro = chexpert_at_10(emb, labels, ["a", "b", "c"])
    assert macro == 100.0 and set(per_class.values()) == {100.0}


def test_chexpert_at_10_random_embeddings_near_prevalence():
    rng = np.random.default_rng(1)
    labels = rng.random((600, 1)) < 0.3
    _, macro = chexpert_at_10(rng.standard_normal((600, 16)), labels)
    assert abs(macro - 100 * labels.mean()) < 5


def test_chexpert_needs_k_plus_one_reports():
    with pytest.raises(InvalidArgumentError):
        chexpert_at_k(np.eye(10), np.eye(10, dtype=bool), k=10)


def test_forgetting_probe_schema(tiny_pipeline, tiny_records):
    other = Pipeline.build(ModelPreset.tiny(), seed=9)
    general = general_corpus_generate(40, size=16)
    reports = forgetting_probe({0: tiny_pipeline, 500: other}, tiny_records[:40], general)
    assert [r["step"] for r in reports] == [0.0, 500.0]
    for r in reports:
        assert r.task == "forgetting_probe"
        assert 0 <= r["in_domain_macro"] <= 100 and 0 <= r["general_macro"] <= 100
    with pytest.raises(InvalidArgumentError):
        forgetting_probe([tiny_pipeline], tiny_records[:40], general)

"""Procedural stand-in for the chest-film corpus.

Every finding class is a distinct shape family drawn in one lung field, so
that the caption, the label vector and the pixels agree by construction.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .grammar import (
    CHEXPERT_CLASSES,
    CLASS_INDEX,
    FILLER_SENTENCES,
    FINDING_CLASSES,
    GENERAL_BRIGHTNESS,
    GENERAL_PLACES,
    GENERAL_SHAPES,
    NO_FINDING_PHRASES,
    PRESENT,
    ABSENT,
    SHORT_IMPRESSIONS,
    SIDES,
    SIZES,
    UNMENTIONED,
    Finding,
    finding_sentence,
    general_caption,
    negation_sentence,
)
from .records import VIEWS, CorpusSpec, ReportRecord


def record_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index, stream]))


def _disk(rr, cc, r0, c0, radius):
    return ((rr - r0) ** 2 + (cc - c0) ** 2) <= radius ** 2


def _ellipse(rr, cc, r0, c0, ry, rx):
    return ((rr - r0) / ry) ** 2 + ((cc - c0) / rx) ** 2 <= 1.0


def _lung_columns(view):
    if view == "LAT":
        return {"left": 14.0, "right": 18.0}
    return {"left": 9.0, "right": 23.0}


def render_toy_image(findings, view="PA", rng=None, size=32):
    """Grayscale image in [0, 1] of shape (size, size)."""
    rng = np.random.default_rng(0) if rng is None else rng
    s = size / 32.0
    rr, cc = np.mgrid[0:size, 0:size].astype(np.float64) / s
    img = np.full((size, size), 0.08)
    if view == "LAT":
        lung_mask = _ellipse(rr, cc, 16, 16, 11, 9)
        img[lung_mask] = 0.32
    else:
        rx = 7.0 if view == "AP" else 6.0
        level = 0.36 if view == "AP" else 0.30
        img[(cc > 13) & (cc < 19) & (rr > 4)] = 0.16
        lung_mask = _ellipse(rr, cc, 16, 9, 11, rx) | _ellipse(rr, cc, 16, 23, 11, rx)
        img[lung_mask] = level
    cols = _lung_columns(view)
    for f in findings:
        jr, jc = rng.integers(-1, 2, size=2)
        col = cols[f.side] + jc
        big = f.size == "large"
        if f.label == "Cardiomegaly":
            toward = 13.0 if f.side == "left" else 19.0
            if view == "LAT":
                toward = col
            img += 0.5 * _disk(rr, cc, 22 + jr, toward + jc, 4.5 if big else 2.5)
        elif f.label == "Edema":
            half = 4 if big else 2
            band = (np.abs(cc - col) <= half)
            for row in (12, 15, 18):
                img += 0.35 * (band & (np.abs(rr - (row + jr)) < 0.6))
        elif f.label == "Pleural Effusion":
            h = 7 if big else 3
            side_mask = (np.abs(cc - col) <= 6) & lung_mask
            img += 0.45 * (side_mask & (rr >= 27 - h + jr) & (rr <= 27))
        elif f.label == "Pneumonia":
            sigma = 2.5 if big else 1.2
            img += 0.6 * np.exp(-(((rr - 11 - jr) ** 2 + (cc - col) ** 2) / (2 * sigma ** 2)))
        elif f.label == "Pneumothorax":
            radius = 4.0 if big else 2.5
            dist = np.sqrt((rr - 8 - jr) ** 2 + (cc - col) ** 2)
            img += 0.5 * (np.abs(dist - radius) < 0.7)
    img *= 1.0 + rng.uniform(-0.05, 0.05)
    img = ndimage.gaussian_filter(img, 0.6 * s)
    img += rng.normal(0.0, 0.01, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _sample_findings(spec: CorpusSpec, rng):
    findings = []
    for label in FINDING_CLASSES:
        if rng.random() < spec.prevalence.get(label, 0.0):
            findings.append(Finding(label, SIDES[rng.integers(2)], SIZES[rng.integers(2)]))
    return findings


def compose_impression(findings, rng, negation_prob=0.3, max_fillers=3, n_fillers=None):
    """Caption text and its ground-truth label vector."""
    labels = np.full(len(CHEXPERT_CLASSES), UNMENTIONED, dtype=np.int8)
    sentences = []
    for f in findings:
        sentences.append(finding_sentence(f, rng))
        labels[CLASS_INDEX[f.label]] = PRESENT
    present = {f.label for f in findings}
    if not findings:
        sentences.append(NO_FINDING_PHRASES[rng.integers(len(NO_FINDING_PHRASES))])
        labels[CLASS_INDEX["No Finding"]] = PRESENT
    for label in FINDING_CLASSES:
        if label not in present and rng.random() < negation_prob:
            sentences.append(negation_sentence(label, rng))
            labels[CLASS_INDEX[label]] = ABSENT
    if n_fillers is None:
        n_fillers = int(rng.integers(0, max_fillers + 1))
    for _ in range(n_fillers):
        sentences.append(FILLER_SENTENCES[rng.integers(len(FILLER_SENTENCES))])
    return " ".join(sentences), labels


def _view_for(spec, rng):
    probs = np.asarray(spec.view_probs, dtype=float)
    return VIEWS[rng.choice(len(VIEWS), p=probs / probs.sum())]


def generate_record(spec: CorpusSpec, index: int, subgroup: str, split: str) -> ReportRecord:
    rng = record_rng(spec.seed, index)
    findings = _sample_findings(spec, rng)
    view = _view_for(spec, rng)
    kind = rng.random()
    if kind < spec.short_fraction:
        text = SHORT_IMPRESSIONS[rng.integers(len(SHORT_IMPRESSIONS))]
        labels = np.full(len(CHEXPERT_CLASSES), UNMENTIONED, dtype=np.int8)
        findings = []
    elif kind < spec.short_fraction + spec.long_fraction:
        text, labels = compose_impression(findings, rng, spec.negation_prob, n_fillers=12)
    else:
        text, labels = compose_impression(findings, rng, spec.negation_prob, spec.max_fillers)
    image = render_toy_image(findings, view, record_rng(spec.seed, index, 1), spec.image_size)
    return ReportRecord(
        record_id=f"{subgroup}-{index:06d}",
        impression=text,
        view=view,
        labels=labels,
        split=split,
        subgroup=subgroup,
        image=image,
    )


def toy_corpus_generate(spec: CorpusSpec, rng=None) -> list[ReportRecord]:
    """Generate ``n_train + n_test`` raw records (before filtering or capping).

    Per-record randomness derives from ``(spec.seed, index)``, so the output is
    identical whether records are produced serially or in parallel. ``rng`` is
    accepted for interface symmetry; when given it only reseeds ``spec.seed``.
    """
    if rng is not None:
        spec = CorpusSpec(**{**spec.__dict__, "seed": int(rng.integers(2 ** 31))})
    records = []
    n_groups = len(spec.train_subgroups)
    for i in range(spec.n_train):
        group = spec.train_subgroups[i % n_groups]
        records.append(generate_record(spec, i, group, "train"))
    for j in range(spec.n_test):
        records.append(generate_record(spec, spec.n_train + j, spec.holdout_subgroup, "test"))
    return records


# --- general-domain corpus ---

def render_general_image(shape, place, brightness, rng, size=32):
    s = size / 32.0
    rr, cc = np.mgrid[0:size, 0:size].astype(np.float64) / s
    img = np.full((size, size), 0.2)
    r0 = (9.0 if place == "top" else 23.0) + rng.integers(-1, 2)
    c0 = 16.0 + rng.integers(-4, 5)
    level = 0.7 if brightness == "bright" else 0.35
    if shape == "circle":
        mask = _disk(rr, cc, r0, c0, 5)
    elif shape == "square":
        mask = (np.abs(rr - r0) <= 4) & (np.abs(cc - c0) <= 4)
    elif shape == "cross":
        mask = ((np.abs(rr - r0) <= 1) & (np.abs(cc - c0) <= 5)) | ((np.abs(cc - c0) <= 1) & (np.abs(rr - r0) <= 5))
    else:
        mask = np.abs(np.sqrt((rr - r0) ** 2 + (cc - c0) ** 2) - 4.5) < 1.0
    img += level * mask
    img = ndimage.gaussian_filter(img, 0.6 * s) + rng.normal(0, 0.01, img.shape)
    return np.clip(img, 0, 1).astype(np.float32)


def general_corpus_generate(n, seed=0, size=32):
    """General-domain caption/image pairs: list of (caption, image, shape_index)."""
    out = []
    for i in range(n):
        rng = record_rng(seed, i, 7)
        k = int(rng.integers(len(GENERAL_SHAPES)))
        place = GENERAL_PLACES[rng.integers(2)]
        bright = GENERAL_BRIGHTNESS[rng.integers(2)]
        caption = general_caption(GENERAL_SHAPES[k], place, bright, rng)
        out.append((caption, render_general_image(GENERAL_SHAPES[k], place, bright, rng, size), k))
    return out

"""Closed caption grammar for the toy chest-film corpus and its rule-based labeler.

Captions are built from a small phrase inventory so that the labeler can
recover the generating truth exactly. Label vectors follow the 14-class
CheXpert layout; only six slots are ever populated by the toy grammar.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

CHEXPERT_CLASSES = (
    "Atelectasis",
    "Cardiomegaly",
    "Consolidation",
    "Edema",
    "Enlarged Cardiomediastinum",
    "Fracture",
    "Lung Lesion",
    "Lung Opacity",
    "No Finding",
    "Pleural Effusion",
    "Pleural Other",
    "Pneumonia",
    "Pneumothorax",
    "Support Devices",
)
CLASS_INDEX = {name: i for i, name in enumerate(CHEXPERT_CLASSES)}

# ternary label codes
PRESENT = 1
ABSENT = 0
UNMENTIONED = -1

FINDING_CLASSES = ("Cardiomegaly", "Edema", "Pleural Effusion", "Pneumonia", "Pneumothorax")
TOY_CLASSES = FINDING_CLASSES + ("No Finding",)
# observation subset used by label-F1 scoring
LABEL_F1_CLASSES = ("Atelectasis", "Cardiomegaly", "Consolidation", "Edema", "Pleural Effusion")

SIDES = ("left", "right")
SIZES = ("small", "large")

# surface nouns per class; the first entry is the canonical one
NOUNS = {
    "Cardiomegaly": ("cardiomegaly",),
    "Edema": ("edema", "pulmonary edema"),
    "Pleural Effusion": ("effusion", "pleural effusion"),
    "Pneumonia": ("pneumonia",),
    "Pneumothorax": ("pneumothorax",),
}
SIZE_WORDS = {"small": ("small", "mild"), "large": ("large", "severe")}
NO_FINDING_PHRASES = ("No acute cardiopulmonary process.", "Normal chest radiograph.")
FILLER_SENTENCES = (
    "Comparison is made to the prior radiograph.",
    "Clinical correlation is recommended.",
    "The osseous structures are intact.",
    "Findings were discussed with the referring team.",
    "Follow up imaging may be considered.",
)
SHORT_IMPRESSIONS = ("Slight", "Unchanged", "Stable", "Same")

_NEGATION = re.compile(r"^\s*(no|without)\b|\bno evidence of\b", re.IGNORECASE)
_NO_FINDING = re.compile(r"no acute cardiopulmonary process|normal chest radiograph", re.IGNORECASE)


@dataclass(frozen=True)
class Finding:
    label: str
    side: str
    size: str


def _noun_pattern(label):
    alts = sorted(NOUNS[label], key=len, reverse=True)
    return re.compile(r"\b(" + "|".join(re.escape(a) for a in alts) + r")\b", re.IGNORECASE)


_NOUN_RE = {label: _noun_pattern(label) for label in FINDING_CLASSES}
_SIZE_RE = {size: re.compile(r"\b(" + "|".join(words) + r")\b", re.IGNORECASE)
            for size, words in SIZE_WORDS.items()}
_SIDE_RE = {side: re.compile(r"\b" + side + r"\b", re.IGNORECASE) for side in SIDES}


def finding_sentence(finding: Finding, rng: np.random.Generator) -> str:
    noun = NOUNS[finding.label][rng.integers(len(NOUNS[finding.label]))]
    size = SIZE_WORDS[finding.size][rng.integers(2)]
    template = rng.integers(3)
    if template == 0:
        return f"{size.capitalize()} {finding.side}-sided {noun}."
    if template == 1:
        return f"There is a {size} {finding.side} {noun}."
    return f"{size.capitalize()} {noun} on the {finding.side}."


def negation_sentence(label: str, rng: np.random.Generator) -> str:
    noun = NOUNS[label][rng.integers(len(NOUNS[label]))]
    if rng.random() < 0.5:
        return f"No {noun}."
    return f"No evidence of {noun}."


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in re.split(r"(?<=[.!?])\s+|\.$", text) if s.strip()]


def parse_findings(text: str) -> list[Finding]:
    """Positive findings with their side and size attributes, in caption order."""
    found = []
    for sentence in split_sentences(text):
        if _NEGATION.search(sentence):
            continue
        for label in FINDING_CLASSES:
            if not _NOUN_RE[label].search(sentence):
                continue
            side = next((s for s in SIDES if _SIDE_RE[s].search(sentence)), "")
            size = next((s for s in SIZES if _SIZE_RE[s].search(sentence)), "")
            found.append(Finding(label, side, size))
    return found


def label_extract(impression: str) -> np.ndarray:
    """Map an impression to a 14-slot ternary vector (1 present, 0 absent, -1 unmentioned)."""
    labels = np.full(len(CHEXPERT_CLASSES), UNMENTIONED, dtype=np.int8)
    for sentence in split_sentences(impression):
        if _NO_FINDING.search(sentence):
            labels[CLASS_INDEX["No Finding"]] = PRESENT
            continue
        negated = bool(_NEGATION.search(sentence))
        for label in FINDING_CLASSES:
            if _NOUN_RE[label].search(sentence):
                idx = CLASS_INDEX[label]
                if negated:
                    if labels[idx] != PRESENT:
                        labels[idx] = ABSENT
                else:
                    labels[idx] = PRESENT
    return labels


def positive_set(labels: np.ndarray, classes=TOY_CLASSES) -> frozenset:
    return frozenset(c for c in classes if labels[CLASS_INDEX[c]] == PRESENT)


# --- general-domain grammar (pretraining and forgetting probe) ---

GENERAL_SHAPES = ("circle", "square", "cross", "ring")
GENERAL_PLACES = ("top", "bottom")
GENERAL_BRIGHTNESS = ("bright", "dim")


def general_caption(shape: str, place: str, brightness: str, rng: np.random.Generator) -> str:
    if rng.random() < 0.5:
        return f"a {brightness} {shape} at the {place}."
    return f"a picture of a {brightness} {shape} near the {place}."


def general_label(caption: str) -> np.ndarray:
    """One-hot over GENERAL_SHAPES (all zeros when no shape word matches)."""
    out = np.zeros(len(GENERAL_SHAPES), dtype=np.int8)
    for i, shape in enumerate(GENERAL_SHAPES):
        if re.search(r"\b" + shape + r"\b", caption, re.IGNORECASE):
            out[i] = 1
    return out


def vocabulary_words() -> list[str]:
    """Every word the two grammars can emit, lowercased, in a stable order."""
    pieces = []
    for nouns in NOUNS.values():
        pieces.extend(nouns)
    for words in SIZE_WORDS.values():
        pieces.extend(words)
    pieces.extend(SIDES)
    pieces.extend(["there is a", "sided", "on the", "no evidence of"])
    pieces.extend(NO_FINDING_PHRASES)
    pieces.extend(FILLER_SENTENCES)
    pieces.extend(SHORT_IMPRESSIONS)
    pieces.extend(GENERAL_SHAPES + GENERAL_PLACES + GENERAL_BRIGHTNESS)
    pieces.extend(["a picture of a", "at the", "near the", "without"])
    words = []
    seen = set()
    for piece in pieces:
        for w in re.findall(r"[a-z0-9]+", piece.lower()):
            if w not in seen:
                seen.add(w)
                words.append(w)
    return words

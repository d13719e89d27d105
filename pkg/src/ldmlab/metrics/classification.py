"""Classifier-based evaluation of generated images: preprocessing, AUROC and
the generate-then-classify loop."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy.stats import rankdata

from ..errors import InvalidArgumentError, PromptTooLongError, UndefinedMetricError
from .report import EvalReport

# full-scale chain: shortest side -> 512, centre crop 512, resize 224
FULL_SCALE_PREPROCESS = (512, 224)


def _resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    if img.shape == (height, width):
        return img.astype(np.float32, copy=True)
    pil = Image.fromarray(img.astype(np.float32), mode="F")
    return np.asarray(pil.resize((width, height), Image.BILINEAR), dtype=np.float32)


def preprocess_for_classifier(image, crop=512, size=224) -> np.ndarray:
    """Aspect-preserving resize so the short side equals ``crop``, centre crop
    to ``crop`` x ``crop``, then resize to ``size`` x ``size``."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 2:
        raise InvalidArgumentError("expected a 2-D grayscale image")
    h, w = img.shape
    scale = crop / min(h, w)
    nh, nw = max(crop, int(round(h * scale))), max(crop, int(round(w * scale)))
    img = _resize(img, nh, nw)
    top, left = (nh - crop) // 2, (nw - crop) // 2
    img = img[top:top + crop, left:left + crop]
    return _resize(img, size, size)


def binary_auroc(scores, truth) -> float:
    """Mann-Whitney AUROC; tied positive/negative pairs count 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(bool)
    n_pos = int(truth.sum())
    n_neg = len(truth) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative")
    ranks = rankdata(scores)
    return float((ranks[truth].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass
class AurocResult:
    per_class: dict
    macro: float
    undefined: list = field(default_factory=list)
    macro_classes: list = field(default_factory=list)


def auroc(scores, truths, class_names=None, macro_classes=None) -> AurocResult:
    """Per-class AUROC for (N, C) scores/truths and the macro mean over
    ``macro_classes`` (default: all). Classes with a single truth value are
    reported in ``undefined`` and left out of the macro."""
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths)
    if scores.ndim == 1:
        scores, truths = scores[:, None], truths[:, None]
    if scores.shape != truths.shape:
        raise InvalidArgumentError("scores and truths must have the same shape")
    names = list(class_names) if class_names is not None else [str(i) for i in range(scores.shape[1])]
    per_class, undefined = {}, []
    for j, name in enumerate(names):
        try:
            per_class[name] = binary_auroc(scores[:, j], truths[:, j])
        except UndefinedMetricError:
            undefined.append(name)
    chosen = [c for c in (macro_classes or names) if c in per_class]
    macro = float(np.mean([per_class[c] for c in chosen])) if chosen else float("nan")
    return AurocResult(per_class, macro, undefined, chosen)


def classify_generated(model, prompts, truths, classifier, sampler_config, class_names,
                       seeds=None, preprocess=None, batch_size=128, images_out=None,
                       config_fingerprint="none", corpus_fingerprint="none") -> EvalReport:
    """One generated image per prompt, scored by ``classifier`` against the
    prompts' labels. Over-long prompts are skipped and counted."""
    from ..diffusion.pipeline import generate_many
    from ..nn.tokenizer import tokenize

    kept, kept_truth, kept_seeds, skipped = [], [], [], 0
    seeds = list(seeds) if seeds is not None else [sampler_config.seed + i for i in range(len(prompts))]
    for p, t, s in zip(prompts, truths, seeds):
        try:
            tokenize(p, model.tokenizer)
        except PromptTooLongError:
            skipped += 1
            continue
        kept.append(p)
        kept_truth.append(t)
        kept_seeds.append(s)
    images = generate_many(kept, model, sampler_config, kept_seeds, batch_size)
    if images_out is not None:
        images_out.append(images)
    if preprocess is not None:
        images = np.stack([preprocess(im) for im in images])
    probs = classifier.predict_proba(images)
    res = auroc(probs, np.asarray(kept_truth), class_names)
    values = {f"auroc.{c}": v for c, v in res.per_class.items()}
    if np.isfinite(res.macro):
        values["auroc.macro"] = res.macro
    values["n_images"] = len(kept)
    values["skipped_prompts"] = skipped
    rows = [{"class": c, "auroc": res.per_class.get(c, float("nan"))} for c in class_names]
    return EvalReport("classify", values, config_fingerprint, corpus_fingerprint,
                      tables={"per_class": rows},
                      flags=[f"undefined:{c}" for c in res.undefined])

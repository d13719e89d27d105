"""Text-encoder knowledge probe: nearest-neighbour label agreement of report
embeddings (CheXpert@10) and its evolution across training checkpoints."""
from __future__ import annotations

import numpy as np
import torch

from ..data.grammar import CLASS_INDEX, PRESENT, TOY_CLASSES, general_label
from ..errors import InvalidArgumentError
from .report import EvalReport
from .retrieval import cosine_matrix


def chexpert_at_k(embeddings, labels, class_names=None, k=10):
    """Per-class score: over reports positive for the class, the mean
    percentage of their k nearest neighbours (cosine, self excluded, ties by
    index) also positive for it. Macro = mean over classes with a positive.

    Returns ``(per_class, macro)``.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n = len(emb)
    if n < k + 1:
        raise InvalidArgumentError(f"need at least {k + 1} reports, got {n}")
    if labels.shape[0] != n:
        raise InvalidArgumentError("one label row per report required")
    names = list(class_names) if class_names is not None else [str(j) for j in range(labels.shape[1])]
    sims = cosine_matrix(emb, emb)
    np.fill_diagonal(sims, -np.inf)
    idx = np.arange(n)
    neighbours = np.stack([np.lexsort((idx, -row))[:k] for row in sims])
    per_class = {}
    for j, name in enumerate(names):
        pos = labels[:, j]
        if pos.any():
            per_class[name] = float(100.0 * labels[neighbours[pos], j].mean())
    macro = float(np.mean(list(per_class.values()))) if per_class else float("nan")
    return per_class, macro


def chexpert_at_10(embeddings, labels, class_names=None):
    return chexpert_at_k(embeddings, labels, class_names, k=10)


@torch.no_grad()
def text_embeddings(pipeline, texts, batch_size=256) -> np.ndarray:
    """Mean-pooled conditioning sequence over the real (non-pad) tokens."""
    out = []
    for i in range(0, len(texts), batch_size):
        chunk = list(texts[i:i + batch_size])
        seq = pipeline.encode_prompts(chunk)
        mask = (pipeline.prompt_ids(chunk) != pipeline.tokenizer.pad_id).to(seq.dtype)[..., None]
        out.append(((seq * mask).sum(1) / mask.sum(1)).double().numpy())
    return np.concatenate(out) if out else np.zeros((0, pipeline.preset.d_text))


def _in_domain_labels(records, classes):
    cols = [CLASS_INDEX[c] for c in classes]
    return np.stack([r.labels[cols] == PRESENT for r in records])


def forgetting_probe(checkpoints, in_domain, general, classes=TOY_CLASSES, steps=None,
                     config_fingerprint="none", corpus_fingerprint="none"):
    """One EvalReport per checkpoint with (step, in_domain_macro, general_macro).

    ``checkpoints``: pipelines or checkpoint paths (or a dict step -> either).
    ``in_domain``: ReportRecords; ``general``: (caption, image, shape) tuples.
    """
    from ..nn.checkpoint import load_pipeline

    if isinstance(checkpoints, dict):
        steps = list(checkpoints)
        checkpoints = list(checkpoints.values())
    checkpoints = list(checkpoints)
    if len(checkpoints) < 2:
        raise InvalidArgumentError("the forgetting probe needs at least two checkpoints")
    steps = list(steps) if steps is not None else list(range(len(checkpoints)))
    texts = [r.impression for r in in_domain]
    y_in = _in_domain_labels(in_domain, classes)
    captions = [g[0] for g in general]
    y_gen = np.stack([general_label(c) for c in captions]).astype(bool)
    reports = []
    for step, ckpt in zip(steps, checkpoints):
        pipe = load_pipeline(ckpt)[0] if isinstance(ckpt, (str, bytes)) or hasattr(ckpt, "__fspath__") else ckpt
        per_in, macro_in = chexpert_at_10(text_embeddings(pipe, texts), y_in, classes)
        _, macro_gen = chexpert_at_10(text_embeddings(pipe, captions), y_gen)
        values = {"step": float(step), "in_domain_macro": macro_in, "general_macro": macro_gen}
        values.update({f"in_domain.{c}": v for c, v in per_in.items()})
        reports.append(EvalReport("forgetting_probe", values, config_fingerprint, corpus_fingerprint))
    return reports


def forgetting_table(reports):
    return [{"step": int(r["step"]), "in_domain_macro": r["in_domain_macro"], "general_macro": r["general_macro"]}
            for r in reports]

"""Classifier training on mixes of real and synthetic images."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data.grammar import TOY_CLASSES
from ..data.records import corpus_fingerprint
from ..diffusion import SamplerConfig, generate_many
from ..errors import ConfigError, InvalidArgumentError
from ..metrics.classification import auroc
from ..metrics.oracle import ClassifierHyperparams, toy_label_matrix, train_classifier
from ..metrics.report import EvalReport

REFERENCE_AUROC = {"baseline_auroc": 0.73, "best_mixed_auroc": 0.84}


@dataclass
class AugmentationSplit:
    real_count: int
    synth_count: int = 0
    checkpoint: object = None     # path or in-memory pipeline; needed when synth_count > 0
    label: str = ""

    def __post_init__(self):
        if self.real_count < 0 or self.synth_count < 0:
            raise InvalidArgumentError("counts must be non-negative")
        if self.real_count + self.synth_count == 0:
            raise InvalidArgumentError("a split needs real or synthetic images")
        if not self.label:
            self.label = f"R{self.real_count}+S{self.synth_count}"


@dataclass
class AugmentationPlan:
    splits: list
    classifier: ClassifierHyperparams = field(default_factory=ClassifierHyperparams)
    baseline_index: int = 0
    validation_fraction: float = 0.2
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig("pndm", 50, 4.0))
    seed: int = 0
    classes: tuple = TOY_CLASSES
    reference: dict = field(default_factory=lambda: dict(REFERENCE_AUROC))


def _check_checkpoint(checkpoint):
    if checkpoint is None:
        raise ConfigError("synthetic split has no generator checkpoint", key="augmentation.splits.checkpoint")
    if isinstance(checkpoint, (str, Path)) and not Path(checkpoint).exists():
        raise ConfigError(f"generator checkpoint not found: {checkpoint}", key="augmentation.splits.checkpoint")


def _load_generator(checkpoint):
    _check_checkpoint(checkpoint)
    if isinstance(checkpoint, (str, Path)):
        from ..nn.checkpoint import load_pipeline

        return load_pipeline(checkpoint)[0]
    return checkpoint


def accuracy(probs, truth, threshold=0.5) -> float:
    """Element-wise multi-label accuracy at ``threshold``."""
    return float(np.mean((np.asarray(probs) >= threshold) == np.asarray(truth).astype(bool)))


def run_augmentation_study(plan: AugmentationPlan, train_records, test_records, classifier_factory=None,
                           config_fingerprint="none", log=print) -> EvalReport:
    """One row per plan split: (label, real_n, synth_n, auroc, accuracy, delta)
    plus the two provenance fingerprints.

    Synthetic images are sampled from the split's checkpoint, conditioned on
    impressions drawn from the real training pool, and labelled by those
    impressions. Every classifier shares one real validation set (held out
    from the pool) for early stopping and is tested on ``test_records``.
    ``classifier_factory(images, labels, val_images, val_labels, hp)`` must
    return an object with ``predict_proba``; the default trains the CNN.
    """
    factory = classifier_factory or (lambda *a: train_classifier(*a).model)
    for s in plan.splits:
        if s.synth_count > 0:
            _check_checkpoint(s.checkpoint)
    rng = np.random.default_rng(plan.seed)
    pool = list(train_records)
    order = rng.permutation(len(pool))
    n_val = max(1, int(round(plan.validation_fraction * len(pool))))
    val = [pool[i] for i in order[:n_val]]
    real_pool = [pool[i] for i in order[n_val:]]
    need = max(s.real_count for s in plan.splits)
    if need > len(real_pool):
        raise InvalidArgumentError(f"plan asks for {need} real images, pool has {len(real_pool)}")
    val_x = np.stack([r.image for r in val])
    val_y = toy_label_matrix(val, plan.classes)
    test_x = np.stack([r.image for r in test_records])
    test_y = toy_label_matrix(test_records, plan.classes)
    corpus_fp = corpus_fingerprint(list(train_records) + list(test_records))
    rows = []
    for k, split in enumerate(plan.splits):
        real = real_pool[:split.real_count]
        xs = [np.stack([r.image for r in real])] if real else []
        ys = [toy_label_matrix(real, plan.classes)] if real else []
        if split.synth_count:
            generator = _load_generator(split.checkpoint)
            cond_idx = np.random.default_rng(plan.seed + 1 + k).integers(len(real_pool), size=split.synth_count)
            cond = [real_pool[i] for i in cond_idx]
            seeds = [plan.seed * 1_000_003 + 700_000 + i for i in range(split.synth_count)]
            xs.append(generate_many([r.impression for r in cond], generator, plan.sampler, seeds))
            ys.append(toy_label_matrix(cond, plan.classes))
        x, y = np.concatenate(xs), np.concatenate(ys)
        hp = dataclasses.replace(plan.classifier, seed=plan.seed + k)
        model = factory(x, y, val_x, val_y, hp)
        probs = model.predict_proba(test_x)
        res = auroc(probs, test_y, plan.classes)
        rows.append({"label": split.label, "real_n": split.real_count, "synth_n": split.synth_count,
                     "auroc": res.macro, "accuracy": accuracy(probs, test_y),
                     "config_fingerprint": config_fingerprint, "corpus_fingerprint": corpus_fp})
        log(f"{split.label}: auroc={res.macro:.3f}")
    base = rows[plan.baseline_index]["auroc"]
    order = ("label", "real_n", "synth_n", "auroc", "accuracy", "delta", "config_fingerprint", "corpus_fingerprint")
    rows = [{k: {**r, "delta": r["auroc"] - base}[k] for k in order} for r in rows]
    values = {f"{r['label']}.auroc": r["auroc"] for r in rows}
    values.update({f"{r['label']}.accuracy": r["accuracy"] for r in rows})
    meta = {f"reference.{k}": v for k, v in plan.reference.items()}
    meta["classifier"] = (f"AdamW lr={plan.classifier.learning_rate} wd={plan.classifier.weight_decay} "
                          f"patience={plan.classifier.patience} constant-lr")
    return EvalReport("augmentation_study", values, config_fingerprint, corpus_fp,
                      tables={"mix_results": rows}, metadata=meta)

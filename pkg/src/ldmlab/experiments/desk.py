"""Desk-scale base model and the evaluation suite shared by every experiment.

The base model plays the role of a general-domain pretrained generator: its
VAE is fitted on toy chest films plus general-domain pictures, and its U-Net
and text encoder are pretrained on general-domain captions only. Fine-tuning
then adapts it to the chest-film corpus.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..adaptation import FineTuneConfig, run_strategy, strategy_presets
from ..data import CorpusSpec, build_corpus, general_corpus_generate
from ..data.grammar import TOY_CLASSES
from ..data.records import corpus_fingerprint
from ..diffusion import ModelPreset, Pipeline, SamplerConfig, generate_many
from ..errors import ConfigError, TrainingDivergedError
from ..metrics.classification import auroc
from ..metrics.fidelity import ClassifierFeatureExtractor, RandomProjectionExtractor, fid
from ..metrics.msssim import default_scales, intra_prompt_diversity, ms_ssim
from ..metrics.oracle import ClassifierHyperparams, OracleClassifier, toy_label_matrix, train_classifier
from ..metrics.report import EvalReport
from ..nn.checkpoint import load_pipeline, load_tensors, save_pipeline, save_tensors
from ..nn.tokenizer import count_tokens
from ..nn.vae import reconstruction_mse, train_vae


@dataclass
class DeskConfig:
    seed: int = 0
    corpus: CorpusSpec = field(default_factory=lambda: CorpusSpec(n_train=4000, n_test=1200))
    model: ModelPreset = field(default_factory=ModelPreset)
    general_n: int = 2000
    vae_steps: int = 800
    vae_batch_size: int = 32
    pretrain_steps: int = 500
    pretrain_lr: float = 1e-3
    classifier: ClassifierHyperparams = field(default_factory=lambda: ClassifierHyperparams(max_epochs=40))
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig("pndm", 50, 4.0))
    eval_prompts: int = 0            # 0 = every test prompt
    diversity_prompts: int = 25
    samples_per_prompt: int = 4

    def fingerprint(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class DeskBase:
    config: DeskConfig
    splits: object
    general: list
    pipeline: Pipeline
    classifier: OracleClassifier
    info: dict = field(default_factory=dict)
    _view_splits: dict = field(default_factory=dict, repr=False)

    @property
    def test_images(self):
        return np.stack([r.image for r in self.splits.test])

    @property
    def test_truth(self):
        return toy_label_matrix(self.splits.test)

    def eval_records(self):
        n = self.config.eval_prompts
        return self.splits.test[:n] if n else self.splits.test

    def train_records(self, views=("PA",)):
        views = tuple(views)
        if views == tuple(self.config.corpus.views_included):
            return self.splits.train
        if views not in self._view_splits:
            spec = dataclasses.replace(self.config.corpus, views_included=views)
            self._view_splits[views] = build_corpus(spec).train
        return self._view_splits[views]

    def extractors(self):
        return {
            "oracle": ClassifierFeatureExtractor(self.classifier),
            "randproj": RandomProjectionExtractor(self.config.model.image_size, 64, seed=self.config.seed),
        }

    @property
    def corpus_fingerprint(self):
        return corpus_fingerprint(self.splits.train + self.splits.test)


def _classifier_from_state(tensors, meta):
    clf = OracleClassifier(meta["n_classes"], meta["feature_dim"], meta["image_size"])
    clf.load_state_dict(tensors)
    clf.eval()
    return clf


def prepare_base(config: DeskConfig | None = None, cache_dir=None, log=print) -> DeskBase:
    """Corpus, general-domain pretrained pipeline and oracle classifier.

    With ``cache_dir`` the trained weights are stored under a key derived from
    the config and reused on the next call.
    """
    config = config or DeskConfig()
    t0 = time.perf_counter()
    splits = build_corpus(config.corpus)
    general = general_corpus_generate(config.general_n, seed=config.seed + 101, size=config.model.image_size)
    cache = Path(cache_dir) / f"base-{config.fingerprint()}" if cache_dir else None
    if cache is not None and (cache / "base.ckpt").exists() and (cache / "classifier.ckpt").exists():
        pipeline, meta = load_pipeline(cache / "base.ckpt")
        tensors, _, cmeta = load_tensors(cache / "classifier.ckpt")
        classifier = _classifier_from_state(tensors, cmeta)
        log(f"loaded cached base model from {cache}")
        return DeskBase(config, splits, general, pipeline, classifier, meta.get("info", {}))

    torch.manual_seed(config.seed)
    pipeline = Pipeline.build(config.model, seed=config.seed)
    vae_images = np.stack([r.image for r in splits.train] + [g[1] for g in general])
    train_vae(pipeline.vae, vae_images, steps=config.vae_steps, batch_size=config.vae_batch_size, seed=config.seed)
    info = {"vae_heldout_mse": reconstruction_mse(pipeline.vae, np.stack([r.image for r in splits.test]))}
    log(f"vae fitted: held-out mse {info['vae_heldout_mse']:.5f} ({time.perf_counter() - t0:.0f}s)")

    images = np.stack([r.image for r in splits.train])
    labels = toy_label_matrix(splits.train)
    n_fit = len(images) * 4 // 5
    hp = dataclasses.replace(config.classifier, seed=config.seed)
    fit = train_classifier(images[:n_fit], labels[:n_fit], images[n_fit:], labels[n_fit:], hp)
    real = auroc(fit.model.predict_proba(np.stack([r.image for r in splits.test])),
                 toy_label_matrix(splits.test), TOY_CLASSES)
    info["real_test_auroc"] = real.macro
    log(f"oracle classifier: real test macro AUROC {real.macro:.3f} ({time.perf_counter() - t0:.0f}s)")

    pre = FineTuneConfig(train_steps=config.pretrain_steps, learning_rate=config.pretrain_lr, seed=config.seed,
                         name="general-pretrain")
    record = run_strategy(pre, [(c, im) for c, im, _ in general], pipeline)[0]
    info["pretrain_final_loss"] = float(np.mean(record.losses[-50:])) if record.losses else float("nan")
    log(f"general-domain pretraining done ({time.perf_counter() - t0:.0f}s)")

    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
        save_pipeline(pipeline, cache / "base.ckpt", metadata={"info": info})
        save_tensors(cache / "classifier.ckpt", fit.model.state_dict(),
                     metadata={"n_classes": len(TOY_CLASSES), "feature_dim": fit.model.feature_dim,
                               "image_size": fit.model.image_size})
    return DeskBase(config, splits, general, pipeline, fit.model, info)


def prompt_seeds(n, seed):
    return [seed * 1_000_003 + i for i in range(n)]


def generate_for_records(pipeline, records, sampler: SamplerConfig, seed=None):
    seed = sampler.seed if seed is None else seed
    return generate_many([r.impression for r in records], pipeline, sampler, prompt_seeds(len(records), seed))


def evaluate_pipeline(pipeline, base: DeskBase, name="model", seed=0, images=None) -> dict:
    """Fidelity (FID per extractor), diversity (MS-SSIM over samples per prompt)
    and conditioning (oracle macro AUROC) of one pipeline."""
    cfg = base.config
    records = base.eval_records()
    if images is None:
        images = generate_for_records(pipeline, records, cfg.sampler, seed)
    real = np.stack([r.image for r in records])
    row = {}
    for ext_name, ext in base.extractors().items():
        row[f"fid.{ext_name}"] = fid(real, images, ext)
    res = auroc(base.classifier.predict_proba(images), toy_label_matrix(records), TOY_CLASSES)
    row["auroc.macro"] = res.macro
    row.update({f"auroc.{c}": v for c, v in res.per_class.items()})
    div = diversity_samples(pipeline, records[:cfg.diversity_prompts], cfg.sampler, cfg.samples_per_prompt, seed)
    row["msssim.mean"] = float(np.mean([d[1] for d in div])) if div else float("nan")
    row["msssim.std"] = float(np.std([d[1] for d in div])) if div else float("nan")
    return row


def diversity_samples(pipeline, records, sampler: SamplerConfig, per_prompt=4, seed=0):
    """[(token_count, mean pairwise MS-SSIM)] over ``per_prompt`` samples of each prompt."""
    if not records:
        return []
    prompts = [r.impression for r in records for _ in range(per_prompt)]
    seeds = [seed * 7_919 + 500_000 + i for i in range(len(prompts))]
    images = generate_many(prompts, pipeline, sampler, seeds)
    side = images.shape[-1]
    scales = default_scales(side)
    out = []
    for i, r in enumerate(records):
        group = images[i * per_prompt:(i + 1) * per_prompt]
        mean = intra_prompt_diversity(group, lambda a, b: ms_ssim(a, b, scales=scales))[0]
        out.append((count_tokens(r.impression), mean))
    return out


GRID_COLUMNS = ("name", "family", "steps", "learning_rate", "fid.oracle", "fid.randproj",
                  "msssim.mean", "msssim.std", "auroc.macro", "status", "config_fingerprint", "corpus_fingerprint")


def finetune_and_evaluate(config: FineTuneConfig, base: DeskBase, checkpoint_dir=None, seed=None):
    """Train one strategy cell from a copy of the base model and evaluate it.

    Returns ``(row, record, pipeline)``; a diverged run yields a flagged row
    and ``record=None``.
    """
    seed = base.config.seed if seed is None else seed
    pipe = base.pipeline.copy()
    corpus = base.train_records(config.corpus_views)
    row = {"name": config.name or "run", "family": config.family, "steps": config.train_steps,
           "learning_rate": config.learning_rate, "config_fingerprint": config.fingerprint(),
           "corpus_fingerprint": corpus_fingerprint(corpus)}
    try:
        record, pipe = run_strategy(config, corpus, pipe, checkpoint_dir=checkpoint_dir)
    except TrainingDivergedError as exc:
        row.update({k: float("nan") for k in GRID_COLUMNS if k not in row})
        row["status"] = f"diverged@{exc.step}"
        return row, None, None
    sampler = base.config.sampler
    if config.strategy == "textual_inversion":
        from ..adaptation import CONCEPT_TOKEN

        records = base.eval_records()
        images = generate_many([f"{CONCEPT_TOKEN} {r.impression}" for r in records], pipe, sampler,
                               prompt_seeds(len(records), seed))
        row.update(evaluate_pipeline(pipe, base, config.name, seed, images=images))
    else:
        row.update(evaluate_pipeline(pipe, base, config.name, seed))
    row["status"] = "ok"
    return row, record, pipe


def run_finetune_grid(configs, base: DeskBase, output_dir=None, seed=None, log=print) -> list:
    """One strategy-grid row per config; the untrained ``original`` row is
    always included (prepended when absent)."""
    configs = list(configs)
    if not any(c.name == "original" for c in configs):
        configs.insert(0, strategy_presets()["original"])
    rows = []
    for cfg in configs:
        t0 = time.perf_counter()
        ckpt_dir = Path(output_dir) / "checkpoints" if output_dir else None
        row = finetune_and_evaluate(cfg, base, ckpt_dir, seed)[0]
        rows.append({k: row.get(k) for k in GRID_COLUMNS})
        log(f"{cfg.name}: fid.oracle={row.get('fid.oracle', float('nan')):.2f} "
            f"auroc={row.get('auroc.macro', float('nan')):.3f} ({time.perf_counter() - t0:.0f}s)")
    return rows


def grid_report(rows, base: DeskBase) -> EvalReport:
    values = {}
    for r in rows:
        for k in ("fid.oracle", "fid.randproj", "msssim.mean", "auroc.macro"):
            v = r.get(k)
            if isinstance(v, float) and np.isfinite(v):
                values[f"{r['name']}.{k}"] = v
    return EvalReport("finetune_grid", values, base.config.fingerprint(), base.corpus_fingerprint,
                      tables={"strategy_grid": rows},
                      flags=[f"{r['name']}:{r['status']}" for r in rows if r["status"] != "ok"])


def resolve_presets(names):
    presets = strategy_presets()
    missing = [n for n in names if n not in presets]
    if missing:
        raise ConfigError(f"unknown fine-tuning preset(s): {', '.join(missing)}", key="grid.presets")
    return [presets[n] for n in names]

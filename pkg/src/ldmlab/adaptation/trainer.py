"""Noise-prediction fine-tuning over the strategy matrix.

Every strategy runs through :func:`_run`, which owns the data order, the
noise/timestep streams and the optimizer. The set of parameters handed to the
optimizer is exactly the set the config declares trainable, so frozen
components stay bitwise identical.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from ..diffusion.pipeline import Pipeline
from ..diffusion.schedule import add_noise, training_loss
from ..errors import InvalidArgumentError, TrainingDivergedError
from ..nn.tokenizer import tokenize
from ..nn.unet import UNet
from .config import FineTuneConfig
from .plugins import PluginConditioner, load_plugin, swap_text_encoder


@dataclass
class TrainingRunRecord:
    config: FineTuneConfig
    losses: list
    wall_clock: float
    hashes_before: dict
    hashes_after: dict
    trainable: list
    checkpoint: Optional[str] = None
    checkpoints: dict = field(default_factory=dict)
    corpus_fingerprint: str = ""

    def export_loss_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss"])
            for i, loss in enumerate(self.losses):
                w.writerow([i, repr(float(loss))])
        return Path(path)

    def metadata(self, include_timing=True):
        """Run description; ``include_timing=False`` keeps it reproducible
        byte-for-byte (used inside checkpoints)."""
        out = {
            "config": self.config.to_dict(),
            "hashes_before": self.hashes_before,
            "hashes_after": self.hashes_after,
            "trainable": self.trainable,
            "corpus_fingerprint": self.corpus_fingerprint,
            "optimizer": {"name": "AdamW", "lr": self.config.learning_rate,
                          "weight_decay": self.config.weight_decay, "schedule": "constant"},
            "n_steps": len(self.losses),
        }
        if include_timing:
            out["wall_clock"] = self.wall_clock
        return out


@dataclass
class TrainingCorpus:
    """Prompts paired with frozen-VAE latents."""
    prompts: list
    latents: torch.Tensor
    fingerprint: str = ""

    def __len__(self):
        return len(self.prompts)


def prepare_corpus(corpus, pipeline: Pipeline) -> TrainingCorpus:
    """Accepts ReportRecords, (prompt, image) pairs, or a ready TrainingCorpus."""
    if isinstance(corpus, TrainingCorpus):
        return corpus
    corpus = list(corpus)
    if not corpus:
        raise InvalidArgumentError("training corpus is empty")
    if hasattr(corpus[0], "impression"):
        prompts = [r.impression for r in corpus]
        images = np.stack([r.image for r in corpus])
    else:
        prompts = [p for p, _ in corpus]
        images = np.stack([np.asarray(img) for _, img in corpus])
    for p in prompts:
        tokenize(p, pipeline.tokenizer)
    x = torch.as_tensor(images, dtype=pipeline.dtype)[:, None]
    with torch.no_grad():
        latents = torch.cat([pipeline.vae.encode(x[i:i + 256]) for i in range(0, len(x), 256)])
    from ..data.records import corpus_fingerprint

    fp = corpus_fingerprint(corpus) if hasattr(corpus[0], "impression") else ""
    return TrainingCorpus(prompts, latents, fp)


class _Stream:
    """Epoch-shuffled minibatches plus prompt dropout, noise and timesteps,
    all derived from one seed."""

    def __init__(self, corpus: TrainingCorpus, batch_size, dropout, seed, num_timesteps):
        self.corpus = corpus
        self.batch_size = batch_size
        self.dropout = dropout
        self.rng = np.random.default_rng(seed)
        self.gen = torch.Generator().manual_seed(seed)
        self.num_timesteps = num_timesteps
        self.order = np.empty(0, dtype=int)
        self.pos = 0

    def _indices(self):
        out = []
        while len(out) < self.batch_size:
            if self.pos >= len(self.order):
                self.order = self.rng.permutation(len(self.corpus))
                self.pos = 0
            take = min(self.batch_size - len(out), len(self.order) - self.pos)
            out.extend(self.order[self.pos:self.pos + take].tolist())
            self.pos += take
        return out

    def next(self):
        idx = self._indices()
        prompts = [self.corpus.prompts[i] for i in idx]
        drop = self.rng.random(len(idx)) < self.dropout
        prompts = ["" if d else p for p, d in zip(prompts, drop)]
        latents = self.corpus.latents[idx]
        noise = torch.randn(latents.shape, generator=self.gen, dtype=latents.dtype)
        t = torch.randint(0, self.num_timesteps, (len(idx),), generator=self.gen)
        return prompts, latents, noise, t


def _reinit_unet(pipeline: Pipeline, seed):
    torch.manual_seed(seed)
    fresh = UNet(pipeline.unet.latent_channels, pipeline.preset.unet_channels, pipeline.unet.context_dim,
                 pipeline.unet.temb_dim).to(pipeline.dtype)
    pipeline.unet.load_state_dict(fresh.state_dict())


def _set_trainable(pipeline: Pipeline, named: dict):
    for module in pipeline.components().values():
        for p in module.parameters():
            p.requires_grad_(False)
    for p in named.values():
        p.requires_grad_(True)


def declared_trainable(config: FineTuneConfig, pipeline: Pipeline) -> dict:
    """Qualified-name -> parameter map of everything ``config`` trains."""
    named = {}
    if config.unet_mode != "frozen":
        named.update({f"unet.{n}": p for n, p in pipeline.unet.named_parameters()})
    if config.text_encoder_source == "builtin":
        if config.text_encoder_mode == "finetune" and config.strategy == "standard":
            named.update({f"text_encoder.{n}": p for n, p in pipeline.text_encoder.named_parameters()})
    elif isinstance(pipeline.conditioner, PluginConditioner):
        named.update({f"conditioner.{n}": p for n, p in pipeline.conditioner.trainable_parameters().items()})
    return named


def _run(pipeline: Pipeline, config: FineTuneConfig, corpus: TrainingCorpus, named_params: dict,
         prior: TrainingCorpus | None = None, embedding_weight_fn=None, callback: Callable | None = None,
         checkpoint_steps=(), checkpoint_fn=None):
    steps = config.train_steps
    stream = _Stream(corpus, config.batch_size, config.prompt_dropout, config.seed,
                     pipeline.schedule.num_train_timesteps)
    prior_stream = None
    if prior is not None:
        prior_stream = _Stream(prior, config.batch_size, config.prompt_dropout, config.seed + 1_000_003,
                               pipeline.schedule.num_train_timesteps)
    params = list(named_params.values())
    optimizer = torch.optim.AdamW(params, lr=config.learning_rate, weight_decay=config.weight_decay) if params else None
    for m in pipeline.components().values():
        m.train()
    losses = []
    checkpoints = {}
    checkpoint_steps = set(checkpoint_steps)
    if 0 in checkpoint_steps and checkpoint_fn is not None:
        checkpoints[0] = checkpoint_fn(0)
    try:
        for step in range(steps):
            prompts, latents, noise, t = stream.next()
            weight = embedding_weight_fn() if embedding_weight_fn else None
            context = pipeline.encode_prompts(prompts, embedding_weight=weight)
            pred = pipeline.unet(add_noise(latents, noise, t, pipeline.schedule), t, context)
            loss = training_loss(pred, noise)
            info = {"instance": (pred, noise)}
            if prior_stream is not None:
                p_prompts, p_latents, p_noise, p_t = prior_stream.next()
                p_context = pipeline.encode_prompts(p_prompts, embedding_weight=weight)
                p_pred = pipeline.unet(add_noise(p_latents, p_noise, p_t, pipeline.schedule), p_t, p_context)
                loss = loss + config.prior_weight * training_loss(p_pred, p_noise)
                info["prior"] = (p_pred, p_noise)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(step, value)
            if optimizer is not None:
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
            losses.append(value)
            if callback is not None:
                callback(step, info)
            if step + 1 in checkpoint_steps and checkpoint_fn is not None:
                checkpoints[step + 1] = checkpoint_fn(step + 1)
    finally:
        pipeline.eval()
        for module in pipeline.components().values():
            for p in module.parameters():
                p.requires_grad_(False)
    return losses, checkpoints


def _finish(config, pipeline, corpus, losses, before, start, named, checkpoints, checkpoint_dir):
    record = TrainingRunRecord(
        config=config,
        losses=losses,
        wall_clock=time.perf_counter() - start,
        hashes_before=before,
        hashes_after=pipeline.component_hashes(),
        trainable=sorted(named),
        checkpoints=checkpoints,
        corpus_fingerprint=corpus.fingerprint,
    )
    if checkpoint_dir is not None:
        from ..nn.checkpoint import save_pipeline

        path = Path(checkpoint_dir) / f"{config.name or 'run'}-final.ckpt"
        save_pipeline(pipeline, path, metadata={"run": record.metadata(include_timing=False), "step": config.train_steps})
        record.checkpoint = str(path)
        record.export_loss_csv(Path(checkpoint_dir) / f"{config.name or 'run'}-loss.csv")
    return record


def _checkpoint_fn(pipeline, config, checkpoint_dir, keep_in_memory):
    if checkpoint_dir is None and not keep_in_memory:
        return None

    def save(step):
        if checkpoint_dir is None:
            return pipeline.copy()
        from ..nn.checkpoint import save_pipeline

        path = Path(checkpoint_dir) / f"{config.name or 'run'}-step{step:06d}.ckpt"
        save_pipeline(pipeline, path, metadata={"step": step, "config": config.to_dict()})
        return str(path)

    return save


def train(config: FineTuneConfig, corpus, pipeline: Pipeline, callback=None, checkpoint_dir=None,
          checkpoint_steps=(), keep_checkpoints_in_memory=False) -> TrainingRunRecord:
    """Optimise the noise-prediction MSE, updating ``pipeline`` in place.

    ``checkpoint_steps`` lists step counts at which to snapshot the pipeline
    (to ``checkpoint_dir`` or, with ``keep_checkpoints_in_memory``, as copies).
    """
    config.validate()
    if config.strategy == "textual_inversion":
        raise InvalidArgumentError("use textual_inversion_train for the textual inversion strategy")
    if config.text_encoder_source == "external_plugin" and pipeline.conditioner is None:
        if not config.plugin:
            raise InvalidArgumentError("external_plugin source needs a plugin name or a swapped pipeline")
        raise InvalidArgumentError("swap the external encoder in first (swap_text_encoder)")
    if config.text_encoder_source == "builtin" and pipeline.conditioner is not None:
        raise InvalidArgumentError("pipeline conditions on an external encoder but config says builtin")
    corpus = prepare_corpus(corpus, pipeline)
    start = time.perf_counter()
    if config.unet_mode == "train_from_random":
        _reinit_unet(pipeline, config.seed)
    before = pipeline.component_hashes()
    named = declared_trainable(config, pipeline)
    _set_trainable(pipeline, named)
    losses, checkpoints = _run(pipeline, config, corpus, named, callback=callback,
                               checkpoint_steps=checkpoint_steps,
                               checkpoint_fn=_checkpoint_fn(pipeline, config, checkpoint_dir,
                                                            keep_checkpoints_in_memory))
    return _finish(config, pipeline, corpus, losses, before, start, named, checkpoints, checkpoint_dir)


def textual_inversion_train(config: FineTuneConfig, corpus, new_token: str, pipeline: Pipeline,
                            init_token: str | None = None, callback=None, checkpoint_dir=None):
    """Add ``new_token`` to the vocabulary and train only its embedding row."""
    if config.strategy != "textual_inversion":
        config = config.replace(strategy="textual_inversion", unet_mode="frozen", text_encoder_mode="frozen")
    config.validate()
    if new_token in pipeline.tokenizer.vocabulary:
        raise InvalidArgumentError(f"token {new_token!r} already in vocabulary")
    enc = pipeline.text_encoder
    init = None
    if init_token is not None:
        init = enc.token_embedding.weight[pipeline.tokenizer.vocabulary[init_token]].detach().clone()
    pipeline.tokenizer.add_token(new_token)
    row_index = enc.add_token_row(init)
    corpus = prepare_corpus(corpus, pipeline)
    start = time.perf_counter()
    before = pipeline.component_hashes()
    row = torch.nn.Parameter(enc.token_embedding.weight[row_index].detach().clone())
    frozen_table = enc.token_embedding.weight.detach()[:row_index]
    named = {"text_encoder.token_embedding.weight[new_row]": row}
    _set_trainable(pipeline, {})
    row.requires_grad_(True)

    def weight():
        return torch.cat([frozen_table, row[None]], dim=0)

    losses, checkpoints = _run(pipeline, config, corpus, named, embedding_weight_fn=weight, callback=callback)
    with torch.no_grad():
        enc.token_embedding.weight[row_index] = row.detach()
    return _finish(config, pipeline, corpus, losses, before, start, named, checkpoints, checkpoint_dir)


def dreambooth_train(config: FineTuneConfig, instance_corpus, prior_corpus, pipeline: Pipeline,
                     callback=None, checkpoint_dir=None) -> TrainingRunRecord:
    """U-Net fine-tuning with a prior-preservation term:
    ``loss = MSE(instance batch) + prior_weight * MSE(prior batch)``."""
    if config.prior_weight < 0:
        raise InvalidArgumentError("prior_weight must be non-negative")
    if config.strategy != "dreambooth":
        config = config.replace(strategy="dreambooth", text_encoder_mode="frozen")
    config.validate()
    instance = prepare_corpus(instance_corpus, pipeline)
    prior = prepare_corpus(prior_corpus, pipeline)
    start = time.perf_counter()
    if config.unet_mode == "train_from_random":
        _reinit_unet(pipeline, config.seed)
    before = pipeline.component_hashes()
    named = declared_trainable(config, pipeline)
    _set_trainable(pipeline, named)
    losses, checkpoints = _run(pipeline, config, instance, named, prior=prior, callback=callback)
    return _finish(config, pipeline, instance, losses, before, start, named, checkpoints, checkpoint_dir)


def textual_projection_train(config: FineTuneConfig, corpus, external_encoder, pipeline: Pipeline,
                             callback=None, checkpoint_dir=None):
    """Train a projection head from ``external_encoder`` into the U-Net's
    conditioning space (plus the U-Net unless it is frozen).

    Returns ``(record, swapped_pipeline)``; the input pipeline's U-Net is
    shared with, and updated through, the swapped pipeline.
    """
    if config.strategy != "textual_projection":
        config = config.replace(strategy="textual_projection", text_encoder_source="external_plugin",
                                text_encoder_mode="frozen")
    config.validate()
    if isinstance(external_encoder, str):
        external_encoder = load_plugin(external_encoder, pipeline.tokenizer.max_tokens)
    if not hasattr(external_encoder, "output_dim"):
        raise InvalidArgumentError("external encoder must declare output_dim")
    swapped = pipeline if pipeline.conditioner is not None else swap_text_encoder(pipeline, external_encoder)
    record = train(config, corpus, swapped, callback=callback, checkpoint_dir=checkpoint_dir)
    return record, swapped


def generate_prior_corpus(pipeline: Pipeline, prompts, sampler_config, seeds=None):
    """Prior-class pairs sampled from the current model, for prior preservation."""
    from ..diffusion.pipeline import generate_many

    images = generate_many(prompts, pipeline, sampler_config, seeds)
    return list(zip(prompts, images))

"""YAML experiment configuration.

Schema (every section optional)::

    kind: finetune_grid | eval_suite | augmentation_study | forgetting_probe | corpus_build
    seed: int
    output_dir: path
    cache_dir: path                 # reuse of the trained base model
    corpus:     CorpusSpec fields
    model:      ModelPreset fields, or {preset: desk | tiny}
    base:       general_n, vae_steps, vae_batch_size, pretrain_steps, pretrain_lr,
                eval_prompts, diversity_prompts, samples_per_prompt
    classifier: learning_rate, weight_decay, patience, max_epochs, batch_size
    sampler:    method, num_inference_steps, guidance_scale
    finetune:   preset (name) plus FineTuneConfig overrides
    train:      checkpoint_steps (intermediate snapshots written next to the final one)
    grid:       presets (list of names), overrides (FineTuneConfig fields)
    sample:     checkpoint, prompts (list), n (test prompts when prompts absent)
    eval:       checkpoint, a, b (FeatureSet files), extractor, n_query, n_candidates
    augmentation: splits (list of {real, synth, checkpoint}), validation_fraction
    probe:      checkpoints (list), steps (list), general_n
    report:     input_dir, title, plots

Unknown keys raise ConfigError naming the dotted key.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..adaptation import FineTuneConfig, strategy_presets
from ..data import CorpusSpec
from ..diffusion import ModelPreset, SamplerConfig
from ..errors import ConfigError
from ..metrics.oracle import ClassifierHyperparams
from .desk import DeskConfig

KINDS = ("finetune_grid", "eval_suite", "augmentation_study", "forgetting_probe", "corpus_build", "train", "sample")


def _fields(cls, exclude=()):
    return {f.name for f in dataclasses.fields(cls)} - set(exclude)


SECTION_KEYS = {
    "corpus": _fields(CorpusSpec),
    "model": _fields(ModelPreset) | {"preset"},
    "base": {"general_n", "vae_steps", "vae_batch_size", "pretrain_steps", "pretrain_lr", "eval_prompts",
             "diversity_prompts", "samples_per_prompt"},
    "classifier": _fields(ClassifierHyperparams, exclude=("seed",)),
    "sampler": _fields(SamplerConfig, exclude=("seed",)),
    "finetune": _fields(FineTuneConfig) | {"preset"},
    "train": {"checkpoint_steps"},
    "grid": {"presets", "overrides"},
    "sample": {"checkpoint", "prompts", "n"},
    "eval": {"checkpoint", "a", "b", "extractor", "n_query", "n_candidates", "n_prompts"},
    "augmentation": {"splits", "validation_fraction", "baseline_index"},
    "probe": {"checkpoints", "steps", "general_n"},
    "report": {"input_dir", "title", "plots"},
}
TOP_KEYS = {"kind", "seed", "output_dir", "cache_dir"} | set(SECTION_KEYS)
SPLIT_KEYS = {"real", "synth", "checkpoint", "label"}


@dataclass
class ExperimentConfig:
    kind: str = "eval_suite"
    seed: int = 0
    output_dir: str = "runs/default"
    cache_dir: str | None = None
    sections: dict = field(default_factory=dict)
    source: str | None = None

    def section(self, name) -> dict:
        return dict(self.sections.get(name) or {})

    def desk(self) -> DeskConfig:
        corpus = CorpusSpec(**{"n_train": 4000, "n_test": 1200, **self.section("corpus"), "seed": self.seed})
        model_kw = self.section("model")
        preset = model_kw.pop("preset", "desk")
        model = ModelPreset.tiny() if preset == "tiny" else ModelPreset()
        model = dataclasses.replace(model, **{k: tuple(v) if isinstance(v, list) else v for k, v in model_kw.items()})
        corpus = dataclasses.replace(corpus, image_size=model.image_size)
        sampler = SamplerConfig(**{**dataclasses.asdict(DeskConfig().sampler), **self.section("sampler"),
                                   "seed": self.seed})
        classifier = ClassifierHyperparams(**{"max_epochs": 40, **self.section("classifier"), "seed": self.seed})
        return DeskConfig(seed=self.seed, corpus=corpus, model=model, classifier=classifier, sampler=sampler,
                          **self.section("base"))

    def finetune(self) -> FineTuneConfig:
        kw = self.section("finetune")
        name = kw.pop("preset", "lr5e-5_60k")
        presets = strategy_presets()
        if name not in presets:
            raise ConfigError(f"unknown fine-tuning preset {name!r}", key="finetune.preset")
        if "corpus_views" in kw:
            kw["corpus_views"] = tuple(kw["corpus_views"])
        return presets[name].replace(seed=self.seed, **kw)

    def output(self) -> Path:
        out = Path(self.output_dir)
        if self.source and not out.is_absolute():
            out = Path(self.source).parent / out
        return out


def validate_keys(raw: dict):
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    for key in raw:
        if key not in TOP_KEYS:
            raise ConfigError(f"unknown configuration key: {key}", key=key)
    for section, allowed in SECTION_KEYS.items():
        body = raw.get(section)
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"section {section} must be a mapping", key=section)
        for key in body:
            if key not in allowed:
                raise ConfigError(f"unknown configuration key: {section}.{key}", key=f"{section}.{key}")
    for i, split in enumerate((raw.get("augmentation") or {}).get("splits") or []):
        for key in split:
            if key not in SPLIT_KEYS:
                raise ConfigError(f"unknown configuration key: augmentation.splits[{i}].{key}",
                                  key=f"augmentation.splits[{i}].{key}")
    overrides = (raw.get("grid") or {}).get("overrides") or {}
    for key in overrides:
        if key not in _fields(FineTuneConfig):
            raise ConfigError(f"unknown configuration key: grid.overrides.{key}", key=f"grid.overrides.{key}")
    kind = raw.get("kind", "eval_suite")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}", key="kind")


def parse_config(raw: dict, source=None) -> ExperimentConfig:
    raw = dict(raw or {})
    validate_keys(raw)
    sections = {k: raw[k] for k in SECTION_KEYS if k in raw}
    return ExperimentConfig(raw.get("kind", "eval_suite"), int(raw.get("seed", 0)),
                            str(raw.get("output_dir", "runs/default")), raw.get("cache_dir"), sections,
                            str(source) if source else None)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}", key=None)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return parse_config(raw, path)

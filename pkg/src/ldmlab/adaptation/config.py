"""Fine-tuning configuration and the strategy-matrix presets."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from ..errors import InvalidArgumentError

UNET_MODES = ("frozen", "finetune_pretrained", "train_from_random")
TEXT_ENCODER_MODES = ("frozen", "finetune")
TEXT_ENCODER_SOURCES = ("builtin", "external_plugin")
STRATEGIES = ("standard", "textual_inversion", "dreambooth", "textual_projection")


@dataclass
class FineTuneConfig:
    unet_mode: str = "finetune_pretrained"
    text_encoder_mode: str = "finetune"
    text_encoder_source: str = "builtin"
    strategy: str = "standard"
    learning_rate: float = 1e-3
    train_steps: int = 2000
    batch_size: int = 32
    prompt_dropout: float = 0.1
    prior_weight: float = 1.0
    seed: int = 0
    weight_decay: float = 1e-2
    plugin: str = ""
    corpus_views: tuple = ("PA",)
    precision: str = "fp32"
    name: str = ""
    family: str = ""
    nominal_learning_rate: float | None = None
    nominal_train_steps: int | None = None

    def __post_init__(self):
        self.corpus_views = tuple(self.corpus_views)
        self.validate()

    def validate(self):
        if self.unet_mode not in UNET_MODES:
            raise InvalidArgumentError(f"unet_mode must be one of {UNET_MODES}")
        if self.text_encoder_mode not in TEXT_ENCODER_MODES:
            raise InvalidArgumentError(f"text_encoder_mode must be one of {TEXT_ENCODER_MODES}")
        if self.text_encoder_source not in TEXT_ENCODER_SOURCES:
            raise InvalidArgumentError(f"text_encoder_source must be one of {TEXT_ENCODER_SOURCES}")
        if self.strategy not in STRATEGIES:
            raise InvalidArgumentError(f"strategy must be one of {STRATEGIES}")
        if not 0.0 <= self.prompt_dropout <= 1.0:
            raise InvalidArgumentError("prompt_dropout must lie in [0, 1]")
        if self.prior_weight < 0:
            raise InvalidArgumentError("prior_weight must be non-negative")
        if self.train_steps < 0 or self.batch_size <= 0 or self.learning_rate < 0:
            raise InvalidArgumentError("train_steps >= 0, batch_size > 0 and learning_rate >= 0 required")
        if self.strategy == "textual_inversion" and (
                self.unet_mode != "frozen" or self.text_encoder_mode != "frozen"):
            raise InvalidArgumentError("textual inversion requires frozen U-Net and text encoder")
        if self.strategy == "textual_projection" and (
                self.text_encoder_source != "external_plugin" or self.text_encoder_mode != "frozen"):
            raise InvalidArgumentError("textual projection requires a frozen external text encoder")
        if self.text_encoder_source == "external_plugin" and self.text_encoder_mode != "frozen":
            raise InvalidArgumentError("external text encoders are frozen by contract")
        if self.strategy == "dreambooth" and self.text_encoder_mode != "frozen":
            raise InvalidArgumentError("dreambooth keeps the text encoder frozen")
        return self

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["corpus_views"] = list(self.corpus_views)
        return d

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# desk-scale analogs of the full-scale learning rates and step counts
DESK_LR = {5e-5: 1e-3, 1e-4: 2e-3}
DESK_STEPS = {1_000: 200, 12_500: 1_000, 60_000: 2_000}


def _preset(name, family, nominal_lr=5e-5, nominal_steps=60_000, **kw):
    kw.setdefault("learning_rate", DESK_LR[nominal_lr])
    kw.setdefault("train_steps", DESK_STEPS[nominal_steps])
    return FineTuneConfig(name=name, family=family, nominal_learning_rate=nominal_lr,
                          nominal_train_steps=nominal_steps, **kw)


def strategy_presets() -> dict[str, FineTuneConfig]:
    """One preset per row of the fine-tuning result table, plus the few-shot baselines."""
    presets = [
        _preset("original", "baselines", train_steps=0),
        _preset("dreambooth", "baselines", nominal_steps=1_000, strategy="dreambooth",
                text_encoder_mode="frozen", prompt_dropout=0.0),
        _preset("textual_inversion", "few_shot", nominal_steps=1_000, strategy="textual_inversion",
                unet_mode="frozen", text_encoder_mode="frozen", prompt_dropout=0.0),
        _preset("textual_projection", "few_shot", nominal_steps=1_000, strategy="textual_projection",
                unet_mode="frozen", text_encoder_mode="frozen", text_encoder_source="external_plugin",
                plugin="radbert-toy"),
    ]
    for lr, lr_name in ((1e-4, "1e-4"), (5e-5, "5e-5")):
        for steps, steps_name in ((1_000, "1k"), (12_500, "12.5k"), (60_000, "60k")):
            presets.append(_preset(f"lr{lr_name}_{steps_name}", "lr_train_steps", nominal_lr=lr, nominal_steps=steps))
    presets += [
        _preset("rnd_unet_1k", "components", nominal_steps=1_000, unet_mode="train_from_random"),
        _preset("rnd_unet_60k", "components", unet_mode="train_from_random"),
        _preset("rnd_unet_only_60k", "components", unet_mode="train_from_random", text_encoder_mode="frozen"),
        _preset("unet_only_60k", "components", text_encoder_mode="frozen"),
        _preset("radbert_1k", "text_encoders", nominal_steps=1_000, text_encoder_mode="frozen",
                text_encoder_source="external_plugin", plugin="radbert-toy"),
        _preset("radbert_12.5k", "text_encoders", nominal_steps=12_500, text_encoder_mode="frozen",
                text_encoder_source="external_plugin", plugin="radbert-toy"),
        _preset("sapbert_60k", "text_encoders", text_encoder_mode="frozen",
                text_encoder_source="external_plugin", plugin="sapbert-toy"),
        _preset("radbert_60k", "text_encoders", text_encoder_mode="frozen",
                text_encoder_source="external_plugin", plugin="radbert-toy"),
        _preset("multiview_60k", "multiple_views", corpus_views=("PA", "AP", "LAT")),
    ]
    return {p.name: p for p in presets}


FULL_SCALE = {
    "image_size": 512,
    "batch_size": 256,
    "train_steps": 60_000,
    "learning_rate": 5e-5,
    "guidance_scale": 4.0,
    "num_inference_steps": 75,
    "sampler": "pndm",
    "precision": "bf16",
}

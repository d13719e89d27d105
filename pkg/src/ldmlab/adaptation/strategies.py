"""Single entry point that runs any FineTuneConfig on a pipeline."""
from __future__ import annotations

from .config import FineTuneConfig
from .plugins import load_plugin, swap_text_encoder
from .trainer import dreambooth_train, textual_inversion_train, textual_projection_train, train

CONCEPT_TOKEN = "<chest-xray>"


def with_concept_token(prompts, token=CONCEPT_TOKEN):
    return [f"{token} {p}" for p in prompts]


def _pairs(corpus):
    out = []
    for item in corpus:
        if hasattr(item, "impression"):
            out.append((item.impression, item.image))
        else:
            out.append((item[0], item[1]))
    return out


def run_strategy(config: FineTuneConfig, corpus, pipeline, prior_corpus=None, new_token=CONCEPT_TOKEN, **kw):
    """Train ``pipeline`` (in place where possible) as ``config`` describes.

    Returns ``(record, pipeline)``; the returned pipeline differs from the
    input only when an external text encoder is swapped in.
    """
    config.validate()
    if config.strategy == "textual_inversion":
        pairs = [(f"{new_token} {p}", im) for p, im in _pairs(corpus)]
        return textual_inversion_train(config, pairs, new_token, pipeline, **kw), pipeline
    if config.strategy == "dreambooth":
        prior = prior_corpus if prior_corpus is not None else corpus
        return dreambooth_train(config, corpus, prior, pipeline, **kw), pipeline
    if config.strategy == "textual_projection":
        return textual_projection_train(config, corpus, config.plugin, pipeline, **kw)
    if config.text_encoder_source == "external_plugin" and pipeline.conditioner is None:
        pipeline = swap_text_encoder(pipeline, load_plugin(config.plugin, pipeline.tokenizer.max_tokens))
    return train(config, corpus, pipeline, **kw), pipeline

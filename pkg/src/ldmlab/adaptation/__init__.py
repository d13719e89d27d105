from .config import FULL_SCALE, FineTuneConfig, strategy_presets
from .plugins import PLUGINS, PluginConditioner, ToyDomainEncoder, load_plugin, restore_text_encoder, swap_text_encoder
from .trainer import (
    TrainingCorpus,
    TrainingRunRecord,
    declared_trainable,
    dreambooth_train,
    generate_prior_corpus,
    prepare_corpus,
    textual_inversion_train,
    textual_projection_train,
    train,
)
from .strategies import CONCEPT_TOKEN, run_strategy, with_concept_token

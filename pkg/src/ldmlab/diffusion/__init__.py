from .pipeline import ModelPreset, Pipeline, generate, generate_batch, generate_latents, generate_many
from .samplers import (
    AncestralSampler,
    PNDMSampler,
    SamplerConfig,
    denoise_step,
    guided_noise,
    inference_grid,
    make_sampler,
    transfer,
)
from .schedule import NoiseSchedule, add_noise, sample_noise, training_loss

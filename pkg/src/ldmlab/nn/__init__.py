from .checkpoint import load_pipeline, load_tensors, save_pipeline, save_tensors
from .layers import changed_parameters, count_parameters, parameter_hash, snapshot
from .text_encoder import TextEncoder, encode_text
from .tokenizer import TokenizerSpec, count_tokens, tokenize
from .unet import UNet, unet_predict
from .vae import VAE, reconstruction_mse, train_vae, vae_decode, vae_encode

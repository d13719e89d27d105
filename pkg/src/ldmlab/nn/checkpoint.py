"""Self-describing tensor container.

Layout: 8-byte magic, uint32 version, uint64 header length, UTF-8 JSON header,
then the raw little-endian tensor bytes back to back. The header lists every
tensor (name, dtype, shape, offset, nbytes), a manifest of per-component
parameter hashes and free-form metadata.
"""
from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import IntegrityError, InvalidArgumentError

MAGIC = b"LDMLABCK"
VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8", "float16": "<f2", "int64": "<i8", "int32": "<i4",
           "uint8": "|u1", "bool": "|b1"}


def _np_dtype_name(t: torch.Tensor) -> str:
    if t.dtype == torch.bfloat16:
        raise InvalidArgumentError("bfloat16 tensors are not storable; cast to float32 first")
    return str(t.dtype).replace("torch.", "")


def save_tensors(path, tensors: dict, manifest: dict | None = None, metadata: dict | None = None) -> Path:
    entries, blobs, offset = [], [], 0
    for name in sorted(tensors):
        t = tensors[name].detach().cpu().contiguous()
        dtype = _np_dtype_name(t)
        raw = t.numpy().astype(_DTYPES[dtype], copy=False).tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"tensors": entries, "manifest": manifest or {}, "metadata": metadata or {}},
                        sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    return path


def load_tensors(path):
    """Returns ``(tensors, manifest, metadata)``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint container")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise IntegrityError(f"{path}: unsupported container version {version}")
    header = json.loads(data[20:20 + hlen])
    base = 20 + hlen
    tensors = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        raw = data[start:start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise IntegrityError(f"{path}: truncated tensor {e['name']}")
        arr = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"]).copy()
        tensors[e["name"]] = torch.from_numpy(arr)
    return tensors, header["manifest"], header["metadata"]


def file_hash(path) -> str:
    import hashlib

    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_pipeline(pipeline, path, metadata: dict | None = None) -> Path:
    tensors = {}
    for comp, module in pipeline.components().items():
        for name, t in module.state_dict().items():
            tensors[f"{comp}.{name}"] = t
    meta = dict(metadata or {})
    meta["pipeline"] = {
        "preset": {k: list(v) if isinstance(v, tuple) else v
                   for k, v in dataclasses.asdict(pipeline.preset).items()},
        "vocabulary": pipeline.tokenizer.vocabulary,
        "max_tokens": pipeline.tokenizer.max_tokens,
        "beta": [float(b) for b in pipeline.schedule.beta],
        "plugin": getattr(getattr(pipeline.conditioner, "plugin", None), "name", None),
        "dtype": str(pipeline.dtype).replace("torch.", ""),
    }
    return save_tensors(path, tensors, pipeline.component_hashes(), meta)


def load_pipeline(path, verify=True):
    from ..diffusion.pipeline import ModelPreset, Pipeline
    from ..diffusion.schedule import NoiseSchedule
    from .text_encoder import TextEncoder
    from .tokenizer import TokenizerSpec
    from .unet import UNet
    from .vae import VAE

    tensors, manifest, meta = load_tensors(path)
    info = meta["pipeline"]
    preset = ModelPreset(**{k: tuple(v) if isinstance(v, list) else v for k, v in info["preset"].items()})
    tokenizer = TokenizerSpec(dict(info["vocabulary"]), info["max_tokens"])
    text_encoder = TextEncoder(tokenizer.vocab_size, preset.d_text, preset.max_tokens,
                               preset.text_layers, preset.text_heads)
    vae = VAE(preset.image_size, preset.latent_channels, preset.vae_channels)
    unet = UNet(preset.latent_channels, preset.unet_channels, preset.d_text, preset.temb_dim)
    schedule = NoiseSchedule.from_betas(np.asarray(info["beta"], dtype=np.float64))
    pipe = Pipeline(tokenizer, text_encoder, vae, unet, schedule, preset)
    if info.get("plugin"):
        from ..adaptation.plugins import load_plugin, swap_text_encoder

        pipe = swap_text_encoder(pipe, load_plugin(info["plugin"], tokenizer.max_tokens))
    dtype = getattr(torch, info.get("dtype", "float32"))
    pipe.to(dtype)
    for comp, module in pipe.components().items():
        prefix = comp + "."
        state = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
        module.load_state_dict(state)
    pipe.eval()
    if verify:
        hashes = pipe.component_hashes()
        for comp, h in manifest.items():
            if hashes.get(comp) != h:
                raise IntegrityError(f"{path}: component {comp} hash mismatch")
    return pipe, meta

"""Feature extraction and Fréchet distance between fitted Gaussians."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from ..errors import IntegrityError, InvalidArgumentError, NumericalError

FEATURE_MAGIC = b"LDMFEAT\0"
FEATURE_VERSION = 1
TRACE_TOLERANCE = 1e-6


@dataclass
class FeatureSet:
    matrix: np.ndarray
    extractor_id: str

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise InvalidArgumentError("feature matrix must be 2-D (n_samples, d)")
        if not np.all(np.isfinite(self.matrix)):
            raise InvalidArgumentError("feature matrix has non-finite entries")

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def d(self):
        return self.matrix.shape[1]

    def save(self, path) -> Path:
        """Header (magic, version, extractor id, n, d) then float32 little-endian rows."""
        ident = self.extractor_id.encode()
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(FEATURE_MAGIC)
            fh.write(struct.pack("<IH", FEATURE_VERSION, len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<QQ", self.n, self.d))
            fh.write(self.matrix.astype("<f4").tobytes())
        return path

    @classmethod
    def load(cls, path):
        data = Path(path).read_bytes()
        if data[:8] != FEATURE_MAGIC:
            raise IntegrityError(f"{path}: not a feature file")
        version, id_len = struct.unpack("<IH", data[8:14])
        if version != FEATURE_VERSION:
            raise IntegrityError(f"{path}: unsupported feature-file version {version}")
        ident = data[14:14 + id_len].decode()
        pos = 14 + id_len
        n, d = struct.unpack("<QQ", data[pos:pos + 16])
        raw = data[pos + 16:]
        if len(raw) != 4 * n * d:
            raise IntegrityError(f"{path}: expected {n}x{d} float32 values")
        return cls(np.frombuffer(raw, dtype="<f4").reshape(n, d), ident)


@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def d(self):
        return len(self.mu)


def fit_gaussian(features) -> GaussianStats:
    """Sample mean and unbiased covariance."""
    x = features.matrix if isinstance(features, FeatureSet) else np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidArgumentError("need at least two samples to fit a Gaussian")
    sigma = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    return GaussianStats(x.mean(axis=0), (sigma + sigma.T) / 2)


def _psd_sqrt(m):
    m = (m + m.T) / 2
    w, v = linalg.eigh(m)
    if not np.all(np.isfinite(w)):
        raise NumericalError("eigendecomposition did not converge")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The cross term uses tr((S_a^(1/2) S_b S_a^(1/2))^(1/2)), which equals
    tr((S_a S_b)^(1/2)) and only needs symmetric eigendecompositions.
    """
    if a.d != b.d:
        raise InvalidArgumentError(f"dimension mismatch: {a.d} vs {b.d}")
    root_a = _psd_sqrt(a.sigma)
    cross = _psd_sqrt(root_a @ b.sigma @ root_a)
    diff = a.mu - b.mu
    value = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * np.trace(cross))
    if value < 0:
        scale = max(1.0, float(np.trace(a.sigma) + np.trace(b.sigma)))
        if -value > TRACE_TOLERANCE * scale:
            raise NumericalError(f"negative Fréchet residue {value}")
        value = 0.0
    return value


# extractors ---------------------------------------------------------------

class RandomProjectionExtractor:
    """Fixed seeded linear projection of flattened pixels followed by tanh;
    an architecture-free control extractor."""

    def __init__(self, image_size=32, dim=64, seed=0):
        self.image_size = image_size
        self.d = dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.weight = rng.standard_normal((image_size * image_size, dim)) / image_size
        self.extractor_id = f"random-projection-{dim}-s{seed}"

    def __call__(self, images):
        x = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
        if x.shape[1] != self.weight.shape[0]:
            raise InvalidArgumentError("image geometry does not match the projection")
        return np.tanh((x - 0.5) @ self.weight)


class ClassifierFeatureExtractor:
    """Penultimate activations of a trained classifier (domain extractor role)."""

    def __init__(self, classifier, extractor_id="oracle-penultimate"):
        self.classifier = classifier
        self.d = classifier.feature_dim
        self.extractor_id = extractor_id

    def __call__(self, images):
        return self.classifier.features(images)


_REGISTRY: dict = {}


def register_extractor(name, extractor):
    _REGISTRY[name] = extractor
    return extractor


def get_extractor(name):
    if name not in _REGISTRY:
        if name.startswith("random-projection"):
            return register_extractor(name, RandomProjectionExtractor())
        raise InvalidArgumentError(f"unknown extractor {name!r}; registered: {sorted(_REGISTRY)}")
    return _REGISTRY[name]


def extract_features(images, extractor) -> FeatureSet:
    if isinstance(extractor, str):
        extractor = get_extractor(extractor)
    feats = np.asarray(extractor(images), dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != extractor.d:
        raise InvalidArgumentError(f"extractor returned shape {feats.shape}, declared d={extractor.d}")
    return FeatureSet(feats, extractor.extractor_id)


def fid(real_images, fake_images, extractor) -> float:
    a = fit_gaussian(extract_features(real_images, extractor))
    b = fit_gaussian(extract_features(fake_images, extractor))
    return frechet_distance(a, b)

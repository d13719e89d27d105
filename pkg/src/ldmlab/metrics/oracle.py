"""Small multi-label CNN trained on real toy images.

Its penultimate activations double as the domain feature extractor for
Fréchet distance, and its sigmoid outputs drive the AUROC evaluations and
the augmentation study.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from ..data.grammar import CLASS_INDEX, PRESENT, TOY_CLASSES
from ..errors import InvalidArgumentError
from .classification import auroc


def toy_label_matrix(records_or_labels, classes=TOY_CLASSES) -> np.ndarray:
    """(N, len(classes)) 0/1 matrix of present labels."""
    rows = [getattr(r, "labels", r) for r in records_or_labels]
    labels = np.asarray(rows).reshape(len(rows), -1)
    return (labels[:, [CLASS_INDEX[c] for c in classes]] == PRESENT).astype(np.float32)


class OracleClassifier(nn.Module):
    def __init__(self, n_classes=len(TOY_CLASSES), feature_dim=64, image_size=32):
        super().__init__()
        self.image_size = image_size
        self.feature_dim = feature_dim
        self.body = nn.Sequential(
            nn.Conv2d(1, 16, 3, padding=1), nn.ReLU(),
            nn.Conv2d(16, 16, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(32, 64, 3, padding=1), nn.ReLU(), nn.AdaptiveAvgPool2d(2),
            nn.Flatten(), nn.Linear(256, feature_dim), nn.ReLU(),
        )
        self.head = nn.Linear(feature_dim, n_classes)

    def forward(self, x):
        return self.head(self.body(x))

    def _batches(self, images, batch_size=512):
        x = torch.as_tensor(np.asarray(images, dtype=np.float32))
        if x.ndim == 2:
            x = x[None]
        if tuple(x.shape[1:]) != (self.image_size, self.image_size):
            raise InvalidArgumentError(f"classifier expects {self.image_size}x{self.image_size} images")
        for i in range(0, len(x), batch_size):
            yield x[i:i + batch_size, None]

    @torch.no_grad()
    def features(self, images) -> np.ndarray:
        self.eval()
        out = [self.body(b) for b in self._batches(images)]
        return torch.cat(out).numpy().astype(np.float64) if out else np.zeros((0, self.feature_dim))

    @torch.no_grad()
    def predict_proba(self, images) -> np.ndarray:
        self.eval()
        out = [torch.sigmoid(self(b)) for b in self._batches(images)]
        return torch.cat(out).numpy().astype(np.float64) if out else np.zeros((0, self.head.out_features))


@dataclass
class ClassifierHyperparams:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    patience: int = 15
    max_epochs: int = 60
    batch_size: int = 64
    seed: int = 0


@dataclass
class ClassifierFit:
    model: OracleClassifier
    best_epoch: int
    val_history: list = field(default_factory=list)
    epochs_run: int = 0


def train_classifier(images, labels, val_images, val_labels, hp: ClassifierHyperparams | None = None,
                     image_size=None) -> ClassifierFit:
    """AdamW with BCE loss; keeps the weights with the best validation macro
    AUROC and stops after ``patience`` epochs without improvement."""
    hp = hp or ClassifierHyperparams()
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.float32)
    if len(images) == 0:
        raise InvalidArgumentError("no training images")
    torch.manual_seed(hp.seed)
    model = OracleClassifier(labels.shape[1], image_size=image_size or images.shape[-1])
    opt = torch.optim.AdamW(model.parameters(), lr=hp.learning_rate, weight_decay=hp.weight_decay)
    rng = np.random.default_rng(hp.seed)
    x = torch.as_tensor(images)[:, None]
    y = torch.as_tensor(labels)
    loss_fn = nn.BCEWithLogitsLoss()
    best, best_state, best_epoch, history, stale = -np.inf, None, -1, [], 0
    epoch = 0
    for epoch in range(hp.max_epochs):
        model.train()
        order = rng.permutation(len(x))
        for i in range(0, len(order), hp.batch_size):
            idx = order[i:i + hp.batch_size]
            loss = loss_fn(model(x[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        score = auroc(model.predict_proba(val_images), val_labels).macro
        score = -np.inf if not np.isfinite(score) else score
        history.append(score)
        if score > best:
            best, best_state, best_epoch, stale = score, copy.deepcopy(model.state_dict()), epoch, 0
        else:
            stale += 1
            if stale >= hp.patience:
                break
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return ClassifierFit(model, best_epoch, history, epoch + 1)

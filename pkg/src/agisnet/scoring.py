"""Small glyph classifier used as the FID/IS feature extractor at desk scale."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class GlyphClassifier(nn.Module):
    def __init__(self, num_classes: int, embed_dim: int = 64, image_size: int = 64):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, 16, 4, 2, 1), nn.ReLU(),
            nn.Conv2d(16, 32, 4, 2, 1), nn.ReLU(),
            nn.Conv2d(32, 64, 4, 2, 1), nn.ReLU(),
            nn.AdaptiveAvgPool2d(4), nn.Flatten(),
            nn.Linear(64 * 16, embed_dim), nn.ReLU(),
        )
        self.head = nn.Linear(embed_dim, num_classes)

    def forward(self, x):
        return self.head(self.body(x))

    @staticmethod
    def _batch(images) -> torch.Tensor:
        if isinstance(images, torch.Tensor):
            return images.float()
        arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
        if arr.shape[-1] == 1:
            arr = np.repeat(arr, 3, axis=-1)
        return torch.from_numpy(arr.transpose(0, 3, 1, 2).copy())

    @torch.no_grad()
    def embed(self, images) -> np.ndarray:
        self.eval()
        return self.body(self._batch(images)).double().numpy()

    @torch.no_grad()
    def class_probs(self, images) -> np.ndarray:
        self.eval()
        return F.softmax(self(self._batch(images)).double(), dim=1).numpy()


def train_classifier(images, labels, num_classes: int, steps: int = 200, seed: int = 0, lr: float = 1e-3):
    """Fit a ``GlyphClassifier`` on (H, W, 3) images with integer labels."""
    torch.manual_seed(seed)
    model = GlyphClassifier(num_classes)
    x = GlyphClassifier._batch(images)
    y = torch.as_tensor(labels, dtype=torch.long)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    gen = torch.Generator().manual_seed(seed)
    model.train()
    for _ in range(steps):
        idx = torch.randint(0, len(x), (min(64, len(x)),), generator=gen)
        loss = F.cross_entropy(model(x[idx]), y[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    model.eval()
    return model


class IdentityEmbedding:
    """Extractor over precomputed vectors: embeddings pass through, probabilities are softmaxed."""

    def embed(self, vecs):
        return np.asarray(vecs, dtype=np.float64)

    def class_probs(self, vecs):
        v = np.asarray(vecs, dtype=np.float64)
        e = np.exp(v - v.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

"""Generated datasets for tests, the sweep harness and the CLI ``--synthetic`` mode."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import CLASS_TOKEN_SCALE, EmbeddingStore, class_tokens
from .rng import Rng, derive_seed


@dataclass
class SyntheticDataset:
    ids: list[str]
    labels: np.ndarray
    embeddings: EmbeddingStore
    radiomics: np.ndarray  # raw, un-normalized rows aligned with ids

    @property
    def pooled(self) -> np.ndarray:
        return self.embeddings.pooled(self.ids)


def make_synthetic(n: int = 300, n_classes: int = 3, n_features: int = 1312, n_latent: int = 8,
                   d_e: int = 32, d_t: int = 32, slices: int = 3, separation: float = 8.0,
                   feature_noise: float = 1.0, embed_noise: float = 0.05, seed: int = 7,
                   class_token_seed: int = 4321, class_token_scale: float = CLASS_TOKEN_SCALE) -> SyntheticDataset:
    """Balanced classes with separable image embeddings and radiomics.

    Image embeddings: each class has a random unit direction; each slice row
    is that direction plus isotropic gaussian noise of std ``embed_noise``.
    Radiomics mimic the strong correlation of real feature sets: a small
    latent vector (class mean of norm ``separation`` plus unit noise) is
    mixed into every column through a random loading matrix, and independent
    noise of std ``feature_noise`` is added per column. Columns are then given
    mixed scales and offsets to mimic heterogeneous feature units.
    """
    rng = Rng(seed)
    labels = np.array([i % n_classes for i in range(n)], dtype=np.int64)
    labels = labels[rng.permutation(n)]
    dirs = rng.normal((n_classes, d_e))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = rng.normal((n_classes, n_latent))
    centers *= separation / np.linalg.norm(centers, axis=1, keepdims=True)
    loadings = rng.normal((n_features, n_latent), 1.0 / np.sqrt(n_latent))
    scales = np.exp(rng.normal((n_features,), 2.0))
    offsets = rng.normal((n_features,), 100.0)

    ids = [f"syn{i:04d}" for i in range(n)]
    store = EmbeddingStore(d_e, class_tokens(class_token_seed, n_classes, d_t, class_token_scale))
    R = np.empty((n, n_features))
    for i, (nid, y) in enumerate(zip(ids, labels)):
        r = Rng(derive_seed(seed, i))
        store.add(nid, dirs[y][None, :] + r.normal((slices, d_e), embed_noise))
        latent = centers[y] + r.normal((n_latent,))
        row = loadings @ latent + r.normal((n_features,), feature_noise)
        R[i] = row * scales + offsets
    return SyntheticDataset(ids, labels, store, R)

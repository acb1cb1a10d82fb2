"""Frozen encoder boundary.

Image embeddings are produced outside this package (one row per slice) and
read through an embedding manifest; :func:`toy_image_encoder` is a small
deterministic stand-in used to build test fixtures. The text side is a seeded
two-layer tanh network that maps a prompt (a sequence of token vectors) to the
joint embedding space. Its weights never change; gradients flow through it to
the prompt tokens only.

Embedding manifest (JSON)::

    {"d_e": 64, "d_t": 32,
     "class_tokens": {"path": "class_tokens.f64", "n_classes": 3},
     "nodules": [{"nodule_id": "n001", "path": "n001.f32", "rows": 5, "d_e": 64}, ...]}

Nodule arrays are little-endian float32 in C order (rows x d_e); class tokens
are little-endian float64 (n_classes x d_t). Paths are relative to the
manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import Rng, derive_seed

# Prompts are mean-pooled over M + 1 tokens, so a unit-scale class token
# would be diluted to almost nothing at M = 50; see the class_tokens docstring.
CLASS_TOKEN_SCALE = 10.0


def pool_slices(slices: np.ndarray) -> np.ndarray:
    slices = np.asarray(slices, dtype=np.float64)
    if slices.ndim != 2 or slices.shape[0] == 0:
        raise ValueError("need a non-empty (slices, d_e) matrix")
    return slices.mean(axis=0)


def class_tokens(seed: int, n_classes: int, d_t: int, scale: float = CLASS_TOKEN_SCALE) -> np.ndarray:
    """One gaussian token per class, each from its own class-indexed sub-seed.

    Entries are N(0, scale^2). After pooling with M context tokens the class
    token contributes ``c / (M + 1)`` to the encoder input.
    """
    return np.stack([Rng(derive_seed(seed, k)).normal((d_t,), scale) for k in range(n_classes)])


@dataclass
class TextEncoderCache:
    shape: tuple
    h1: np.ndarray
    out: np.ndarray


class FrozenTextEncoder:
    """Mean-pool over tokens, then ``tanh(W1 . + b1)`` and ``tanh(W2 . + b2)``.

    Weights are drawn from :class:`Rng` in the order W1, b1, W2, b2 with
    ``W ~ N(0, gain^2 / fan_in)`` and ``b ~ N(0, bias_std^2)``.
    """

    def __init__(self, seed: int, d_t: int, hidden: int, d_e: int, gain: float = 1.0, bias_std: float = 0.1):
        self.seed = int(seed)
        self.d_t, self.hidden, self.d_e = int(d_t), int(hidden), int(d_e)
        self.gain, self.bias_std = float(gain), float(bias_std)
        rng = Rng(seed)
        self.W1 = rng.normal((hidden, d_t), gain / np.sqrt(d_t))
        self.b1 = rng.normal((hidden,), bias_std)
        self.W2 = rng.normal((d_e, hidden), gain / np.sqrt(hidden))
        self.b2 = rng.normal((d_e,), bias_std)
        for w in (self.W1, self.b1, self.W2, self.b2):
            w.setflags(write=False)

    def config(self) -> dict:
        return {"seed": self.seed, "d_t": self.d_t, "hidden": self.hidden, "d_e": self.d_e,
                "gain": self.gain, "bias_std": self.bias_std}

    def forward(self, tokens: np.ndarray) -> tuple[np.ndarray, TextEncoderCache]:
        tokens = np.asarray(tokens, dtype=np.float64)
        if tokens.ndim < 2 or tokens.shape[-1] != self.d_t:
            raise ValueError(f"tokens must have shape (..., L, {self.d_t}), got {tokens.shape}")
        if tokens.shape[-2] < 1:
            raise ValueError("prompt needs at least one token")
        pooled = tokens.mean(axis=-2)
        h1 = np.tanh(pooled @ self.W1.T + self.b1)
        out = np.tanh(h1 @ self.W2.T + self.b2)
        return out, TextEncoderCache(tokens.shape, h1, out)

    def backward(self, d_out: np.ndarray, cache: TextEncoderCache) -> np.ndarray:
        """Gradient w.r.t. the input tokens given the gradient w.r.t. the output."""
        d_a2 = d_out * (1.0 - cache.out ** 2)
        d_h1 = d_a2 @ self.W2
        d_a1 = d_h1 * (1.0 - cache.h1 ** 2)
        d_pooled = d_a1 @ self.W1
        length = cache.shape[-2]
        return np.broadcast_to(np.expand_dims(d_pooled / length, -2), cache.shape).copy()


def encode_prompt(encoder: FrozenTextEncoder, tokens: np.ndarray, n_context: int | None = None) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.float64)
    if n_context is not None and tokens.shape[-2] != n_context + 1:
        raise ValueError(f"expected {n_context + 1} tokens, got {tokens.shape[-2]}")
    return encoder.forward(tokens)[0]


class ToyImageEncoder:
    """Patch-mean features followed by a fixed seeded affine map.

    The crop is split into ``grid x grid`` patches with boundaries
    ``floor(i * n / grid)``; ``W ~ N(0, 1 / grid^2)``, ``b ~ N(0, 1)``.
    """

    def __init__(self, d_e: int, seed: int = 0, grid: int = 8):
        self.d_e, self.seed, self.grid = int(d_e), int(seed), int(grid)
        rng = Rng(seed)
        self.W = rng.normal((d_e, grid * grid), 1.0 / grid)
        self.b = rng.normal((d_e,))

    def patch_means(self, crop: np.ndarray) -> np.ndarray:
        crop = np.asarray(crop, dtype=np.float64)
        if crop.ndim != 2 or crop.shape[0] != crop.shape[1]:
            raise ValueError(f"crop must be square, got {crop.shape}")
        n = crop.shape[0]
        if n < self.grid:
            raise ValueError(f"crop side {n} smaller than patch grid {self.grid}")
        edges = [i * n // self.grid for i in range(self.grid + 1)]
        return np.array([crop[edges[r]:edges[r + 1], edges[c]:edges[c + 1]].mean()
                         for r in range(self.grid) for c in range(self.grid)])

    def __call__(self, crop: np.ndarray) -> np.ndarray:
        return self.W @ self.patch_means(crop) + self.b


def toy_image_encoder(crop: np.ndarray, d_e: int, seed: int = 0) -> np.ndarray:
    return ToyImageEncoder(d_e, seed)(crop)


@dataclass
class EmbeddingStore:
    d_e: int
    class_tokens: np.ndarray
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.class_tokens = np.asarray(self.class_tokens, dtype=np.float64)
        if self.class_tokens.ndim != 2 or self.class_tokens.shape[0] < 2:
            raise ValueError("need at least two class tokens")
        for nid, arr in list(self.entries.items()):
            self.entries[nid] = self._check(nid, arr)

    def _check(self, nid: str, arr) -> np.ndarray:
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ValueError(f"nodule {nid}: embeddings must be a non-empty (slices, d_e) matrix")
        if arr.shape[1] != self.d_e:
            raise ValueError(f"nodule {nid}: embedding width {arr.shape[1]} != d_e {self.d_e}")
        if not np.isfinite(arr).all():
            raise ValueError(f"nodule {nid}: non-finite embedding value")
        return arr

    @property
    def d_t(self) -> int:
        return self.class_tokens.shape[1]

    @property
    def n_classes(self) -> int:
        return self.class_tokens.shape[0]

    def add(self, nodule_id: str, slices) -> None:
        if nodule_id in self.entries:
            raise ValueError(f"duplicate nodule_id {nodule_id}")
        self.entries[nodule_id] = self._check(nodule_id, slices)

    def pooled(self, ids) -> np.ndarray:
        missing = [i for i in ids if i not in self.entries]
        if missing:
            raise ValueError(f"no embeddings for nodule {missing[0]}")
        return np.stack([pool_slices(self.entries[i]) for i in ids])

    def save(self, path) -> Path:
        path = Path(path)
        root = path.parent
        root.mkdir(parents=True, exist_ok=True)
        (root / "class_tokens.f64").write_bytes(self.class_tokens.astype("<f8").tobytes())
        nodules = []
        for nid in sorted(self.entries):
            arr = self.entries[nid]
            fname = f"{nid}.f32"
            (root / fname).write_bytes(arr.astype("<f4").tobytes())
            nodules.append({"nodule_id": nid, "path": fname, "rows": int(arr.shape[0]), "d_e": self.d_e})
        manifest = {
            "d_e": self.d_e,
            "d_t": self.d_t,
            "class_tokens": {"path": "class_tokens.f64", "n_classes": self.n_classes},
            "nodules": nodules,
        }
        path.write_text(json.dumps(manifest, indent=2) + "\n")
        return path


def load_embeddings(path, n_classes: int | None = None) -> EmbeddingStore:
    path = Path(path)
    root = path.parent
    manifest = json.loads(path.read_text())
    d_e = int(manifest["d_e"])
    d_t = int(manifest["d_t"])
    ct = manifest["class_tokens"]
    k = int(ct["n_classes"])
    if n_classes is not None and k != n_classes:
        raise ValueError(f"embedding store has {k} class tokens, config expects {n_classes}")
    tokens = np.frombuffer((root / ct["path"]).read_bytes(), dtype="<f8")
    if tokens.size != k * d_t:
        raise ValueError(f"class token file holds {tokens.size} values, expected {k * d_t}")
    store = EmbeddingStore(d_e, tokens.astype(np.float64).reshape(k, d_t))
    for entry in manifest["nodules"]:
        nid = str(entry["nodule_id"])
        f = root / entry["path"]
        if not f.exists():
            raise ValueError(f"nodule {nid}: missing embedding file {f}")
        raw = np.frombuffer(f.read_bytes(), dtype="<f4").astype(np.float64)
        rows = int(entry["rows"])
        width = int(entry.get("d_e", d_e))
        if width != d_e:
            raise ValueError(f"nodule {nid}: embedding width {width} != d_e {d_e}")
        if raw.size != rows * d_e:
            raise ValueError(f"nodule {nid}: payload holds {raw.size} values, expected {rows} x {d_e}")
        store.add(nid, raw.reshape(rows, d_e))
    return store

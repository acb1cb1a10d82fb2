"""Radiomics-conditioned prompt head.

A MetaNet (Linear-ReLU-Linear) maps an instance's normalized radiomics vector
to a token ``delta`` that is added to each of the M shared context tokens. The
prompt for class i is ``[v_1 + delta, ..., v_M + delta, c_i]``; it is encoded
by the frozen text encoder and compared with the image embedding by cosine
similarity. Class probabilities are a softmax over ``similarity / tau``.

Only the context tokens and the MetaNet weights are trainable. Gradients are
derived by hand and checked against central finite differences in the tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import FrozenTextEncoder, TextEncoderCache
from .rng import Rng

PARAM_NAMES = ("context", "W1", "b1", "W2", "b2")
# parameters that receive weight decay (biases are excluded)
DECAYED = ("context", "W1", "W2")


@dataclass
class PromptHeadParams:
    context: np.ndarray  # (M, d_t)
    W1: np.ndarray  # (hidden, n_features)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (d_t, hidden)
    b2: np.ndarray  # (d_t,)
    tau: float = 0.07

    def __post_init__(self):
        if self.context.ndim != 2 or self.context.shape[0] < 1:
            raise ValueError("need at least one context token")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.W2.shape != (self.d_t, self.W1.shape[0]):
            raise ValueError(f"W2 shape {self.W2.shape} inconsistent with d_t={self.d_t}, hidden={self.W1.shape[0]}")

    @property
    def M(self) -> int:
        return self.context.shape[0]

    @property
    def d_t(self) -> int:
        return self.context.shape[1]

    @property
    def n_features(self) -> int:
        return self.W1.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "PromptHeadParams":
        return PromptHeadParams(**{k: v.copy() for k, v in self.arrays().items()}, tau=self.tau)


def default_hidden(n_features: int) -> int:
    return max(1, math.ceil(n_features / 16))


def init_params(n_features: int, d_t: int, M: int = 50, hidden: int | None = None, tau: float = 0.07,
                seed: int = 0, context_std: float = 0.02) -> PromptHeadParams:
    """Context ~ N(0, context_std^2); W1 ~ N(0, 2 / n_features); W2 ~ N(0, 1 / hidden); zero biases.

    Draw order from one :class:`Rng` stream: context, W1, W2.
    """
    hidden = hidden or default_hidden(n_features)
    rng = Rng(seed)
    context = rng.normal((M, d_t), context_std)
    W1 = rng.normal((hidden, n_features), math.sqrt(2.0 / n_features))
    W2 = rng.normal((d_t, hidden), 1.0 / math.sqrt(hidden))
    return PromptHeadParams(context, W1, np.zeros(hidden), W2, np.zeros(d_t), tau)


def metanet_forward(params: PromptHeadParams, r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != params.n_features:
        raise ValueError(f"radiomics length {r.shape[-1]} != MetaNet input {params.n_features}")
    return np.maximum(r @ params.W1.T + params.b1, 0.0) @ params.W2.T + params.b2


def assemble_prompt(params: PromptHeadParams, delta: np.ndarray, class_token: np.ndarray) -> np.ndarray:
    """Token sequence ``[v_1 + delta, ..., v_M + delta, c]`` of shape (M + 1, d_t)."""
    delta = np.asarray(delta, dtype=np.float64)
    class_token = np.asarray(class_token, dtype=np.float64)
    if delta.shape != (params.d_t,) or class_token.shape != (params.d_t,):
        raise ValueError(f"delta and class token must have shape ({params.d_t},)")
    return np.concatenate([params.context + delta, class_token[None, :]], axis=0)


def assemble_prompts(params: PromptHeadParams, delta: np.ndarray, class_tokens: np.ndarray) -> np.ndarray:
    """Batched prompts of shape (B, N_c, M + 1, d_t)."""
    B = delta.shape[0]
    C = class_tokens.shape[0]
    ctx = params.context[None, None, :, :] + delta[:, None, None, :]
    ctx = np.broadcast_to(ctx, (B, C, params.M, params.d_t))
    cls = np.broadcast_to(class_tokens[None, :, None, :], (B, C, 1, params.d_t))
    return np.concatenate([ctx, cls], axis=2)


def cosine_similarity(x: np.ndarray, e: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Cosine between each row of x (B, d) and each e[b, i] (B, C, d).

    Returns the similarities plus the unit vectors and the prompt norms that
    the backward pass needs.
    """
    xn = np.linalg.norm(x, axis=-1)
    en = np.linalg.norm(e, axis=-1)
    if np.any(xn == 0):
        raise ValueError(f"zero-norm image embedding at batch index {int(np.flatnonzero(xn == 0)[0])}")
    if np.any(en == 0):
        raise ValueError("zero-norm prompt embedding; cosine similarity undefined")
    xh = x / xn[:, None]
    eh = e / en[..., None]
    return np.einsum("bd,bcd->bc", xh, eh), xh, eh, en


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


@dataclass
class PromptBatchOutput:
    logits: np.ndarray
    probabilities: np.ndarray
    similarities: np.ndarray
    delta: np.ndarray
    prompt_embeddings: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)


def classify(params: PromptHeadParams, x: np.ndarray, encoder: FrozenTextEncoder, class_tokens: np.ndarray,
             r: np.ndarray) -> PromptBatchOutput:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    r = np.atleast_2d(np.asarray(r, dtype=np.float64))
    class_tokens = np.asarray(class_tokens, dtype=np.float64)
    if x.shape[0] != r.shape[0]:
        raise ValueError(f"{x.shape[0]} image embeddings but {r.shape[0]} radiomics rows")
    if x.shape[1] != encoder.d_e:
        raise ValueError(f"image embedding width {x.shape[1]} != text encoder output {encoder.d_e}")
    if class_tokens.ndim != 2 or class_tokens.shape[1] != params.d_t:
        raise ValueError(f"class tokens must have shape (N_c, {params.d_t})")
    a1 = r @ params.W1.T + params.b1
    h = np.maximum(a1, 0.0)
    delta = h @ params.W2.T + params.b2
    tokens = assemble_prompts(params, delta, class_tokens)
    e, enc_cache = encoder.forward(tokens)
    sim, xh, eh, en = cosine_similarity(x, e)
    logits = sim / params.tau
    probs = softmax(logits)
    cache = {"r": r, "a1": a1, "h": h, "enc": enc_cache, "xh": xh, "eh": eh, "en": en}
    return PromptBatchOutput(logits, probs, sim, delta, e, cache)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> float:
    return float(-np.mean(log_softmax(logits)[np.arange(len(y)), y]))


def loss_and_grads(params: PromptHeadParams, x: np.ndarray, r: np.ndarray, y: np.ndarray,
                   encoder: FrozenTextEncoder, class_tokens: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and its gradient per trainable array.

    Labels ``y`` are 0-based class indices.
    """
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise ValueError("empty batch")
    n_classes = np.asarray(class_tokens).shape[0]
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes - 1}]")
    out = classify(params, x, encoder, class_tokens, r)
    B = y.size
    loss = cross_entropy(out.logits, y)

    c = out.cache
    d_logits = out.probabilities.copy()
    d_logits[np.arange(B), y] -= 1.0
    d_logits /= B
    d_sim = d_logits / params.tau
    # d cos(x, e) / d e = (x_hat - cos * e_hat) / |e|
    d_e = d_sim[..., None] * (c["xh"][:, None, :] - out.similarities[..., None] * c["eh"]) / c["en"][..., None]
    enc_cache: TextEncoderCache = c["enc"]
    d_tokens = encoder.backward(d_e, enc_cache)
    d_ctx_tokens = d_tokens[:, :, :params.M, :]
    d_context = d_ctx_tokens.sum(axis=(0, 1))
    d_delta = d_ctx_tokens.sum(axis=(1, 2))
    d_W2 = d_delta.T @ c["h"]
    d_b2 = d_delta.sum(axis=0)
    d_a1 = (d_delta @ params.W2) * (c["a1"] > 0)
    d_W1 = d_a1.T @ c["r"]
    d_b1 = d_a1.sum(axis=0)
    return loss, {"context": d_context, "W1": d_W1, "b1": d_b1, "W2": d_W2, "b2": d_b2}


def loss_only(params: PromptHeadParams, x, r, y, encoder, class_tokens) -> float:
    out = classify(params, x, encoder, class_tokens, r)
    return cross_entropy(out.logits, np.asarray(y, dtype=np.int64))


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, params: PromptHeadParams, extra_header: dict | None = None,
                    extra_arrays: dict[str, np.ndarray] | None = None) -> Path:
    """``<stem>.json`` header plus ``<stem>.bin`` of little-endian float64 arrays."""
    header_path = Path(path).with_suffix(".json")
    bin_path = header_path.with_suffix(".bin")
    arrays = dict(params.arrays())
    arrays.update(extra_arrays or {})
    layout = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        layout.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.size
    header = {
        "format": "prompt-head-checkpoint/1",
        "M": params.M,
        "d_t": params.d_t,
        "n_features": params.n_features,
        "hidden": params.W1.shape[0],
        "tau": params.tau,
        "data_file": bin_path.name,
        "arrays": layout,
    }
    header.update(extra_header or {})
    header_path.parent.mkdir(parents=True, exist_ok=True)
    bin_path.write_bytes(b"".join(blobs))
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return header_path


def load_checkpoint(path) -> tuple[PromptHeadParams, dict, dict[str, np.ndarray]]:
    header_path = Path(path).with_suffix(".json")
    header = json.loads(header_path.read_text())
    flat = np.frombuffer((header_path.parent / header["data_file"]).read_bytes(), dtype="<f8")
    arrays = {}
    for item in header["arrays"]:
        n = int(np.prod(item["shape"])) if item["shape"] else 1
        arrays[item["name"]] = flat[item["offset"]:item["offset"] + n].reshape(item["shape"]).astype(np.float64)
    params = PromptHeadParams(**{k: arrays.pop(k) for k in PARAM_NAMES}, tau=float(header["tau"]))
    return params, header, arrays

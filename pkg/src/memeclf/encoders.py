"""Encoder output contracts, layer-freeze policies, and deterministic toy
encoders for weight-free pipeline testing.

Image embeddings are 512-d; text embeddings are 1024-d and always
L2-normalized. Pretrained backends are adapters behind a registry: when no
adapter is registered the toy backends keep the whole harness runnable.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .preprocess import ImageTensor, TokenizedText

TEXT_DIM = 1024
IMAGE_DIM = 512


class CapabilityError(RuntimeError):
    """A pretrained encoder backend was requested but no adapter is available."""


@dataclass(frozen=True)
class FreezePolicy:
    total_layers: int
    trainable_layers: frozenset[int]  # 1-based indices

    def __post_init__(self):
        bad = [i for i in self.trainable_layers if not (1 <= i <= self.total_layers)]
        if bad:
            raise ValueError(f"trainable layer indices out of range [1, {self.total_layers}]: {bad}")

    @staticmethod
    def top_k(total_layers: int, k: int) -> "FreezePolicy":
        return FreezePolicy(total_layers, frozenset(range(total_layers - k + 1, total_layers + 1)))


# defaults: image backbone fine-tunes its top 2 of 12 layers, text its top 4 of 24
IMAGE_FREEZE_DEFAULT = FreezePolicy.top_k(12, 2)
TEXT_FREEZE_DEFAULT = FreezePolicy.top_k(24, 4)


@dataclass(frozen=True)
class EncoderSpec:
    backend: str  # pretrained_image | pretrained_text | toy_image | toy_text
    output_dim: int
    freeze: FreezePolicy | None = None
    seed: int = 0


def toy_text_spec(seed: int = 0) -> EncoderSpec:
    return EncoderSpec("toy_text", TEXT_DIM, TEXT_FREEZE_DEFAULT, seed)


def toy_image_spec(seed: int = 0) -> EncoderSpec:
    return EncoderSpec("toy_image", IMAGE_DIM, IMAGE_FREEZE_DEFAULT, seed)


_HIST_BUCKETS = 2048
_PATCH = 8

_projection_cache: dict[tuple[str, int], tuple[np.ndarray, np.ndarray]] = {}


def _projection(kind: str, in_dim: int, out_dim: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    key = (kind, seed)
    if key not in _projection_cache:
        digest = hashlib.blake2b(f"{kind}:{seed}".encode(), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        w = rng.standard_normal((in_dim, out_dim)) / np.sqrt(in_dim)
        b = rng.standard_normal(out_dim) * 0.01
        _projection_cache[key] = (w, b)
    return _projection_cache[key]


def encode_text(tokens: TokenizedText, spec: EncoderSpec) -> np.ndarray:
    """Text embedding of dimension 1024, unit L2 norm."""
    if spec.backend == "toy_text":
        vec = _toy_text_encode(tokens, spec.seed)
    elif spec.backend == "pretrained_text":
        vec = _call_adapter("pretrained_text", tokens)
    else:
        raise ValueError(f"{spec.backend!r} is not a text backend")
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (TEXT_DIM,):
        raise ValueError(f"text backend returned shape {vec.shape}, expected ({TEXT_DIM},)")
    norm = np.linalg.norm(vec)
    if norm == 0:
        raise ValueError("text backend returned a zero vector; cannot normalize")
    return vec / norm


def encode_image(image: ImageTensor, spec: EncoderSpec) -> np.ndarray:
    """Image embedding of dimension 512 (not re-normalized)."""
    if spec.backend == "toy_image":
        vec = _toy_image_encode(image, spec.seed)
    elif spec.backend == "pretrained_image":
        vec = _call_adapter("pretrained_image", image)
    else:
        raise ValueError(f"{spec.backend!r} is not an image backend")
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (IMAGE_DIM,):
        raise ValueError(f"image backend returned shape {vec.shape}, expected ({IMAGE_DIM},)")
    return vec


def _toy_text_encode(tokens: TokenizedText, seed: int) -> np.ndarray:
    hist = np.zeros(_HIST_BUCKETS)
    ids = tokens.token_ids[tokens.attention_mask == 1]
    np.add.at(hist, ids % _HIST_BUCKETS, 1.0)
    w, b = _projection("text", _HIST_BUCKETS, TEXT_DIM, seed)
    return hist @ w + b


def _toy_image_encode(image: ImageTensor, seed: int) -> np.ndarray:
    c, h, w = image.values.shape
    gh, gw = h // _PATCH, w // _PATCH
    patches = image.values[:, : gh * _PATCH, : gw * _PATCH].reshape(c, gh, _PATCH, gw, _PATCH)
    means = patches.mean(axis=(2, 4))
    variances = patches.var(axis=(2, 4))
    feats = np.concatenate([means.ravel(), variances.ravel()])
    pw, pb = _projection(f"image{feats.size}", feats.size, IMAGE_DIM, seed)
    return feats @ pw + pb


# ---- pretrained adapter registry -------------------------------------------

_adapters: dict[str, Callable] = {}


def register_backend(name: str, fn: Callable) -> None:
    _adapters[name] = fn


def _call_adapter(name: str, payload):
    if name not in _adapters:
        raise CapabilityError(
            f"no adapter registered for backend {name!r}; "
            "install/register one or use the toy backends"
        )
    return _adapters[name](payload)


# ---- freeze policy -----------------------------------------------------------


def apply_freeze_policy(encoder, policy: FreezePolicy) -> dict[str, object]:
    """Select trainable parameters per `policy`.

    `encoder` must expose `layer_parameters() -> dict[layer_index, dict[name, param]]`
    with 1-based layer indices. Parameters of frozen layers get
    `requires_grad = False` (when they carry that attribute) and are excluded
    from the returned set.
    """
    groups = encoder.layer_parameters()
    bad = [i for i in policy.trainable_layers if i not in groups]
    if bad:
        raise ValueError(f"policy names layers absent from the encoder: {sorted(bad)}")
    trainable: dict[str, object] = {}
    for layer_idx, params in groups.items():
        keep = layer_idx in policy.trainable_layers
        for name, p in params.items():
            if hasattr(p, "requires_grad"):
                p.requires_grad = keep
            if keep:
                trainable[f"layer{layer_idx}.{name}"] = p
    return trainable


# ---- on-disk embedding cache --------------------------------------------------


class EmbeddingCache:
    """Cache of raw embedding vectors keyed by (backend, sample id,
    preprocessing digest). One little-endian float32 length-prefixed blob
    per key."""

    def __init__(self, directory: str | Path):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)

    def _path(self, backend: str, sample_id: str, digest: str) -> Path:
        key = hashlib.blake2b(f"{backend}\x00{sample_id}\x00{digest}".encode(), digest_size=16).hexdigest()
        return self.dir / f"{key}.emb"

    def get(self, backend: str, sample_id: str, digest: str) -> np.ndarray | None:
        path = self._path(backend, sample_id, digest)
        if not path.exists():
            return None
        raw = path.read_bytes()
        (n,) = struct.unpack("<I", raw[:4])
        return np.frombuffer(raw[4 : 4 + 4 * n], dtype="<f4").astype(np.float64)

    def put(self, backend: str, sample_id: str, digest: str, vector: np.ndarray) -> None:
        vec = np.asarray(vector, dtype="<f4")
        blob = struct.pack("<I", vec.size) + vec.tobytes()
        self._path(backend, sample_id, digest).write_bytes(blob)

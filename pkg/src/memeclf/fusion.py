"""Classification heads for the ablation configurations.

M1 is text-only, M2/M3 image-only (original / text-removed images), M4 early
fusion by concatenation, and M7/M8 the hybrid head: shared latent projection,
multi-head self-attention over the two modality tokens, then instance-level
gated mixing. M5/M6 (late fusion) live in the ensemble module but their
member heads come from here.

Every configuration uses the same classifier family: input -> one hidden
layer of half the input width -> class logits, GELU + dropout.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import IMAGE_DIM, TEXT_DIM

CHECKPOINT_VERSION = 1

ALL_CONFIG_IDS = ("M1", "M2", "M3", "M4", "M5", "M6", "M7", "M8")
HEAD_CONFIG_IDS = ("M1", "M2", "M3", "M4", "M7", "M8")  # M5/M6 are ensembles
TEXT_REMOVED_IDS = frozenset({"M3", "M8"})

CONFIG_DESCRIPTIONS = {
    "M1": "Text-Only Baseline",
    "M2": "Image-Only (Original Images)",
    "M3": "Image-Only (Text-Removed)",
    "M4": "Early Fusion (Concatenation)",
    "M5": "Late Fusion (Soft Voting)",
    "M6": "Late Fusion (Bagging, k=3)",
    "M7": "Hybrid Fusion (Cross-Attn + Gating)",
    "M8": "Hybrid Fusion (Text-Removed Images)",
}


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfigId:
    id: str
    image_variant: str = "original"  # original | text_removed

    def __post_init__(self):
        if self.id not in ALL_CONFIG_IDS:
            raise FusionError(f"unknown configuration id {self.id!r}")
        if self.id in TEXT_REMOVED_IDS and self.image_variant != "text_removed":
            raise FusionError(f"{self.id} requires the text_removed image variant")
        if self.id in ("M2", "M7") and self.image_variant != "original":
            raise FusionError(f"{self.id} requires original images")

    @staticmethod
    def of(config_id: str) -> "ModelConfigId":
        variant = "text_removed" if config_id in TEXT_REMOVED_IDS else "original"
        return ModelConfigId(config_id, variant)


@dataclass(frozen=True)
class HybridHeadConfig:
    latent_dim: int = 256
    num_heads: int = 4
    dropout_rate: float = 0.5
    num_classes: int = 2
    img_dim: int = IMAGE_DIM
    txt_dim: int = TEXT_DIM

    def __post_init__(self):
        if self.latent_dim % self.num_heads != 0:
            raise FusionError(f"latent_dim {self.latent_dim} not divisible by num_heads {self.num_heads}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise FusionError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


@dataclass
class LatentPair:
    z_img: Tensor  # (B, d)
    z_txt: Tensor  # (B, d)


@dataclass
class GateWeights:
    g_img: np.ndarray  # (B,)
    g_txt: np.ndarray  # (B,)


@dataclass
class FusionOutput:
    logits: Tensor  # (B, num_classes)
    gate: GateWeights | None = None
    attention: np.ndarray | None = None  # (B, heads, 2, 2) row-stochastic


def _uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _affine_params(rng, in_dim: int, out_dim: int) -> tuple[Tensor, Tensor]:
    w = Tensor(_uniform_init(rng, in_dim, (in_dim, out_dim)), requires_grad=True)
    b = Tensor(np.zeros(out_dim), requires_grad=True)
    return w, b


def _as_batch(x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if t.ndim == 1:
        t = t.reshape(1, -1)
    return t


class MLPClassifier:
    """input -> hidden (half width) -> num_classes, GELU + dropout."""

    def __init__(self, in_dim: int, num_classes: int, dropout_rate: float, rng: np.random.Generator):
        self.in_dim = in_dim
        self.num_classes = num_classes
        self.dropout_rate = dropout_rate
        hidden = max(1, in_dim // 2)
        self.w1, self.b1 = _affine_params(rng, in_dim, hidden)
        self.w2, self.b2 = _affine_params(rng, hidden, num_classes)

    def parameters(self) -> dict[str, Tensor]:
        return {"clf.w1": self.w1, "clf.b1": self.b1, "clf.w2": self.w2, "clf.b2": self.b2}

    def forward(self, x: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise FusionError(f"classifier expects input dim {self.in_dim}, got {x.shape[-1]}")
        h = (x @ self.w1 + self.b1).gelu()
        h = ad.dropout(h, self.dropout_rate, rng if training else None)
        return h @ self.w2 + self.b2


class UnimodalModel:
    """M1 (text) or M2/M3 (image): a single-modality MLP classifier."""

    def __init__(self, config: ModelConfigId, head_cfg: HybridHeadConfig, rng: np.random.Generator):
        self.config = config
        self.head_cfg = head_cfg
        self.modality = "txt" if config.id == "M1" else "img"
        in_dim = head_cfg.txt_dim if self.modality == "txt" else head_cfg.img_dim
        self.classifier = MLPClassifier(in_dim, head_cfg.num_classes, head_cfg.dropout_rate, rng)

    def parameters(self) -> dict[str, Tensor]:
        return self.classifier.parameters()

    def forward(self, img, txt, training: bool = False, rng=None) -> FusionOutput:
        x = txt if self.modality == "txt" else img
        if x is None:
            raise FusionError(f"{self.config.id} requires the {self.modality} modality")
        return FusionOutput(logits=self.classifier.forward(_as_batch(x), training, rng))


class EarlyFusionModel:
    """M4: concatenate [image; text] (512 + 1024 = 1536) into one classifier."""

    def __init__(self, config: ModelConfigId, head_cfg: HybridHeadConfig, rng: np.random.Generator):
        self.config = config
        self.head_cfg = head_cfg
        in_dim = head_cfg.img_dim + head_cfg.txt_dim
        self.classifier = MLPClassifier(in_dim, head_cfg.num_classes, head_cfg.dropout_rate, rng)

    def parameters(self) -> dict[str, Tensor]:
        return self.classifier.parameters()

    def forward(self, img, txt, training: bool = False, rng=None) -> FusionOutput:
        if img is None or txt is None:
            raise FusionError(f"{self.config.id} requires both modalities")
        x = ad.concat([_as_batch(img), _as_batch(txt)], axis=-1)
        return FusionOutput(logits=self.classifier.forward(x, training, rng))


class HybridModel:
    """M7/M8: latent projection -> multi-head self-attention over the 2-token
    modality sequence (with modality-type embeddings, residual + layer norm)
    -> instance-level softmax gate -> shared classifier family."""

    def __init__(self, config: ModelConfigId, head_cfg: HybridHeadConfig, rng: np.random.Generator):
        self.config = config
        self.head_cfg = head_cfg
        d = head_cfg.latent_dim
        self.proj_img_w, self.proj_img_b = _affine_params(rng, head_cfg.img_dim, d)
        self.proj_txt_w, self.proj_txt_b = _affine_params(rng, head_cfg.txt_dim, d)
        self.type_img = Tensor(rng.uniform(-0.1, 0.1, size=d), requires_grad=True)
        self.type_txt = Tensor(rng.uniform(-0.1, 0.1, size=d), requires_grad=True)
        self.wq, self.bq = _affine_params(rng, d, d)
        self.wk, self.bk = _affine_params(rng, d, d)
        self.wv, self.bv = _affine_params(rng, d, d)
        self.wo, self.bo = _affine_params(rng, d, d)
        self.ln_gamma = Tensor(np.ones(d), requires_grad=True)
        self.ln_beta = Tensor(np.zeros(d), requires_grad=True)
        self.gate_w, self.gate_b = _affine_params(rng, 2 * d, 2)
        self.classifier = MLPClassifier(d, head_cfg.num_classes, head_cfg.dropout_rate, rng)

    def parameters(self) -> dict[str, Tensor]:
        params = {
            "proj_img.w": self.proj_img_w, "proj_img.b": self.proj_img_b,
            "proj_txt.w": self.proj_txt_w, "proj_txt.b": self.proj_txt_b,
            "type.img": self.type_img, "type.txt": self.type_txt,
            "attn.wq": self.wq, "attn.bq": self.bq,
            "attn.wk": self.wk, "attn.bk": self.bk,
            "attn.wv": self.wv, "attn.bv": self.bv,
            "attn.wo": self.wo, "attn.bo": self.bo,
            "attn.ln_gamma": self.ln_gamma, "attn.ln_beta": self.ln_beta,
            "gate.w": self.gate_w, "gate.b": self.gate_b,
        }
        params.update(self.classifier.parameters())
        return params

    def project_to_latent(self, img, txt) -> LatentPair:
        z_img = _as_batch(img) @ self.proj_img_w + self.proj_img_b
        z_txt = _as_batch(txt) @ self.proj_txt_w + self.proj_txt_b
        return LatentPair(z_img=z_img, z_txt=z_txt)

    def cross_modal_attention(
        self, pair: LatentPair, training: bool = False, rng=None
    ) -> tuple[LatentPair, np.ndarray]:
        d = self.head_cfg.latent_dim
        heads = self.head_cfg.num_heads
        dh = d // heads
        b = pair.z_img.shape[0]

        tokens = ad.stack([pair.z_img + self.type_img, pair.z_txt + self.type_txt], axis=1)  # (B,2,d)

        def split_heads(t: Tensor) -> Tensor:
            return t.reshape(b, 2, heads, dh).swapaxes(1, 2)  # (B,H,2,dh)

        q = split_heads(tokens @ self.wq + self.bq)
        k = split_heads(tokens @ self.wk + self.bk)
        v = split_heads(tokens @ self.wv + self.bv)
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))  # (B,H,2,2)
        attn = ad.softmax(scores, axis=-1)
        ctx = (attn @ v).swapaxes(1, 2).reshape(b, 2, d)
        out = ctx @ self.wo + self.bo
        out = ad.dropout(out, self.head_cfg.dropout_rate, rng if training else None)
        normed = ad.layer_norm(tokens + out, self.ln_gamma, self.ln_beta)
        z_img = ad.narrow(normed, 1, 0, 1).reshape(b, d)
        z_txt = ad.narrow(normed, 1, 1, 1).reshape(b, d)
        return LatentPair(z_img=z_img, z_txt=z_txt), attn.data.copy()

    def gate_fuse(self, pair: LatentPair) -> tuple[Tensor, GateWeights, Tensor]:
        gate_logits = ad.concat([pair.z_img, pair.z_txt], axis=-1) @ self.gate_w + self.gate_b
        gate = ad.softmax(gate_logits, axis=-1)  # (B, 2) as [g_img, g_txt]
        g_img = ad.narrow(gate, -1, 0, 1)
        g_txt = ad.narrow(gate, -1, 1, 1)
        fused = g_img * pair.z_img + g_txt * pair.z_txt
        weights = GateWeights(g_img=gate.data[:, 0].copy(), g_txt=gate.data[:, 1].copy())
        return fused, weights, gate

    def forward(self, img, txt, training: bool = False, rng=None) -> FusionOutput:
        if img is None or txt is None:
            raise FusionError(f"{self.config.id} requires both modalities")
        pair = self.project_to_latent(img, txt)
        attended, attn_maps = self.cross_modal_attention(pair, training, rng)
        fused, gate, _ = self.gate_fuse(attended)
        logits = self.classifier.forward(fused, training, rng)
        return FusionOutput(logits=logits, gate=gate, attention=attn_maps)


Model = UnimodalModel | EarlyFusionModel | HybridModel


def build_model(config: ModelConfigId, head_cfg: HybridHeadConfig, seed: int) -> Model:
    """Deterministic model factory for the head configurations (not M5/M6)."""
    if config.id not in HEAD_CONFIG_IDS:
        raise FusionError(f"{config.id} is an ensemble configuration; build it via the ensemble module")
    rng = np.random.default_rng(seed)
    if config.id in ("M1", "M2", "M3"):
        return UnimodalModel(config, head_cfg, rng)
    if config.id == "M4":
        return EarlyFusionModel(config, head_cfg, rng)
    return HybridModel(config, head_cfg, rng)


def forward_config(config: ModelConfigId, img, txt, model: Model, training: bool = False, rng=None) -> FusionOutput:
    """Run one configuration's forward pass, enforcing its modality contract."""
    if model.config.id != config.id:
        raise FusionError(f"model was built for {model.config.id}, not {config.id}")
    return model.forward(img, txt, training=training, rng=rng)


# ---- checkpoint I/O -------------------------------------------------------


def save_checkpoint(model: Model, path: str | Path, seed: int = 0) -> None:
    """Named tensors + head config + config id + seed. Header is JSON; tensor
    payload is little-endian float32."""
    params = model.parameters()
    names = sorted(params)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config_id": model.config.id,
        "image_variant": model.config.image_variant,
        "seed": seed,
        "head_config": {
            "latent_dim": model.head_cfg.latent_dim,
            "num_heads": model.head_cfg.num_heads,
            "dropout_rate": model.head_cfg.dropout_rate,
            "num_classes": model.head_cfg.num_classes,
            "img_dim": model.head_cfg.img_dim,
            "txt_dim": model.head_cfg.txt_dim,
        },
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    head_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("<I", len(head_bytes)))
        fh.write(head_bytes)
        for n in names:
            fh.write(np.ascontiguousarray(params[n].data, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[Model, int]:
    raw = Path(path).read_bytes()
    (hlen,) = struct.unpack("<I", raw[:4])
    header = json.loads(raw[4 : 4 + hlen])
    if header["format_version"] != CHECKPOINT_VERSION:
        raise FusionError(f"unsupported checkpoint version {header['format_version']}")
    head_cfg = HybridHeadConfig(**header["head_config"])
    config = ModelConfigId(header["config_id"], header["image_variant"])
    model = build_model(config, head_cfg, seed=header["seed"])
    offset = 4 + hlen
    params = model.parameters()
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw[offset : offset + 4 * n], dtype="<f4").reshape(shape)
        params[entry["name"]].data = arr.astype(np.float64)
        offset += 4 * n
    return model, header["seed"]

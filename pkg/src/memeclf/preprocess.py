"""Input pipeline: fixed-length tokenization, image normalization, and the
text-removed image variant (detected text boxes blurred in place).

Tokenizers are pluggable: anything with `encode(text) -> list[int]` plus
`pad_id` / `bos_id` / `eos_id` attributes works. `HashTokenizer` is the
built-in deterministic subword segmenter used when no pretrained tokenizer
is available. Input text is never normalized; hashtags, emojis, and URL
fragments pass through to the segmenter untouched.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import convolve1d

MAX_TEXT_LEN = 77
IMAGE_SIZE = 224
BOX_CONFIDENCE_MIN = 0.5

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
IMAGENET_STD = np.array([0.229, 0.224, 0.225])


class PreprocessError(ValueError):
    pass


@dataclass(frozen=True)
class TokenizedText:
    token_ids: np.ndarray  # (max_len,) int64
    attention_mask: np.ndarray  # (max_len,) int64 in {0,1}


@dataclass(frozen=True)
class ImageTensor:
    values: np.ndarray  # (3, 224, 224) float64
    source_id: str = ""


@dataclass(frozen=True)
class TextBox:
    x: int
    y: int
    w: int
    h: int
    confidence: float

    def clamped(self, width: int, height: int) -> "TextBox":
        x = min(max(self.x, 0), width - 1)
        y = min(max(self.y, 0), height - 1)
        w = max(1, min(self.w, width - x))
        h = max(1, min(self.h, height - y))
        return TextBox(x, y, w, h, self.confidence)


class HashTokenizer:
    """Deterministic subword segmenter: whitespace words split into short
    character chunks, each hashed into a fixed vocabulary. No text
    normalization of any kind."""

    def __init__(self, vocab_size: int = 32000, chunk_len: int = 4):
        self.vocab_size = vocab_size
        self.chunk_len = chunk_len
        self.pad_id = 0
        self.bos_id = 1
        self.eos_id = 2

    def _piece_id(self, piece: str) -> int:
        digest = hashlib.blake2b(piece.encode("utf-8"), digest_size=8).digest()
        return 3 + int.from_bytes(digest, "little") % (self.vocab_size - 3)

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for word in text.split():
            for i in range(0, len(word), self.chunk_len):
                ids.append(self._piece_id(word[i : i + self.chunk_len]))
        return ids


def tokenize_text(text: str, tokenizer, max_len: int = MAX_TEXT_LEN) -> TokenizedText:
    """Encode and pad/truncate to exactly `max_len` ids.

    Truncation keeps the leading tokens. The raw string goes to the
    tokenizer as-is.
    """
    body = tokenizer.encode(text)
    ids = [tokenizer.bos_id] + body[: max_len - 2] + [tokenizer.eos_id]
    n = len(ids)
    ids = ids + [tokenizer.pad_id] * (max_len - n)
    mask = [1] * n + [0] * (max_len - n)
    return TokenizedText(
        token_ids=np.array(ids, dtype=np.int64),
        attention_mask=np.array(mask, dtype=np.int64),
    )


def _to_rgb(img: Image.Image) -> Image.Image:
    if img.mode in ("RGBA", "LA", "PA") or (img.mode == "P" and "transparency" in img.info):
        # composite on white so transparent regions don't become black
        rgba = img.convert("RGBA")
        bg = Image.new("RGBA", rgba.size, (255, 255, 255, 255))
        return Image.alpha_composite(bg, rgba).convert("RGB")
    return img.convert("RGB")


def preprocess_image(image: Image.Image | str | Path, source_id: str = "", size: int = IMAGE_SIZE) -> ImageTensor:
    """RGB conversion, shorter-edge resize, center crop, ImageNet normalization."""
    if not isinstance(image, Image.Image):
        try:
            image = Image.open(image)
            image.load()
        except Exception as exc:
            raise PreprocessError(f"cannot decode image for sample {source_id!r}: {exc}") from exc
    img = _to_rgb(image)
    w, h = img.size
    if min(w, h) != size:
        scale = size / min(w, h)
        img = img.resize((max(size, round(w * scale)), max(size, round(h * scale))), Image.BICUBIC)
        w, h = img.size
    left = (w - size) // 2
    top = (h - size) // 2
    img = img.crop((left, top, left + size, top + size))
    arr = np.asarray(img, dtype=np.float64) / 255.0  # (H, W, 3)
    arr = (arr - IMAGENET_MEAN) / IMAGENET_STD
    return ImageTensor(values=arr.transpose(2, 0, 1), source_id=source_id)


def denormalize(tensor: ImageTensor) -> np.ndarray:
    """Invert the channel normalization back to [0, 1] intensities."""
    arr = tensor.values.transpose(1, 2, 0)
    return arr * IMAGENET_STD + IMAGENET_MEAN


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with an explicitly truncated kernel
    (size = next odd integer >= 6*sigma + 1), reflect boundary."""
    ksize = int(np.ceil(6 * sigma + 1))
    if ksize % 2 == 0:
        ksize += 1
    radius = ksize // 2
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()
    out = image.astype(np.float64)
    out = convolve1d(out, kernel, axis=0, mode="reflect")
    out = convolve1d(out, kernel, axis=1, mode="reflect")
    return out


def remove_text_regions(
    image: np.ndarray,
    boxes: list[TextBox],
    confidence_min: float = BOX_CONFIDENCE_MIN,
    dilate_px: int = 2,
) -> np.ndarray:
    """Blur detected text regions in place, leaving all other pixels
    bit-identical. Boxes below `confidence_min` are ignored; accepted boxes
    are dilated by `dilate_px` to suppress halo edges."""
    h, w = image.shape[:2]
    out = image.copy()
    for box in boxes:
        if box.confidence < confidence_min:
            continue
        box = box.clamped(w, h)
        sigma = max(3.0, min(box.w, box.h) / 4.0)
        x0 = max(0, box.x - dilate_px)
        y0 = max(0, box.y - dilate_px)
        x1 = min(w, box.x + box.w + dilate_px)
        y1 = min(h, box.y + box.h + dilate_px)
        blurred = gaussian_blur(image, sigma)
        if np.issubdtype(image.dtype, np.integer):
            blurred = np.clip(np.rint(blurred), 0, 255).astype(image.dtype)
        else:
            blurred = blurred.astype(image.dtype)
        out[y0:y1, x0:x1] = blurred[y0:y1, x0:x1]
    return out


def load_boxes(path: str | Path) -> dict[str, list[TextBox]]:
    """Read the line-delimited box file `id, x, y, w, h, confidence`."""
    boxes: dict[str, list[TextBox]] = {}
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        for row_no, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().lower() == "id":
                continue
            if len(row) != 6:
                raise PreprocessError(f"box file line {row_no}: expected 6 fields, got {len(row)}")
            sid = row[0].strip()
            x, y, w, h = (int(v) for v in row[1:5])
            conf = float(row[5])
            boxes.setdefault(sid, []).append(TextBox(x, y, w, h, conf))
    return boxes

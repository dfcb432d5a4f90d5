"""Input featurization: image crops, hashed text vectors, coordinate vectors.

Pair images stack three 84x84 crops (cell i, cell j, shared context) as
channels; cell images replicate one crop so both branches feed the same
embedding network input shape. Crops are resized with bilinear interpolation
preserving aspect ratio and zero-padded to square.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache

import numpy as np

from .core import BBox

IMAGE_SIDE = 84
TEXT_DIM = 64
CONTEXT_MARGIN = 0.10  # fraction of the union box grown per side


def crop(image, bbox):
    """Patch of the rounded bbox extent; always at least 1x1."""
    h, w = image.shape
    if bbox.x1 < 0 or bbox.y1 < 0 or bbox.x2 > w or bbox.y2 > h:
        raise ValueError(f"bbox ({bbox.x1},{bbox.y1},{bbox.x2},{bbox.y2}) outside {w}x{h} image")
    x1 = int(np.floor(bbox.x1 + 0.5))
    y1 = int(np.floor(bbox.y1 + 0.5))
    x2 = max(x1 + 1, int(np.floor(bbox.x2 + 0.5)))
    y2 = max(y1 + 1, int(np.floor(bbox.y2 + 0.5)))
    x1, y1 = min(x1, w - 1), min(y1, h - 1)
    x2, y2 = min(x2, w), min(y2, h)
    return image[y1:y2, x1:x2]


@lru_cache(maxsize=4096)
def _bilinear_plan(src, dst):
    # sampling positions for align-corners-false bilinear; identity when src == dst
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    lo = np.clip(np.floor(pos).astype(np.int64), 0, src - 1)
    hi = np.clip(lo + 1, 0, src - 1)
    frac = np.clip(pos - lo, 0.0, 1.0).astype(np.float32)
    return lo, hi, frac


def resize_pad(patch, side=IMAGE_SIDE):
    """Scale by side/max(h,w) with bilinear interpolation, center on zeros."""
    h, w = patch.shape
    if h == 0 or w == 0:
        raise ValueError("empty patch")
    s = side / max(h, w)
    nh = max(1, int(round(h * s)))
    nw = max(1, int(round(w * s)))
    src = np.asarray(patch, dtype=np.float32)
    ry0, ry1, fy = _bilinear_plan(h, nh)
    rx0, rx1, fx = _bilinear_plan(w, nw)
    rows = src[ry0] * (1.0 - fy)[:, None] + src[ry1] * fy[:, None]
    resized = rows[:, rx0] * (1.0 - fx)[None, :] + rows[:, rx1] * fx[None, :]
    out = np.zeros((side, side), dtype=np.float32)
    oy = (side - nh) // 2
    ox = (side - nw) // 2
    out[oy : oy + nh, ox : ox + nw] = resized
    return out


def context_bbox(bbox_i, bbox_j, table):
    """Union of the two boxes grown by a fixed margin, clipped to the table."""
    x1 = min(bbox_i.x1, bbox_j.x1)
    y1 = min(bbox_i.y1, bbox_j.y1)
    x2 = max(bbox_i.x2, bbox_j.x2)
    y2 = max(bbox_i.y2, bbox_j.y2)
    mx = CONTEXT_MARGIN * (x2 - x1)
    my = CONTEXT_MARGIN * (y2 - y1)
    return BBox(
        max(0.0, x1 - mx),
        max(0.0, y1 - my),
        min(float(table.width), x2 + mx),
        min(float(table.height), y2 + my),
    )


def pair_image(table, cell_i, cell_j):
    """[3,84,84] tensor: crops of cell i, cell j, and their context."""
    ci = resize_pad(crop(table.image, cell_i.bbox))
    cj = resize_pad(crop(table.image, cell_j.bbox))
    ctx = resize_pad(crop(table.image, context_bbox(cell_i.bbox, cell_j.bbox, table)))
    return np.stack([ci, cj, ctx])


def cell_image(table, cell):
    """[3,84,84] tensor: the cell crop replicated across channels."""
    c = resize_pad(crop(table.image, cell.bbox))
    return np.stack([c, c, c])


def _trigram_hash(tri):
    h = int.from_bytes(hashlib.blake2b(tri.encode("utf-8"), digest_size=8).digest(), "little")
    return h


def embed_text(text, d_text=TEXT_DIM):
    """Signed-hash bag of character trigrams, L2-normalized.

    Lowercased text is padded with boundary markers before trigram
    extraction; the empty string maps to the zero vector.
    """
    vec = np.zeros(d_text, dtype=np.float32)
    if text == "":
        return vec
    padded = "^" + text.lower() + "$"
    for i in range(len(padded) - 2):
        h = _trigram_hash(padded[i : i + 3])
        sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
        vec[h % d_text] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


def coord_features(cell, table):
    """(x1/W, x2/W, y1/H, y2/H) in [0,1]."""
    b = cell.bbox
    return np.array(
        [b.x1 / table.width, b.x2 / table.width, b.y1 / table.height, b.y2 / table.height],
        dtype=np.float32,
    )

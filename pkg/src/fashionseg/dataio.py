"""Dataset manifests, image loading, batching, and synthetic data generation."""

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import netpbm
from .errors import ManifestError, ShapeError, ValueRangeError
from .tensor import Tensor

SPLITS = ("train", "test")


@dataclass
class SampleRecord:
    image_path: str
    mask_path: Optional[str]
    label: Optional[int]
    split: str


def load_manifest(path, class_count=None):
    """Parse a manifest file into ordered SampleRecords.

    Format: one `image,mask,label,split` record per line; "-" marks an
    absent mask or label; "#" starts a comment line.
    """
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ManifestError("line %d: expected 4 comma-separated fields, got %d"
                                    % (lineno, len(parts)))
            image_path, mask_path, label_s, split = (p.strip() for p in parts)
            if not image_path:
                raise ManifestError("line %d: empty image path" % lineno)
            if image_path in seen:
                raise ManifestError("line %d: duplicate image path %r" % (lineno, image_path))
            seen.add(image_path)
            if split not in SPLITS:
                raise ManifestError("line %d: bad split %r (want train|test)" % (lineno, split))
            label = None
            if label_s != "-":
                try:
                    label = int(label_s)
                except ValueError:
                    raise ManifestError("line %d: bad label %r" % (lineno, label_s)) from None
                if label < 0 or (class_count is not None and label >= class_count):
                    raise ManifestError("line %d: label %d out of range" % (lineno, label))
            records.append(SampleRecord(image_path=image_path,
                                        mask_path=None if mask_path == "-" else mask_path,
                                        label=label, split=split))
    return records


def load_image(root, rel_path):
    """Decode a P6 image to a [0,1] float64 array, 3 x H x W."""
    with open(os.path.join(root, rel_path), "rb") as fh:
        return netpbm.decode_ppm(fh.read()).to_tensor_data()


def load_mask(root, rel_path):
    """Decode a P5 mask to a binary {0,1} float64 array, 1 x H x W.

    Samples >= 128 count as foreground, tolerating anti-aliased masks.
    """
    with open(os.path.join(root, rel_path), "rb") as fh:
        buf = netpbm.decode_pgm(fh.read())
    return (buf.samples[:, :, 0] >= 128).astype(np.float64)[None]


def apply_mask(image, mask):
    """Zero background pixels of an N x 3 x H x W image using an N x 1 x H x W mask."""
    img = image.data if isinstance(image, Tensor) else np.asarray(image)
    msk = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if img.shape[0] != msk.shape[0] or img.shape[2:] != msk.shape[2:]:
        raise ShapeError("apply_mask spatial mismatch: image %s vs mask %s"
                         % (img.shape, msk.shape))
    return Tensor(img * (msk != 0))


def make_batches(records, batch_size, seed, epoch):
    """Deterministic per-epoch shuffle, then contiguous chunks.

    The order is a pure function of (seed, epoch); the trailing short
    batch is retained.
    """
    if batch_size < 1:
        raise ValueRangeError("batch_size must be >= 1")
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(records))
    shuffled = [records[i] for i in order]
    return [shuffled[i:i + batch_size] for i in range(0, len(shuffled), batch_size)]


# ---------------------------------------------------------------------------
# Synthetic datasets for desk-scale training and acceptance runs


def _textured_background(rng, h, w):
    base = rng.uniform(0.05, 0.3, size=3)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    wave = 0.06 * np.sin(2 * np.pi * (xx / w * rng.uniform(1, 3) +
                                      yy / h * rng.uniform(1, 3)))
    noise = rng.normal(0.0, 0.02, size=(h, w))
    img = base[:, None, None] + wave[None] + noise[None]
    return np.clip(img, 0.0, 1.0)


def _draw_shapes(rng, h, w):
    mask = np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(rng.integers(1, 4)):
        cy = rng.uniform(0.3, 0.7) * h
        cx = rng.uniform(0.3, 0.7) * w
        ry = rng.uniform(0.18, 0.35) * h
        rx = rng.uniform(0.18, 0.35) * w
        if rng.integers(0, 2) == 0:
            mask |= ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            mask |= (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    return mask


def _seg_sample(rng, h, w):
    """One image/mask pair; foreground fraction kept inside [0.05, 0.6]."""
    img = _textured_background(rng, h, w)
    for _ in range(50):
        mask = _draw_shapes(rng, h, w)
        frac = mask.mean()
        if 0.05 <= frac <= 0.6:
            break
    else:
        mask = np.zeros((h, w), dtype=bool)
        mask[h // 4:3 * h // 4, w // 4:3 * w // 4] = True
    fg_color = rng.uniform(0.75, 0.95, size=3)
    fg = fg_color[:, None, None] + rng.normal(0.0, 0.02, size=(3, h, w))
    img = np.where(mask[None], np.clip(fg, 0.0, 1.0), img)
    return img, mask


def _cls_sample(rng, h, w, label, class_count):
    """Class identity = dominant hue band plus stripe frequency."""
    hue = label / class_count
    base = np.array([0.3 + 0.6 * hue,
                     0.3 + 0.6 * ((hue + 1.0 / 3) % 1.0),
                     0.3 + 0.6 * ((hue + 2.0 / 3) % 1.0)])
    xx = np.arange(w, dtype=np.float64)
    freq = 2.0 + 2.0 * label
    phase = rng.uniform(0, 2 * np.pi)
    stripes = 0.2 * np.sin(2 * np.pi * freq * xx / w + phase)
    img = base[:, None, None] + stripes[None, None, :] + rng.normal(0.0, 0.04, size=(3, h, w))
    return np.clip(img, 0.0, 1.0)


def gen_synthetic(kind, count, image_size, class_count, seed, out_dir):
    """Materialize a deterministic synthetic dataset plus manifest.

    kind "seg": textured backgrounds with shape foregrounds and exact masks.
    kind "cls": class set by hue band and stripe frequency, round-robin labels.
    Returns the manifest path.
    """
    if kind not in ("seg", "cls"):
        raise ValueRangeError("synthetic kind must be 'seg' or 'cls', got %r" % kind)
    h, w = image_size
    rng = np.random.default_rng(seed)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    if kind == "seg":
        os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    lines = []
    for i in range(count):
        img_rel = os.path.join("images", "%s_%04d.ppm" % (kind, i))
        if kind == "seg":
            img, mask = _seg_sample(rng, h, w)
            mask_rel = os.path.join("masks", "seg_%04d.pgm" % i)
            with open(os.path.join(out_dir, mask_rel), "wb") as fh:
                fh.write(netpbm.mask_to_pgm(mask))
            lines.append("%s,%s,-,train" % (img_rel, mask_rel))
        else:
            label = i % class_count
            img = _cls_sample(rng, h, w, label, class_count)
            lines.append("%s,-,%d,train" % (img_rel, label))
        with open(os.path.join(out_dir, img_rel), "wb") as fh:
            fh.write(netpbm.encode_ppm(netpbm.image_from_unit_array(img)))
    manifest_path = os.path.join(out_dir, "manifest.txt")
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# synthetic %s dataset, seed %d\n" % (kind, seed))
        fh.write("\n".join(lines) + "\n")
    return manifest_path

"""Data pipeline: binary PPM/PGM image and mask I/O, a deterministic
synthetic defect dataset, geometric/histogram augmentation, cut-paste
injection of under-represented defect classes, and batch loading."""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError, FormatError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    mask: np.ndarray   # (H, W) int64 class indices
    id: str = ""

    def copy(self):
        return Sample(self.image.copy(), self.mask.copy(), self.id)


# ---------------------------------------------------------------------------
# PPM (P6) / PGM (P5) with maxval 255


def _parse_pnm(raw, magic, path):
    if not raw.startswith(magic):
        raise FormatError(f"{path}: expected {magic.decode()} header")
    pos = len(magic)
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header")
        fields.append(raw[start:pos])
    pos += 1  # single whitespace byte before the payload
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric header field") from exc
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    return width, height, raw[pos:]


def read_image(path):
    """P6 PPM -> (3, H, W) float32 in [0, 1]."""
    with open(path, "rb") as f:
        raw = f.read()
    w, h, payload = _parse_pnm(raw, b"P6", path)
    if len(payload) != 3 * w * h:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {3 * w * h}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return (arr.transpose(2, 0, 1).astype(np.float32)) / 255.0


def write_image(path, image):
    """(3, H, W) float in [0, 1] -> P6 PPM (values rounded half up)."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ConfigurationError(f"image must be (3, H, W), got {image.shape}")
    q = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    h, w = image.shape[1], image.shape[2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(q.transpose(1, 2, 0).tobytes())


def read_mask(path):
    """P5 PGM -> (H, W) int64 class indices."""
    with open(path, "rb") as f:
        raw = f.read()
    w, h, payload = _parse_pnm(raw, b"P5", path)
    if len(payload) != w * h:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {w * h}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).astype(np.int64)


def write_mask(path, mask):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ConfigurationError(f"mask must be (H, W), got {mask.shape}")
    if mask.min() < 0 or mask.max() > 255:
        raise DataError("mask values must fit in one byte")
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(mask.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# synthetic structural-defect dataset


@dataclass
class SynthConfig:
    n_samples: int = 100
    size: int = 64
    num_classes: int = 4
    seed: int = 0
    max_density: float = 0.30
    splits: tuple = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.size % 16 != 0:
            raise ConfigurationError("size must be a multiple of 16")
        if not 2 <= self.num_classes <= 9:
            raise ConfigurationError("num_classes must be in [2, 9]")
        if self.n_samples < 1:
            raise ConfigurationError("n_samples must be >= 1")
        self.splits = tuple(float(s) for s in self.splits)
        if len(self.splits) != 3 or abs(sum(self.splits) - 1.0) > 1e-9:
            raise ConfigurationError("splits must be three fractions summing to 1")
        if not 0.0 < self.max_density <= 0.5:
            raise ConfigurationError("max_density must be in (0, 0.5]")


def _upsample_bilinear(arr, out_h, out_w):
    """(h, w) -> (out_h, out_w) with half-pixel alignment."""
    return _interp_matrix(arr.shape[0], out_h) @ arr @ _interp_matrix(arr.shape[1], out_w).T


def _interp_matrix(n_in, n_out):
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = (i + 0.5) * n_in / n_out - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    return m


def _nearest_index(n_in, n_out):
    idx = np.floor((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.int64)
    return np.clip(idx, 0, n_in - 1)


def _value_noise(rng, size, lo, hi, cell=8):
    coarse = rng.uniform(lo, hi, (size // cell + 1, size // cell + 1))
    return _upsample_bilinear(coarse, size, size)


def _dilate(mask):
    p = np.pad(mask, 1)
    out = np.zeros_like(mask)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            out |= p[1 + dy : 1 + dy + mask.shape[0], 1 + dx : 1 + dx + mask.shape[1]]
    return out


def _erode(mask):
    p = np.pad(mask, 1)
    out = np.ones_like(mask)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            out &= p[1 + dy : 1 + dy + mask.shape[0], 1 + dx : 1 + dx + mask.shape[1]]
    return out


def _crack_support(rng, size):
    """Thin dark polyline: a jittered random walk, dilated once."""
    hit = np.zeros((size, size), dtype=bool)
    y = rng.uniform(size * 0.15, size * 0.85)
    x = rng.uniform(size * 0.15, size * 0.85)
    heading = rng.uniform(0.0, 2.0 * np.pi)
    steps = int(rng.integers(size // 3, size))
    for _ in range(steps):
        heading += rng.normal(0.0, 0.25)
        y += np.sin(heading)
        x += np.cos(heading)
        yi, xi = int(round(y)), int(round(x))
        if not (0 <= yi < size and 0 <= xi < size):
            break
        hit[yi, xi] = True
    # dilate twice: a few pixels of width keeps overlap scores meaningful
    return _dilate(_dilate(hit))


def _ellipse_support(rng, size):
    cy = rng.uniform(size * 0.2, size * 0.8)
    cx = rng.uniform(size * 0.2, size * 0.8)
    r_hi = max(size / 10.0, 3.0)  # keep the range valid on small canvases
    ry = rng.uniform(2.5, r_hi)
    rx = rng.uniform(2.5, r_hi)
    theta = rng.uniform(0.0, np.pi)
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _blob_support(rng, size):
    """Rough patch: thresholded smooth noise restricted to a disk."""
    field = _value_noise(rng, size, 0.0, 1.0, cell=4)
    cy = rng.uniform(size * 0.2, size * 0.8)
    cx = rng.uniform(size * 0.2, size * 0.8)
    r = rng.uniform(size / 12.0, size / 6.0)
    yy, xx = np.mgrid[0:size, 0:size]
    disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    # a low threshold keeps the patch mostly solid, with a ragged rim
    return disk & (field > 0.30)


# per-class paint: (support factory kind, RGB tint, background mix factor)
_CLASS_STYLES = {
    1: ("crack", (0.10, 0.10, 0.12), 0.25),
    2: ("ellipse", (0.15, 0.25, 0.70), 0.10),
    3: ("blob", (0.78, 0.62, 0.45), 0.15),
    4: ("blob", (0.25, 0.55, 0.30), 0.15),
    5: ("ellipse", (0.60, 0.20, 0.20), 0.10),
    6: ("crack", (0.55, 0.50, 0.15), 0.25),
    7: ("blob", (0.20, 0.30, 0.60), 0.15),
    8: ("ellipse", (0.50, 0.45, 0.55), 0.10),
}

_SUPPORTS = {"crack": _crack_support, "ellipse": _ellipse_support, "blob": _blob_support}


def _paint(image, mask, support, label, rng):
    kind, tint, mix = _CLASS_STYLES[label]
    rough = rng.normal(0.0, 0.03, image.shape[1:])
    for ch in range(3):
        vals = mix * image[ch] + (1.0 - mix) * (tint[ch] + rough)
        image[ch] = np.where(support, np.clip(vals, 0.0, 1.0), image[ch])
    mask[support] = label


def generate_sample(cfg, idx):
    """One deterministic synthetic sample; rng stream is keyed by (seed, idx)."""
    rng = np.random.default_rng([cfg.seed, idx])
    size = cfg.size
    base = _value_noise(rng, size, 0.40, 0.68) + rng.normal(0.0, 0.02, (size, size))
    tint = rng.uniform(-0.03, 0.03, 3)
    image = np.clip(np.stack([base + t for t in tint]), 0.0, 1.0)
    mask = np.zeros((size, size), dtype=np.int64)

    budget = int(cfg.max_density * size * size)
    labels = list(range(1, cfg.num_classes))
    rng.shuffle(labels)
    for label in labels:
        for _ in range(int(rng.integers(1, 4))):
            kind = _CLASS_STYLES[label][0]
            support = _SUPPORTS[kind](rng, size) & (mask == 0)
            if support.sum() == 0:
                continue
            if (mask > 0).sum() + support.sum() > budget:
                continue
            _paint(image, mask, support, label, rng)
    return Sample(image.astype(np.float32), mask, f"sample_{idx:05d}")


def _split_of(idx, n, splits):
    n_train = int(round(n * splits[0]))
    n_val = int(round(n * splits[1]))
    if idx < n_train:
        return "train"
    if idx < n_train + n_val:
        return "val"
    return "test"


def synth_generate(cfg, out_dir):
    """Write images/, masks/ and manifest.json; returns the manifest dict."""
    img_dir = os.path.join(out_dir, "images")
    msk_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(msk_dir, exist_ok=True)
    entries = []
    for idx in range(cfg.n_samples):
        sample = generate_sample(cfg, idx)
        write_image(os.path.join(img_dir, sample.id + ".ppm"), sample.image)
        write_mask(os.path.join(msk_dir, sample.id + ".pgm"), sample.mask)
        counts = np.bincount(sample.mask.ravel(), minlength=cfg.num_classes)
        entries.append({
            "id": sample.id,
            "split": _split_of(idx, cfg.n_samples, cfg.splits),
            "class_counts": [int(c) for c in counts],
        })
    manifest = {
        "size": cfg.size,
        "num_classes": cfg.num_classes,
        "seed": cfg.seed,
        "samples": entries,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


def load_dataset(data_dir, split=None):
    """Samples listed in manifest.json, optionally filtered by split name."""
    manifest_path = os.path.join(data_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise DataError(f"no manifest.json under {data_dir}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    samples = []
    for entry in manifest["samples"]:
        if split is not None and entry["split"] != split:
            continue
        image = read_image(os.path.join(data_dir, "images", entry["id"] + ".ppm"))
        mask = read_mask(os.path.join(data_dir, "masks", entry["id"] + ".pgm"))
        if mask.max() >= manifest["num_classes"]:
            raise DataError(f"{entry['id']}: mask label outside manifest range")
        samples.append(Sample(image, mask, entry["id"]))
    return samples


# ---------------------------------------------------------------------------
# augmentation


def rotate_sample(sample, degrees):
    """Rotate about the image centre; bilinear for the image (padded with the
    per-channel mean), nearest for the mask (padded with background)."""
    h, w = sample.mask.shape
    theta = np.deg2rad(degrees)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    # inverse map: rotate output coordinates by -theta
    sy = cy + dy * np.cos(theta) - dx * np.sin(theta)
    sx = cx + dy * np.sin(theta) + dx * np.cos(theta)
    inside = (sy >= 0) & (sy <= h - 1) & (sx >= 0) & (sx <= w - 1)

    syc = np.clip(sy, 0, h - 1)
    sxc = np.clip(sx, 0, w - 1)
    y0 = np.floor(syc).astype(np.int64)
    x0 = np.floor(sxc).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = syc - y0
    fx = sxc - x0

    image = np.empty_like(sample.image)
    for ch in range(3):
        src = sample.image[ch]
        val = (src[y0, x0] * (1 - fy) * (1 - fx) + src[y0, x1] * (1 - fy) * fx
               + src[y1, x0] * fy * (1 - fx) + src[y1, x1] * fy * fx)
        image[ch] = np.where(inside, val, src.mean()).astype(np.float32)

    yn = np.clip(np.rint(syc).astype(np.int64), 0, h - 1)
    xn = np.clip(np.rint(sxc).astype(np.int64), 0, w - 1)
    mask = np.where(inside, sample.mask[yn, xn], 0)
    return Sample(image, mask, sample.id)


def _histeq_channel(ch):
    v = np.floor(np.clip(ch, 0.0, 1.0) * 255.0 + 0.5).astype(np.int64)
    hist = np.bincount(v.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    nonzero = cdf[cdf > 0]
    cdf_min = nonzero[0]
    total = v.size
    if total == cdf_min:  # constant channel: equalization is the identity
        return ch.copy()
    lut = (cdf - cdf_min) / float(total - cdf_min)
    return lut[v].astype(np.float32)


def augment(sample, ops):
    """Apply named ops in order: hflip, rot30, rot50, histeq."""
    out = sample
    for op in ops:
        if op == "hflip":
            out = Sample(
                np.ascontiguousarray(out.image[:, :, ::-1]),
                np.ascontiguousarray(out.mask[:, ::-1]),
                out.id,
            )
        elif op == "rot30":
            out = rotate_sample(out, 30.0)
        elif op == "rot50":
            out = rotate_sample(out, 50.0)
        elif op == "histeq":
            out = Sample(
                np.stack([_histeq_channel(out.image[c]) for c in range(3)]),
                out.mask.copy(),
                out.id,
            )
        else:
            raise ConfigurationError(f"unknown augmentation '{op}'")
    return out


# ---------------------------------------------------------------------------
# cut-paste injection of under-represented defect classes


def make_patch_bank(samples, num_classes, rng, patch_size=16, per_class=8, tries=400):
    """Harvest single-class square crops: {label: [(image, mask), ...]}."""
    bank = {c: [] for c in range(1, num_classes)}
    if not samples:
        return bank
    for _ in range(tries):
        if all(len(v) >= per_class for v in bank.values()):
            break
        s = samples[int(rng.integers(len(samples)))]
        h, w = s.mask.shape
        if h < patch_size or w < patch_size:
            continue
        y = int(rng.integers(0, h - patch_size + 1))
        x = int(rng.integers(0, w - patch_size + 1))
        crop = s.mask[y : y + patch_size, x : x + patch_size]
        labels = np.unique(crop[crop > 0])
        if len(labels) != 1:
            continue
        label = int(labels[0])
        if label >= num_classes or len(bank[label]) >= per_class:
            continue
        if (crop == label).sum() < patch_size:  # too little defect to be useful
            continue
        img = s.image[:, y : y + patch_size, x : x + patch_size].copy()
        bank[label].append((img, crop.copy()))
    return bank


def _resize_patch(img, msk, new_size):
    mh = _interp_matrix(img.shape[1], new_size)
    mw = _interp_matrix(img.shape[2], new_size)
    rimg = np.einsum("oh,chw,pw->cop", mh, img, mw).astype(np.float32)
    iy = _nearest_index(msk.shape[0], new_size)
    ix = _nearest_index(msk.shape[1], new_size)
    return rimg, msk[np.ix_(iy, ix)]


def _feather_alpha(support, ramp=3):
    """1 deep inside the support, stepping down to 1/ramp at its border."""
    alpha = support.astype(np.float64)
    m = support
    for _ in range(ramp - 1):
        m = _erode(m)
        alpha += m
    return alpha / ramp


def dli_inject(sample, bank, rng, max_patches=3, placement_tries=20):
    """Paste defect patches of the currently least-represented classes onto
    background-only areas. The image is alpha-feathered at patch borders; the
    mask is set hard on the full patch support. Returns (sample, n_injected).
    """
    out = sample.copy()
    h, w = out.mask.shape
    num_classes = max(bank) + 1 if bank else 1
    counts = np.bincount(out.mask.ravel(), minlength=num_classes)
    injected = 0
    for _ in range(max_patches):
        order = sorted((c for c in bank if bank[c]), key=lambda c: (counts[c], c))
        placed = False
        for label in order:
            entry = bank[label][int(rng.integers(len(bank[label])))]
            pimg, pmsk = entry[0].copy(), entry[1].copy()
            if rng.random() < 0.5:
                pimg = np.ascontiguousarray(pimg[:, :, ::-1])
                pmsk = np.ascontiguousarray(pmsk[:, ::-1])
            k = int(rng.integers(4))
            pimg = np.rot90(pimg, k, axes=(1, 2)).copy()
            pmsk = np.rot90(pmsk, k).copy()
            new_size = int(round(pmsk.shape[0] * rng.uniform(0.75, 1.5)))
            new_size = max(4, min(new_size, min(h, w) - 2))
            pimg, pmsk = _resize_patch(pimg, pmsk, new_size)
            support = pmsk > 0
            if support.sum() == 0:
                continue
            for _ in range(placement_tries):
                y = int(rng.integers(0, h - new_size + 1))
                x = int(rng.integers(0, w - new_size + 1))
                region = out.mask[y : y + new_size, x : x + new_size]
                if np.any(region[support] != 0):
                    continue
                alpha = _feather_alpha(support)
                img_region = out.image[:, y : y + new_size, x : x + new_size]
                blended = alpha[None] * pimg + (1.0 - alpha)[None] * img_region
                out.image[:, y : y + new_size, x : x + new_size] = blended.astype(np.float32)
                region[support] = pmsk[support]
                counts = np.bincount(out.mask.ravel(), minlength=num_classes)
                injected += 1
                placed = True
                break
            if placed:
                break
        if not placed:
            break
    return out, injected


# ---------------------------------------------------------------------------
# batching


def resize_pair(image, mask, size):
    """Bilinear image / nearest mask resize to (size, size)."""
    if image.shape[1] == size and image.shape[2] == size:
        return image, mask
    mh = _interp_matrix(image.shape[1], size)
    mw = _interp_matrix(image.shape[2], size)
    rimg = np.einsum("oh,chw,pw->cop", mh, image, mw).astype(np.float32)
    iy = _nearest_index(mask.shape[0], size)
    ix = _nearest_index(mask.shape[1], size)
    return rimg, mask[np.ix_(iy, ix)]


def load_batches(samples, batch_size, rng=None, size=None, normalize=True):
    """Yield (images (B,3,H,W) float32, masks (B,H,W) int64); shuffles when
    an rng is given, otherwise preserves sample order."""
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    order = rng.permutation(len(samples)) if rng is not None else np.arange(len(samples))
    mean = np.asarray(IMAGENET_MEAN, dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(IMAGENET_STD, dtype=np.float32).reshape(3, 1, 1)
    for start in range(0, len(samples), batch_size):
        imgs, msks = [], []
        for i in order[start : start + batch_size]:
            img, msk = samples[int(i)].image, samples[int(i)].mask
            if size is not None:
                img, msk = resize_pair(img, msk, size)
            if normalize:
                img = (img - mean) / std
            imgs.append(img)
            msks.append(msk)
        yield np.stack(imgs).astype(np.float32), np.stack(msks).astype(np.int64)

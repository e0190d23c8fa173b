"""Dataset construction: digit ingestion, biased rotated variants, activity
windows, and leave-one-domain-out splits.

The rotated-digit benchmark has six domains M0..M75 (rotation in 15-degree
steps). Class sample sizes per domain follow a per-variant bias table, so
that domain and class become statistically dependent for classes 0-4 while
classes 5-9 stay balanced.

All pipelines are pure functions of (inputs, seed): regenerating a dataset
is byte-identical.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import (
    BadMagicError,
    EmptyInputError,
    InsufficientDataError,
    PreconditionError,
    TruncatedFileError,
    UnknownDomainError,
)

log = logging.getLogger(__name__)

ANGLES = (0, 15, 30, 45, 60, 75)
DOMAIN_NAMES = tuple(f"M{a}" for a in ANGLES)
N_CLASSES = 10

WISDM_ACTIVITIES = ("Downstairs", "Jogging", "Sitting", "Standing", "Upstairs", "Walking")
WISDM_WINDOW = 60

_IDX_IMAGE_MAGIC = 0x00000803
_IDX_LABEL_MAGIC = 0x00000801

DATASET_FILE_MAGIC = b"AFLACDS1"
MANIFEST_NAME = "manifest.json"


class LabeledExample(NamedTuple):
    x: np.ndarray
    y: int
    d: int


@dataclass
class DomainDataset:
    """All examples of one domain plus its per-class tallies."""

    domain_id: int
    name: str
    examples: list[LabeledExample]
    counts: np.ndarray  # per-class example counts

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        tally = np.zeros_like(self.counts)
        for ex in self.examples:
            if ex.d != self.domain_id:
                raise PreconditionError(
                    f"example with d={ex.d} in domain dataset {self.domain_id}")
            tally[ex.y] += 1
        if not np.array_equal(tally, self.counts):
            raise PreconditionError("per-class counts do not match the examples")

    @classmethod
    def from_examples(cls, domain_id: int, name: str, examples: list[LabeledExample],
                      n_classes: int) -> "DomainDataset":
        counts = np.zeros(n_classes, dtype=np.int64)
        for ex in examples:
            counts[ex.y] += 1
        return cls(domain_id=domain_id, name=name, examples=examples, counts=counts)


# ------------------------------------------------------------- IDX reading


def _open_maybe_gzip(path):
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"{what}: expected {n} bytes, got {len(buf)}")
    return buf


def ingest_mnist(images_path, labels_path) -> list[tuple[np.ndarray, int]]:
    """Read big-endian IDX image/label files; pixels are scaled to [0, 1].

    Gzipped files are detected and decompressed transparently.
    """
    with _open_maybe_gzip(images_path) as f:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "image header"))
        if magic != _IDX_IMAGE_MAGIC:
            raise BadMagicError(
                f"image file magic 0x{magic:08x}, expected 0x{_IDX_IMAGE_MAGIC:08x}")
        raw = _read_exact(f, n * rows * cols, "image data")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows, cols)
    with _open_maybe_gzip(labels_path) as f:
        magic, n2 = struct.unpack(">II", _read_exact(f, 8, "label header"))
        if magic != _IDX_LABEL_MAGIC:
            raise BadMagicError(
                f"label file magic 0x{magic:08x}, expected 0x{_IDX_LABEL_MAGIC:08x}")
        raw = _read_exact(f, n2, "label data")
    labels = np.frombuffer(raw, dtype=np.uint8)
    if n2 != n:
        raise TruncatedFileError(f"{n} images but {n2} labels")
    scaled = (images.astype(np.float32) / np.float32(255.0))
    return [(scaled[i], int(labels[i])) for i in range(n)]


def select_base_pool(mnist: list[tuple[np.ndarray, int]], per_class: int = 100,
                     seed: int = 0) -> list[tuple[np.ndarray, int]]:
    """Seeded shuffle-then-prefix subset with `per_class` images per digit."""
    by_class: dict[int, list[int]] = {}
    for i, (_, label) in enumerate(mnist):
        by_class.setdefault(label, []).append(i)
    rng = np.random.default_rng(np.random.SeedSequence([7001, seed]))
    pool: list[tuple[np.ndarray, int]] = []
    for label in sorted(by_class):
        idx = by_class[label]
        if len(idx) < per_class:
            raise InsufficientDataError(
                f"class {label} has {len(idx)} examples, need {per_class}")
        order = rng.permutation(len(idx))[:per_class]
        pool.extend(mnist[idx[j]] for j in order)
    return pool


# -------------------------------------------------------- rotate and crop


def _rotate28(img: np.ndarray, angle_degrees: float) -> np.ndarray:
    """Bilinear rotation about the image center; outside pixels read as 0."""
    h, w = img.shape
    ctr_r, ctr_c = (h - 1) / 2.0, (w - 1) / 2.0
    th = np.deg2rad(angle_degrees)
    cos_t, sin_t = np.cos(th), np.sin(th)
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    dr, dc = rr - ctr_r, cc - ctr_c
    src_r = ctr_r + cos_t * dr - sin_t * dc
    src_c = ctr_c + sin_t * dr + cos_t * dc
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    wr = src_r - r0
    wc = src_c - c0

    def sample(ri, ci):
        inside = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
        vals = np.zeros_like(src_r)
        vals[inside] = img[ri[inside], ci[inside]]
        return vals

    out = ((1 - wr) * (1 - wc) * sample(r0, c0)
           + (1 - wr) * wc * sample(r0, c0 + 1)
           + wr * (1 - wc) * sample(r0 + 1, c0)
           + wr * wc * sample(r0 + 1, c0 + 1))
    return out


def _resize_axis_weights(n_in: int, n_out: int) -> np.ndarray:
    """Normalized bilinear (tent) weights, pixel-center aligned.

    When shrinking, the tent is widened by the scale factor so every input
    pixel contributes somewhere: the standard antialiased bilinear resize.
    Each output row of the returned (n_out, n_in) matrix sums to 1, which
    keeps the image mean (density mass) stable under resizing.
    """
    scale = n_in / n_out
    support = max(scale, 1.0)
    centers = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    xs = np.arange(n_in, dtype=np.float64)
    w = np.maximum(0.0, 1.0 - np.abs(xs[None, :] - centers[:, None]) / support)
    return w / w.sum(axis=1, keepdims=True)


def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    wr = _resize_axis_weights(img.shape[0], out_h)
    wc = _resize_axis_weights(img.shape[1], out_w)
    return wr @ img @ wc.T


def rotate_and_crop(image28: np.ndarray, angle_degrees: int) -> np.ndarray:
    """Rotate a 28x28 image, crop the central 24x24, resize to 16x16.

    The pre-crop keeps digit corners inside the frame at 45-75 degrees.
    Output values are clamped to [0, 1].
    """
    if angle_degrees not in ANGLES:
        raise PreconditionError(f"angle must be one of {ANGLES}, got {angle_degrees}")
    if image28.shape != (28, 28):
        raise PreconditionError(f"expected a 28x28 image, got {image28.shape}")
    rot = _rotate28(np.asarray(image28, dtype=np.float64), angle_degrees)
    crop = rot[2:26, 2:26]
    out = _resize_bilinear(crop, 16, 16)
    return np.clip(out, 0.0, 1.0)


# ------------------------------------------------------------- bias tables

_VARIANT_RAMPS = {
    "BMNISTR-1": (100, 85, 70, 55, 40, 25),
    "BMNISTR-2": (100, 90, 80, 70, 60, 50),
    "BMNISTR-3": (100, 25, 100, 25, 100, 25),
}


@dataclass(frozen=True)
class BiasTable:
    """Per-(domain, class) sample sizes for one benchmark variant.

    Classes 0-4 follow the variant's ramp across domains; classes 5-9 get
    100 examples in every domain.
    """

    variant: str
    sizes: np.ndarray  # (6 domains, 10 classes)

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=np.int64)
        if sizes.shape != (len(ANGLES), N_CLASSES):
            raise PreconditionError(f"bias table must be 6x10, got {sizes.shape}")
        if (sizes < 0).any() or (sizes > 100).any():
            raise PreconditionError("bias-table sizes must lie in [0, 100]")
        if not (sizes[:, 5:] == 100).all():
            raise PreconditionError("classes 5-9 must have 100 examples per domain")
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def for_variant(cls, variant) -> "BiasTable":
        name = variant if isinstance(variant, str) else f"BMNISTR-{variant}"
        if name not in _VARIANT_RAMPS:
            raise PreconditionError(f"unknown variant {variant!r}")
        ramp = _VARIANT_RAMPS[name]
        sizes = np.full((len(ANGLES), N_CLASSES), 100, dtype=np.int64)
        for d, size in enumerate(ramp):
            sizes[d, :5] = size
        return cls(variant=name, sizes=sizes)


def generate_bmnistr(variant, pool: list[tuple[np.ndarray, int]],
                     seed: int = 0) -> list[DomainDataset]:
    """Build the six rotation domains of one biased variant.

    For each (domain, class) the required number of base digits is drawn
    without replacement from the class pool, then rotated by the domain's
    angle. Output order is fixed: domain id, class id, pool index.
    """
    table = BiasTable.for_variant(variant)
    by_class: dict[int, list[int]] = {}
    for i, (_, label) in enumerate(pool):
        by_class.setdefault(label, []).append(i)
    need = table.sizes.max(axis=0)
    for y in range(N_CLASSES):
        have = len(by_class.get(y, ()))
        if have < need[y]:
            raise InsufficientDataError(f"class {y}: pool has {have}, need {need[y]}")
    rng = np.random.default_rng(np.random.SeedSequence([4202, seed]))
    datasets = []
    for d, angle in enumerate(ANGLES):
        examples: list[LabeledExample] = []
        for y in range(N_CLASSES):
            members = by_class[y]
            k = int(table.sizes[d, y])
            chosen = rng.choice(len(members), size=k, replace=False)
            for j in np.sort(chosen):
                img28, _ = pool[members[j]]
                x = rotate_and_crop(img28, angle).astype(np.float32)
                examples.append(LabeledExample(x=x, y=y, d=d))
        datasets.append(DomainDataset(domain_id=d, name=DOMAIN_NAMES[d],
                                      examples=examples, counts=table.sizes[d]))
    return datasets


# ------------------------------------------------------------------ WISDM


def ingest_wisdm(csv_path) -> list[DomainDataset]:
    """Window raw accelerometer logs into per-user activity samples.

    Rows are ``user,activity,timestamp,x,y,z;`` records (the trailing
    semicolon terminates a record; several records may share a line).
    Each maximal run of consecutive valid rows with the same
    (user, activity) is cut into non-overlapping 60-frame windows; the
    remainder is dropped. Malformed rows are skipped and counted.
    """
    text = Path(csv_path).read_text()
    records: list[tuple[int, int, np.ndarray]] = []  # (user, activity, xyz)
    skipped = 0
    for chunk in text.replace("\n", ";").split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        fields = chunk.split(",")
        if len(fields) != 6:
            skipped += 1
            continue
        try:
            user = int(fields[0])
            activity = WISDM_ACTIVITIES.index(fields[1])
            xyz = np.array([float(fields[3]), float(fields[4]), float(fields[5])],
                           dtype=np.float32)
        except (ValueError, IndexError):
            skipped += 1
            continue
        records.append((user, activity, xyz))
    if skipped:
        log.warning("ingest_wisdm: skipped %d malformed rows", skipped)
    if not records:
        raise EmptyInputError(f"no valid rows in {csv_path}")
    users = sorted({r[0] for r in records})
    user_index = {u: i for i, u in enumerate(users)}
    per_user: dict[int, list[LabeledExample]] = {u: [] for u in users}
    start = 0
    for i in range(1, len(records) + 1):
        if i < len(records) and records[i][0] == records[start][0] \
                and records[i][1] == records[start][1]:
            continue
        user, activity, _ = records[start]
        frames = np.stack([r[2] for r in records[start:i]])
        for w in range(len(frames) // WISDM_WINDOW):
            window = frames[w * WISDM_WINDOW:(w + 1) * WISDM_WINDOW]
            per_user[user].append(
                LabeledExample(x=window, y=activity, d=user_index[user]))
        start = i
    return [
        DomainDataset.from_examples(user_index[u], f"user{u}", per_user[u],
                                    n_classes=len(WISDM_ACTIVITIES))
        for u in users
    ]


# ------------------------------------------------------------------ splits


def lodo_split(datasets: list[DomainDataset], target_domain, val_fraction: float = 0.2,
               seed: int = 0):
    """Leave-one-domain-out partition into (train, validation, target).

    The target domain's examples are held out whole. Every remaining
    domain is split per class by seeded shuffle: floor(k * val_fraction)
    examples go to validation, the rest to training. The three lists are
    an exact partition of the input examples.
    """
    if not 0.0 < val_fraction < 1.0:
        raise PreconditionError(f"val_fraction must be in (0, 1), got {val_fraction}")
    target_ds = None
    for ds in datasets:
        if ds.domain_id == target_domain or ds.name == target_domain:
            target_ds = ds
            break
    if target_ds is None:
        known = [ds.name for ds in datasets]
        raise UnknownDomainError(f"target {target_domain!r} not among {known}")
    rng = np.random.default_rng(np.random.SeedSequence([5150, seed]))
    train: list[LabeledExample] = []
    val: list[LabeledExample] = []
    for ds in sorted(datasets, key=lambda s: s.domain_id):
        if ds is target_ds:
            continue
        by_class: dict[int, list[int]] = {}
        for i, ex in enumerate(ds.examples):
            by_class.setdefault(ex.y, []).append(i)
        val_positions = set()
        for y in sorted(by_class):
            members = by_class[y]
            n_val = int(np.floor(len(members) * val_fraction))
            picks = rng.permutation(len(members))[:n_val]
            val_positions.update(members[p] for p in picks)
        for i, ex in enumerate(ds.examples):
            (val if i in val_positions else train).append(ex)
    return train, val, list(target_ds.examples)


def reindex_domains(examples: list[LabeledExample]):
    """Remap domain ids to a contiguous 0..m-1 range (sorted by old id).

    Returns (remapped examples, old-id list). Training after a
    leave-one-domain-out split uses this so the discriminator's output
    width equals the number of source domains.
    """
    old_ids = sorted({ex.d for ex in examples})
    index = {d: i for i, d in enumerate(old_ids)}
    return [ex._replace(d=index[ex.d]) for ex in examples], old_ids


# --------------------------------------------------------------- persistence


def _domain_file_bytes(ds: DomainDataset, variant: str) -> bytes:
    xs = np.stack([ex.x for ex in ds.examples]).astype("<f4")
    ys = np.array([ex.y for ex in ds.examples], dtype="<i4")
    header = {
        "format": "aflac-ds-1",
        "variant": variant,
        "domain_id": ds.domain_id,
        "domain_name": ds.name,
        "counts": ds.counts.tolist(),
        "n": len(ds.examples),
        "x_shape": list(xs.shape[1:]),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return b"".join([
        DATASET_FILE_MAGIC,
        struct.pack("<I", len(hbytes)),
        hbytes,
        ys.tobytes(),
        xs.tobytes(),
    ])


def save_dataset(datasets: list[DomainDataset], out_dir, variant: str) -> Path:
    """Write one binary file per domain plus a checksum manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for ds in sorted(datasets, key=lambda s: s.domain_id):
        blob = _domain_file_bytes(ds, variant)
        fname = f"{ds.name}.bin"
        (out / fname).write_bytes(blob)
        entries.append({
            "name": fname,
            "domain_id": ds.domain_id,
            "sha256": hashlib.sha256(blob).hexdigest(),
        })
    manifest = {"format": "aflac-manifest-1", "variant": variant, "files": entries}
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


def load_dataset(data_dir, verify: bool = True):
    """Read a dataset directory back; returns (datasets, variant)."""
    root = Path(data_dir)
    manifest = json.loads((root / MANIFEST_NAME).read_text())
    datasets = []
    for entry in manifest["files"]:
        blob = (root / entry["name"]).read_bytes()
        if verify and hashlib.sha256(blob).hexdigest() != entry["sha256"]:
            raise TruncatedFileError(f"checksum mismatch for {entry['name']}")
        if blob[: len(DATASET_FILE_MAGIC)] != DATASET_FILE_MAGIC:
            raise BadMagicError(f"bad domain-file magic in {entry['name']}")
        off = len(DATASET_FILE_MAGIC)
        (hlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        header = json.loads(blob[off:off + hlen].decode("utf-8"))
        off += hlen
        n = header["n"]
        ys = np.frombuffer(blob, dtype="<i4", count=n, offset=off)
        off += 4 * n
        x_shape = tuple(header["x_shape"])
        count = n * int(np.prod(x_shape))
        xs = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(
            (n,) + x_shape)
        d = header["domain_id"]
        examples = [LabeledExample(x=xs[i].copy(), y=int(ys[i]), d=d) for i in range(n)]
        datasets.append(DomainDataset(domain_id=d, name=header["domain_name"],
                                      examples=examples, counts=header["counts"]))
    return datasets, manifest["variant"]

"""On-disk feature archive: binary region blob + JSON manifest + JSONL ground truth.

Blob layout (all little-endian):
    magic "MILFEAT" | version u8 | feature_dim u32
    per image, at the offset recorded in the manifest:
        region_count u32
        region_count records of [x1 y1 x2 y2 objectness feature[M]] float32

Labels live in the manifest, not the blob, so relabeling rewrites only the
manifest. Features are stored at float32, the extractors' native precision;
the round trip is bit-exact.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .core import BoundingBox, FeatureBag, Region, validate_bag
from .errors import (
    ArchiveError,
    BadMagic,
    CorruptOffset,
    DimensionMismatch,
    InconsistentDims,
    ParseError,
    VersionUnsupported,
)
from .evaluation import GroundTruthBox
from .mil import CHUNK_BAGS

MAGIC = b"MILFEAT"
FORMAT_VERSION = 1
HEADER_SIZE = len(MAGIC) + 1 + 4  # magic + version byte + u32 dim
FLOATS_PER_REGION_FIXED = 5  # x1 y1 x2 y2 objectness


def _stem(path: str) -> str:
    return path[: -len(".milfeat")] if path.endswith(".milfeat") else path


def manifest_path(path: str) -> str:
    return _stem(path) + ".manifest.json"


def ground_truth_path(path: str) -> str:
    return _stem(path) + ".gt.jsonl"


@dataclass(frozen=True)
class ImageEntry:
    image_id: str
    split: str
    labels: dict[str, int]
    region_count: int
    offset: int


@dataclass(frozen=True)
class ArchiveManifest:
    format_version: int
    dataset_name: str
    class_names: tuple[str, ...]
    feature_dim: int
    images: tuple[ImageEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "images", tuple(self.images))
        prev = -1
        for entry in self.images:
            if entry.region_count < 1:
                raise ArchiveError(f"image {entry.image_id!r}: region_count must be >= 1")
            if entry.offset <= prev:
                raise CorruptOffset(
                    f"image {entry.image_id!r}: offsets must be strictly increasing",
                    image_id=entry.image_id,
                )
            prev = entry.offset
            for cls in self.class_names:
                if cls not in entry.labels:
                    raise ArchiveError(
                        f"image {entry.image_id!r}: missing label for class {cls!r}"
                    )


def _atomic_write(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class ArchiveWriter:
    """Incremental single-writer: bags are appended one at a time, so archives
    far larger than memory can be produced. Blob and manifest land atomically
    on close() via temp + rename."""

    def __init__(self, path: str, class_names: Sequence[str], feature_dim: int,
                 dataset_name: str = "dataset"):
        self.path = path
        self.class_names = tuple(class_names)
        self.dim = int(feature_dim)
        self.dataset_name = dataset_name
        self.entries: list[ImageEntry] = []
        self._tmp = path + ".tmp"
        self._fh = open(self._tmp, "wb")
        self._fh.write(MAGIC)
        self._fh.write(struct.pack("<B", FORMAT_VERSION))
        self._fh.write(struct.pack("<I", self.dim))
        self._offset = HEADER_SIZE
        self._closed = False

    def add(self, bag: FeatureBag, split: str = "train") -> None:
        if bag.dim != self.dim:
            raise InconsistentDims(
                f"bag {bag.image_id!r} has dim {bag.dim}, expected {self.dim}"
            )
        labels = {}
        for cls in self.class_names:
            if cls not in bag.labels:
                raise ArchiveError(
                    f"bag {bag.image_id!r}: missing label for class {cls!r}"
                )
            labels[cls] = int(bag.labels[cls])
        k = len(bag.regions)
        rec = np.empty((k, FLOATS_PER_REGION_FIXED + self.dim), dtype="<f4")
        for j, r in enumerate(bag.regions):
            rec[j, 0:4] = (r.box.x1, r.box.y1, r.box.x2, r.box.y2)
            rec[j, 4] = r.objectness
            rec[j, 5:] = r.feature
        self._fh.write(struct.pack("<I", k))
        self._fh.write(rec.tobytes())
        self.entries.append(ImageEntry(
            image_id=bag.image_id, split=split, labels=labels,
            region_count=k, offset=self._offset,
        ))
        self._offset += 4 + rec.nbytes

    def close(self) -> None:
        if self._closed:
            return
        self._fh.close()
        manifest = ArchiveManifest(
            format_version=FORMAT_VERSION,
            dataset_name=self.dataset_name,
            class_names=self.class_names,
            feature_dim=self.dim,
            images=tuple(self.entries),
        )
        os.replace(self._tmp, self.path)
        _atomic_write(manifest_path(self.path),
                      json.dumps(_manifest_to_dict(manifest),
                                 indent=2, sort_keys=True).encode())
        self._closed = True

    def abort(self) -> None:
        if not self._closed:
            self._fh.close()
            if os.path.exists(self._tmp):
                os.unlink(self._tmp)
            self._closed = True

    def __enter__(self):
        return self

    def __exit__(self, exc_type, *exc):
        if exc_type is None:
            self.close()
        else:
            self.abort()


def write_archive(
    bags: Sequence[FeatureBag],
    splits: Mapping[str, str] | None,
    class_names: Sequence[str],
    path: str,
    dataset_name: str = "dataset",
    feature_dim: int | None = None,
) -> None:
    """Write blob + manifest atomically; read_archive(write_archive(x)) == x bit-exactly."""
    bags = list(bags)
    splits = dict(splits) if splits else {}
    if bags:
        dim = bags[0].dim
        if feature_dim is not None and feature_dim != dim:
            raise InconsistentDims(f"feature_dim {feature_dim} != bag dim {dim}")
    else:
        dim = feature_dim if feature_dim is not None else 0
    with ArchiveWriter(path, class_names, dim, dataset_name) as writer:
        for bag in bags:
            writer.add(bag, splits.get(bag.image_id, "train"))


def _manifest_to_dict(m: ArchiveManifest) -> dict:
    return {
        "format_version": m.format_version,
        "dataset_name": m.dataset_name,
        "class_names": list(m.class_names),
        "feature_dim": m.feature_dim,
        "images": [
            {
                "image_id": e.image_id,
                "split": e.split,
                "labels": e.labels,
                "region_count": e.region_count,
                "offset": e.offset,
            }
            for e in m.images
        ],
    }


def read_manifest(path: str) -> ArchiveManifest:
    mpath = manifest_path(path)
    try:
        with open(mpath, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest {mpath}: {exc}") from exc
    try:
        images = tuple(
            ImageEntry(
                image_id=img["image_id"],
                split=img["split"],
                labels={str(k): int(v) for k, v in img["labels"].items()},
                region_count=int(img["region_count"]),
                offset=int(img["offset"]),
            )
            for img in raw["images"]
        )
        return ArchiveManifest(
            format_version=int(raw["format_version"]),
            dataset_name=raw["dataset_name"],
            class_names=tuple(raw["class_names"]),
            feature_dim=int(raw["feature_dim"]),
            images=images,
        )
    except KeyError as exc:
        raise ParseError(f"manifest {mpath}: missing field {exc}") from exc


def _check_header(fh, path: str) -> int:
    head = fh.read(HEADER_SIZE)
    if len(head) < HEADER_SIZE or head[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"{path}: not a MILFEAT archive")
    version = head[len(MAGIC)]
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"{path}: version {version} unsupported")
    (dim,) = struct.unpack("<I", head[len(MAGIC) + 1 :])
    return dim


def _read_image_block(fh, entry: ImageEntry, dim: int) -> FeatureBag:
    fh.seek(entry.offset)
    kraw = fh.read(4)
    if len(kraw) < 4:
        raise CorruptOffset(
            f"image {entry.image_id!r}: truncated region count", image_id=entry.image_id
        )
    (k,) = struct.unpack("<I", kraw)
    if k != entry.region_count:
        raise CorruptOffset(
            f"image {entry.image_id!r}: region count {k} != manifest {entry.region_count}",
            image_id=entry.image_id,
        )
    want = k * (FLOATS_PER_REGION_FIXED + dim) * 4
    body = fh.read(want)
    if len(body) < want:
        raise CorruptOffset(
            f"image {entry.image_id!r}: truncated region data", image_id=entry.image_id
        )
    rec = np.frombuffer(body, dtype="<f4").reshape(k, FLOATS_PER_REGION_FIXED + dim)
    regions = tuple(
        Region(
            box=BoundingBox(float(rec[j, 0]), float(rec[j, 1]),
                            float(rec[j, 2]), float(rec[j, 3])),
            objectness=float(rec[j, 4]),
            feature=rec[j, 5:],
        )
        for j in range(k)
    )
    return FeatureBag(image_id=entry.image_id, regions=regions, labels=entry.labels)


def iter_archive(path: str, split_filter: str | None = None) -> Iterator[FeatureBag]:
    """Stream bags in manifest order; memory use stays at one image at a time."""
    manifest = read_manifest(path)
    with open(path, "rb") as fh:
        dim = _check_header(fh, path)
        if dim != manifest.feature_dim:
            raise DimensionMismatch(
                f"{path}: blob dim {dim} != manifest dim {manifest.feature_dim}"
            )
        for entry in manifest.images:
            if split_filter is not None and entry.split != split_filter:
                continue
            bag = _read_image_block(fh, entry, dim)
            validate_bag(bag, dim)
            yield bag


def read_archive(path: str, split_filter: str | None = None) -> list[FeatureBag]:
    """Load the requested split (or everything) fully into memory."""
    return list(iter_archive(path, split_filter))


class StreamingDataset:
    """Disk-backed drop-in for mil.RegionStack when features exceed memory.

    Exposes n / dim / y / iter_chunks like the in-memory stack but reads
    region blocks from the blob on demand, so SGD batches stream from disk.
    """

    def __init__(self, path: str, class_name: str, split_filter: str | None = None,
                 normalize: bool = False):
        self.path = path
        self.normalize = normalize
        manifest = read_manifest(path)
        entries = [e for e in manifest.images
                   if split_filter is None or e.split == split_filter]
        self.entries = entries
        self.dim = manifest.feature_dim
        self.n = len(entries)
        self.kmax = max((e.region_count for e in entries), default=0)
        y = np.zeros(self.n, dtype=np.int8)
        for i, e in enumerate(entries):
            if class_name not in e.labels:
                raise ArchiveError(
                    f"image {e.image_id!r}: missing label for class {class_name!r}"
                )
            y[i] = e.labels[class_name]
        self.y = y
        self._fh = open(path, "rb")
        dim = _check_header(self._fh, path)
        if dim != self.dim:
            raise DimensionMismatch(
                f"{path}: blob dim {dim} != manifest dim {self.dim}"
            )

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _load(self, rows: Iterable[int], X, obj, valid):
        for out_row, i in enumerate(rows):
            entry = self.entries[i]
            self._fh.seek(entry.offset)
            kraw = self._fh.read(4)
            if len(kraw) < 4:
                raise CorruptOffset(
                    f"image {entry.image_id!r}: truncated region count",
                    image_id=entry.image_id,
                )
            (k,) = struct.unpack("<I", kraw)
            if k != entry.region_count:
                raise CorruptOffset(
                    f"image {entry.image_id!r}: region count {k} != manifest"
                    f" {entry.region_count}",
                    image_id=entry.image_id,
                )
            want = k * (FLOATS_PER_REGION_FIXED + self.dim) * 4
            body = self._fh.read(want)
            if len(body) < want:
                raise CorruptOffset(
                    f"image {entry.image_id!r}: truncated region data",
                    image_id=entry.image_id,
                )
            rec = np.frombuffer(body, dtype="<f4").reshape(
                k, FLOATS_PER_REGION_FIXED + self.dim
            )
            feats = rec[:, 5:]
            if self.normalize:
                norms = np.linalg.norm(feats, axis=1, keepdims=True)
                feats = feats / np.where(norms > 0.0, norms, 1.0)
            X[out_row, :k] = feats
            obj[out_row, :k] = rec[:, 4]
            valid[out_row, :k] = True

    def iter_chunks(self, indices: np.ndarray | None = None, chunk: int = CHUNK_BAGS):
        rows = np.arange(self.n) if indices is None else np.asarray(indices)
        for start in range(0, len(rows), chunk):
            sel = rows[start : start + chunk]
            kc = max(int(self.entries[int(i)].region_count) for i in sel)
            X = np.zeros((len(sel), kc, self.dim), dtype=np.float32)
            obj = np.zeros((len(sel), kc), dtype=np.float32)
            valid = np.zeros((len(sel), kc), dtype=bool)
            self._load((int(i) for i in sel), X, obj, valid)
            yield X, obj, valid, self.y[sel]


def write_ground_truth(gts: Sequence[GroundTruthBox], path: str) -> None:
    lines = []
    for g in gts:
        lines.append(json.dumps({
            "image_id": g.image_id,
            "class_name": g.class_name,
            "x1": g.box.x1, "y1": g.box.y1, "x2": g.box.x2, "y2": g.box.y2,
            "ignore": g.ignore,
        }, sort_keys=True))
    _atomic_write(path, ("\n".join(lines) + ("\n" if lines else "")).encode())


def read_ground_truth(path: str) -> list[GroundTruthBox]:
    """Parse JSONL ground-truth records; errors carry the failing line number."""
    out: list[GroundTruthBox] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            try:
                box = BoundingBox(float(rec["x1"]), float(rec["y1"]),
                                  float(rec["x2"]), float(rec["y2"]))
                out.append(GroundTruthBox(
                    image_id=str(rec["image_id"]),
                    class_name=str(rec["class_name"]),
                    box=box,
                    ignore=bool(rec.get("ignore", False)),
                ))
            except KeyError as exc:
                raise ParseError(f"missing field {exc}", line=lineno) from exc
            except Exception as exc:
                raise ParseError(str(exc), line=lineno) from exc
    return out

"""Dataset manifests, sample loading and patch sampling.

A manifest is a UTF-8 text file with one record per line::

    id,image,label[,fov],dataset,domain_tag

Relative paths resolve against the manifest's directory. Blank lines and
lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .imageio import image_size, read_image

# (count, width, height) per public dataset
EXPECTED = {
    "DRIVE": (20, 565, 584),
    "HRF": (45, 3504, 2336),
    "STARE": (20, 700, 605),
    "ARIA": (138, 768, 576),
}
DEFAULT_DOMAIN = {"DRIVE": "source", "HRF": "source", "STARE": "target", "ARIA": "target"}
DOMAIN_TAGS = ("source", "target")


class ManifestError(ValueError):
    pass


class SampleError(ValueError):
    pass


class DatasetWarning(UserWarning):
    pass


@dataclass
class SampleRecord:
    id: str
    image_path: Path
    label_path: Path
    fov_path: Optional[Path]
    dataset_name: str
    domain_tag: str


@dataclass
class DatasetManifest:
    records: list = field(default_factory=list)
    path: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.records)

    def by_domain(self, tag: str) -> Iterator[SampleRecord]:
        if tag not in DOMAIN_TAGS:
            raise ValueError(f"unknown domain tag {tag!r}")
        return (r for r in self.records if r.domain_tag == tag)

    def source(self) -> Iterator[SampleRecord]:
        return self.by_domain("source")

    def target(self) -> Iterator[SampleRecord]:
        return self.by_domain("target")

    def datasets(self) -> dict:
        out: dict = {}
        for r in self.records:
            out.setdefault(r.dataset_name, []).append(r)
        return out


def parse_manifest_line(line: str, lineno: int, base: Path) -> SampleRecord:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) == 5:
        rid, img, lbl, ds, tag = parts
        fov = None
    elif len(parts) == 6:
        rid, img, lbl, fov, ds, tag = parts
        fov = fov or None
    else:
        raise ManifestError(f"line {lineno}: expected 5 or 6 comma-separated fields, got {len(parts)}")
    if not rid:
        raise ManifestError(f"line {lineno}: empty record id")
    if tag not in DOMAIN_TAGS:
        raise ManifestError(f"line {lineno}: domain tag must be source|target, got {tag!r}")
    return SampleRecord(
        id=rid,
        image_path=base / img,
        label_path=base / lbl,
        fov_path=base / fov if fov else None,
        dataset_name=ds,
        domain_tag=tag,
    )


def load_manifest(path) -> DatasetManifest:
    """Parse and validate a manifest.

    Missing files raise :class:`ManifestError` naming the record; counts or
    sizes that differ from the known public datasets only warn.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    records = []
    seen = set()
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        rec = parse_manifest_line(line, lineno, base)
        if rec.id in seen:
            raise ManifestError(f"line {lineno}: duplicate record id {rec.id!r}")
        seen.add(rec.id)
        for kind, p in (("image", rec.image_path), ("label", rec.label_path), ("fov", rec.fov_path)):
            if p is not None and not p.is_file():
                raise ManifestError(f"record {rec.id!r} (line {lineno}): {kind} file not found: {p}")
        records.append(rec)
    manifest = DatasetManifest(records, path)
    check_expectations(manifest)
    return manifest


def check_expectations(manifest: DatasetManifest) -> list:
    """Warn about deviations from the declared public-dataset inventory."""
    msgs = []
    for name, recs in manifest.datasets().items():
        key = name.upper()
        if key in EXPECTED:
            count, w, h = EXPECTED[key]
            if len(recs) != count:
                msgs.append(f"{name}: {len(recs)} records, expected {count}")
            for r in recs:
                size = image_size(r.image_path)
                if size != (w, h):
                    msgs.append(f"{name}/{r.id}: size {size[0]}x{size[1]}, expected {w}x{h}")
        if key in DEFAULT_DOMAIN:
            for r in recs:
                if r.domain_tag != DEFAULT_DOMAIN[key]:
                    msgs.append(f"{name}/{r.id}: tagged {r.domain_tag}, conventionally {DEFAULT_DOMAIN[key]}")
    for m in msgs:
        warnings.warn(m, DatasetWarning, stacklevel=3)
    return msgs


def load_sample(record: SampleRecord):
    """Return ``(rgb (3,H,W), label (H,W), fov (H,W))`` as float32 in [0,1]."""
    img = read_image(record.image_path, "RGB")
    label = (read_image(record.label_path, "L") > 0.5).astype(np.float32)
    if record.fov_path is not None:
        fov = (read_image(record.fov_path, "L") > 0.5).astype(np.float32)
    else:
        fov = np.ones(img.shape[1:], dtype=np.float32)
    for kind, arr in (("label", label), ("fov", fov)):
        if arr.shape != img.shape[1:]:
            raise SampleError(f"record {record.id!r}: {kind} shape {arr.shape} != image shape {img.shape[1:]}")
    return img, label, fov


def sample_patches(img, label, fov, size: int, n: int, rng: np.random.Generator,
                   multiple: int = 1, min_fov: float = 0.5, max_tries: int = 1000) -> list:
    """Draw ``n`` aligned square crops whose FOV coverage is at least ``min_fov``."""
    h, w = label.shape
    if size > min(h, w):
        raise ValueError(f"patch size {size} exceeds image {h}x{w}")
    if size % multiple:
        raise ValueError(f"patch size {size} not divisible by {multiple}")
    out = []
    for _ in range(n):
        for _ in range(max_tries):
            r = int(rng.integers(0, h - size + 1))
            c = int(rng.integers(0, w - size + 1))
            f = fov[r:r + size, c:c + size]
            if f.mean() >= min_fov:
                break
        else:
            raise ValueError(f"no {size}x{size} patch with FOV coverage >= {min_fov} after {max_tries} draws")
        out.append((img[..., r:r + size, c:c + size].copy(), label[r:r + size, c:c + size].copy(), f.copy()))
    return out

"""Dataset synthesis, persistence, and splitting.

Sharp images are ingested from a user directory, paired with blur-field
patterns from the bank, blurred, and augmented; every record stores the
sharp/blurry images losslessly (float32 TIFF) plus three blur fields
(true, matting, DT) in the BMAP container. A JSON-lines manifest binds
the files with per-file SHA-256 checksums and train/val split labels.

BMAP layout: magic "BMAP", version u8 = 1, height u32, width u32
(little-endian), then height*width float32 little-endian radii,
row-major.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import warnings
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import cv2
import numpy as np

from .augmentation import DtConfig, MattingConfig, make_augmented_variants
from .common import SvbrError, ensure_image
from .kernels import MAX_RADIUS, BlurField, default_pattern_bank, generate_blur_field
from .synthesis import NoiseConfig, sv_convolve

BMAP_MAGIC = b"BMAP"
BMAP_VERSION = 1


class BlurFieldFileError(SvbrError):
    """Base for BMAP container errors."""


class BadMagicError(BlurFieldFileError):
    pass


class TruncatedFileError(BlurFieldFileError):
    pass


class RadiusRangeError(BlurFieldFileError):
    pass


class ChecksumError(SvbrError):
    pass


def field_bytes(field: BlurField) -> bytes:
    header = BMAP_MAGIC + struct.pack("<BII", BMAP_VERSION, field.height, field.width)
    return header + field.radii.astype("<f4").tobytes()


def write_field(path, field: BlurField) -> None:
    Path(path).write_bytes(field_bytes(field))


def field_from_bytes(data: bytes) -> BlurField:
    if len(data) < 4 or data[:4] != BMAP_MAGIC:
        raise BadMagicError("not a BMAP file (bad magic)")
    if len(data) < 13:
        raise TruncatedFileError("BMAP header truncated")
    version, height, width = struct.unpack("<BII", data[4:13])
    if version != BMAP_VERSION:
        raise BadMagicError(f"unsupported BMAP version {version}")
    expected = 13 + 4 * height * width
    if len(data) != expected:
        raise TruncatedFileError(f"BMAP payload is {len(data)} bytes, expected {expected}")
    radii = np.frombuffer(data[13:], dtype="<f4").reshape(height, width).astype(np.float64)
    if not np.all(np.isfinite(radii)):
        raise RadiusRangeError("BMAP contains non-finite radii")
    if radii.size and (radii.min() < 0 or radii.max() > MAX_RADIUS):
        raise RadiusRangeError(
            f"BMAP radii outside [0, {MAX_RADIUS}]: min={radii.min():g} max={radii.max():g}"
        )
    return BlurField(radii)


def read_field(path) -> BlurField:
    return field_from_bytes(Path(path).read_bytes())


# --- image files ------------------------------------------------------------

_RASTER_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}


def load_image(path) -> np.ndarray:
    """Read a raster image as H x W x 3 RGB float64 in [0, 1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise SvbrError(f"cannot decode image: {path}")
    if raw.ndim == 2:
        raw = raw[:, :, None].repeat(3, axis=2)
    if raw.shape[2] == 4:
        raw = raw[:, :, :3]
    rgb = raw[:, :, ::-1].astype(np.float64)
    if raw.dtype == np.uint8:
        rgb /= 255.0
    elif raw.dtype == np.uint16:
        rgb /= 65535.0
    elif not np.issubdtype(raw.dtype, np.floating):
        raise SvbrError(f"unsupported image dtype {raw.dtype}: {path}")
    return ensure_image(np.clip(rgb, 0.0, 1.0), channels=3)


def save_image_f32(path, image: np.ndarray) -> None:
    """Lossless float32 TIFF (training-path container, no quantization)."""
    img = ensure_image(image, channels=3).astype(np.float32)
    if not cv2.imwrite(str(path), img[:, :, ::-1]):
        raise OSError(f"failed to write image: {path}")


def save_image_u8(path, image: np.ndarray) -> None:
    img = ensure_image(image, channels=3)
    u8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(path), u8[:, :, ::-1]):
        raise OSError(f"failed to write image: {path}")


def ingest(directory, height: int, width: int) -> list[tuple[str, np.ndarray]]:
    """Load, bilinearly rescale, and normalize every decodable image.

    Returns (id, image) pairs ordered by filename; ids are filename
    stems. Undecodable files are skipped with a warning.
    """
    d = Path(directory)
    if not d.is_dir():
        raise SvbrError(f"not a directory: {directory}")
    out: list[tuple[str, np.ndarray]] = []
    for p in sorted(d.iterdir()):
        if not p.is_file() or p.suffix.lower() not in _RASTER_SUFFIXES:
            continue
        try:
            img = load_image(p)
        except SvbrError as exc:
            warnings.warn(f"skipping {p.name}: {exc}")
            continue
        resized = cv2.resize(img, (width, height), interpolation=cv2.INTER_LINEAR)
        out.append((p.stem, np.clip(resized, 0.0, 1.0)))
    if not out:
        raise SvbrError(f"no decodable images in {directory}")
    return out


# --- records and manifest ----------------------------------------------------


@dataclass
class SampleRecord:
    id: str
    source_id: str
    sharp: str
    blurry: str
    field_true: str
    field_matting: str
    field_dt: str
    pattern_id: int
    seed: int
    split: str = ""
    checksums: dict | None = None


@dataclass
class TrainSample:
    """Fully loaded record, ready for the training loop."""

    id: str
    sharp: np.ndarray
    blurry: np.ndarray
    field_true: BlurField
    field_matting: BlurField
    field_dt: BlurField
    split: str


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def split(records: list[SampleRecord], ratio: float, seed: int) -> list[SampleRecord]:
    """Assign train/val labels per source image (no cross-split leakage).

    A seeded permutation of source ids marks the first ceil(ratio * n)
    image groups as train; every record of one source shares its label.
    """
    if not 0 < ratio < 1:
        raise ValueError("ratio must be in (0, 1)")
    sources = sorted({r.source_id for r in records})
    if len(sources) < 2:
        raise ValueError("need at least 2 source images to split")
    rng = np.random.default_rng(seed)
    perm = [sources[i] for i in rng.permutation(len(sources))]
    n_train = math.ceil(ratio * len(sources))
    train_ids = set(perm[:n_train])
    return [
        replace(r, split="train" if r.source_id in train_ids else "val") for r in records
    ]


def write_manifest(path, records: list[SampleRecord], seed: int) -> None:
    lines = [json.dumps({"kind": "header", "version": 1, "seed": seed, "count": len(records)},
                        sort_keys=True)]
    for r in records:
        d = asdict(r)
        d["kind"] = "record"
        lines.append(json.dumps(d, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> list[SampleRecord]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        kind = d.pop("kind", "record")
        if kind != "record":
            continue
        records.append(SampleRecord(**d))
    return records


def synthesize_dataset(
    images: list[tuple[str, np.ndarray]],
    out_dir,
    patterns_per_image: int = 1,
    m_cfg: MattingConfig = MattingConfig(),
    d_cfg: DtConfig = DtConfig(),
    noise: NoiseConfig = NoiseConfig(),
    seed: int = 0,
    split_ratio: float = 0.8,
    bank=None,
) -> tuple[Path, list[SampleRecord]]:
    """Synthesize blur records for every (image, pattern) pair.

    Patterns are assigned round-robin through the bank with a seeded
    starting offset. Each record writes the sharp/blurry float TIFFs and
    the three BMAP fields, then the whole set is split per source image
    and the manifest written. Deterministic given (images, seed).
    """
    if not images:
        raise SvbrError("no input images")
    bank = bank if bank is not None else default_pattern_bank()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(len(bank)))
    records: list[SampleRecord] = []
    idx = 0
    for img_id, img in images:
        img = ensure_image(img, channels=3)
        h, w = img.shape[:2]
        for j in range(patterns_per_image):
            pid = (offset + idx) % len(bank)
            rec_id = f"{img_id}_p{pid:02d}"
            field_true = generate_blur_field(bank[pid], h, w)
            rec_noise = replace(noise, seed=noise.seed + idx)
            blurry = sv_convolve(img, field_true, rec_noise)
            field_matting, field_dt = make_augmented_variants(field_true, img, m_cfg, d_cfg)

            paths = {
                "sharp": f"{rec_id}_sharp.tiff",
                "blurry": f"{rec_id}_blurry.tiff",
                "field_true": f"{rec_id}_true.bmap",
                "field_matting": f"{rec_id}_matting.bmap",
                "field_dt": f"{rec_id}_dt.bmap",
            }
            save_image_f32(out / paths["sharp"], img)
            save_image_f32(out / paths["blurry"], blurry)
            write_field(out / paths["field_true"], field_true)
            write_field(out / paths["field_matting"], field_matting)
            write_field(out / paths["field_dt"], field_dt)
            checksums = {name: _sha256(out / rel) for name, rel in paths.items()}
            records.append(SampleRecord(
                id=rec_id,
                source_id=img_id,
                pattern_id=pid,
                seed=rec_noise.seed,
                checksums=checksums,
                **paths,
            ))
            idx += 1
    if len({r.source_id for r in records}) >= 2:
        records = split(records, split_ratio, seed)
    else:
        records = [replace(r, split="train") for r in records]
    manifest = out / "manifest.jsonl"
    write_manifest(manifest, records, seed)
    return manifest, records


def load_samples(manifest_path, verify: bool = True) -> list[TrainSample]:
    """Load every record behind a manifest, verifying checksums."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    samples = []
    for rec in read_manifest(manifest_path):
        paths = {
            "sharp": rec.sharp,
            "blurry": rec.blurry,
            "field_true": rec.field_true,
            "field_matting": rec.field_matting,
            "field_dt": rec.field_dt,
        }
        for name, rel in paths.items():
            p = base / rel
            if not p.exists():
                raise SvbrError(f"manifest references missing file: {rel}")
            if verify and rec.checksums and rec.checksums.get(name) != _sha256(p):
                raise ChecksumError(f"checksum mismatch for {rel}")
        samples.append(TrainSample(
            id=rec.id,
            sharp=load_image(base / rec.sharp),
            blurry=load_image(base / rec.blurry),
            field_true=read_field(base / rec.field_true),
            field_matting=read_field(base / rec.field_matting),
            field_dt=read_field(base / rec.field_dt),
            split=rec.split,
        ))
    return samples

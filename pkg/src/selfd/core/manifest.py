"""On-disk dataset format: one lossless image file per frame plus a manifest.

A manifest is newline-delimited JSON. The first line is a header object with
keys ``format, version, split, seed, count, checksum`` and every following
line is one record. Record field order is frozen for format version 1:

    image, episode_id, frame_index, kind, speed, command, waypoints,
    quality, nearby_agents, teacher_id, sampling_strategy

``kind`` is one of ``labeled`` / ``unlabeled`` / ``pseudo``. Unlabeled records
carry null speed/command/waypoints/quality. Image paths are relative to the
manifest's directory. The checksum is the sha256 hex digest of the record
lines exactly as written (newline-terminated), so any byte-level edit of the
record block is detected.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
from PIL import Image

from .types import (
    Command,
    LabeledSample,
    Observation,
    PseudoLabeledSample,
    SamplingKind,
    WaypointPlan,
)

FORMAT_NAME = "selfd-manifest"
FORMAT_VERSION = 1

_RECORD_FIELDS = (
    "image",
    "episode_id",
    "frame_index",
    "kind",
    "speed",
    "command",
    "waypoints",
    "quality",
    "nearby_agents",
    "teacher_id",
    "sampling_strategy",
)


class ManifestError(Exception):
    """Base class for manifest I/O failures."""


class ManifestMissingError(ManifestError):
    """Manifest file does not exist."""


class ManifestVersionError(ManifestError):
    """Header declares an unsupported format version."""


class ManifestChecksumError(ManifestError):
    """Record block does not match the header checksum."""


class ManifestImageError(ManifestError):
    """A referenced image file is missing."""


@dataclass
class ManifestRecord:
    """One sample descriptor; see module docstring for the frozen field order."""

    image: str
    episode_id: str
    frame_index: int
    kind: str  # labeled | unlabeled | pseudo
    speed: Optional[float] = None
    command: Optional[int] = None
    waypoints: Optional[list] = None  # K x [fwd, left]
    quality: Optional[float] = None
    nearby_agents: Optional[list] = None  # [K][n][5], ego frame
    teacher_id: Optional[str] = None
    sampling_strategy: Optional[str] = None  # UNIFORM | PRIOR

    def to_line(self) -> str:
        data = {name: getattr(self, name) for name in _RECORD_FIELDS}
        return json.dumps(data, separators=(",", ":"))

    @classmethod
    def from_line(cls, line: str) -> "ManifestRecord":
        data = json.loads(line)
        return cls(**{name: data.get(name) for name in _RECORD_FIELDS})

    def to_pseudo_sample(self) -> PseudoLabeledSample:
        return PseudoLabeledSample(
            image_path=self.image,
            sampled_speed=float(self.speed),
            sampled_command=Command(self.command),
            pseudo_plan=WaypointPlan(np.asarray(self.waypoints), float(self.quality)),
            teacher_id=self.teacher_id or "",
            sampling_strategy=SamplingKind[self.sampling_strategy],
            episode_id=self.episode_id,
            frame_index=self.frame_index,
        )


@dataclass
class DatasetManifest:
    """Parsed manifest: header fields plus the record list."""

    records: List[ManifestRecord]
    split: str = ""
    seed: int = 0
    version: int = FORMAT_VERSION
    checksum: str = ""
    path: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def root(self) -> Path:
        """Directory that image paths are relative to."""
        if self.path is None:
            raise ValueError("manifest has no on-disk path")
        return self.path.parent

    def image_path(self, record: ManifestRecord) -> Path:
        return self.root / record.image

    def fingerprint(self) -> str:
        """Content hash of the record block; used to tie checkpoints to data."""
        return self.checksum


def _record_block(records: Sequence[ManifestRecord]) -> str:
    return "".join(r.to_line() + "\n" for r in records)


def _checksum(block: str) -> str:
    return hashlib.sha256(block.encode("utf-8")).hexdigest()


def write_manifest(
    records: Sequence[ManifestRecord],
    path: Union[str, Path],
    split: str = "",
    seed: int = 0,
) -> DatasetManifest:
    """Persist records to ``path`` and return the resulting manifest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    block = _record_block(records)
    checksum = _checksum(block)
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "split": split,
        "seed": seed,
        "count": len(records),
        "checksum": checksum,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        fh.write(block)
    return DatasetManifest(
        records=list(records),
        split=split,
        seed=seed,
        checksum=checksum,
        path=path,
    )


def read_manifest(path: Union[str, Path], check_images: bool = False) -> DatasetManifest:
    """Read and verify a manifest.

    Raises ManifestMissingError / ManifestVersionError / ManifestChecksumError
    distinctly; with ``check_images`` also verifies every referenced image
    file exists (ManifestImageError).
    """
    path = Path(path)
    if not path.exists():
        raise ManifestMissingError(f"manifest not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line:
            raise ManifestError(f"empty manifest: {path}")
        header = json.loads(header_line)
        if header.get("format") != FORMAT_NAME:
            raise ManifestVersionError(f"not a {FORMAT_NAME} file: {path}")
        if header.get("version") != FORMAT_VERSION:
            raise ManifestVersionError(
                f"unsupported version {header.get('version')} (expected {FORMAT_VERSION}): {path}"
            )
        block = fh.read()
    if _checksum(block) != header.get("checksum"):
        raise ManifestChecksumError(f"record checksum mismatch: {path}")
    lines = block.splitlines()
    if len(lines) != header.get("count"):
        raise ManifestChecksumError(
            f"record count {len(lines)} does not match declared {header.get('count')}: {path}"
        )
    records = [ManifestRecord.from_line(line) for line in lines]
    manifest = DatasetManifest(
        records=records,
        split=header.get("split", ""),
        seed=header.get("seed", 0),
        version=header["version"],
        checksum=header["checksum"],
        path=path,
    )
    if check_images:
        root = manifest.root
        for rec in records:
            if not (root / rec.image).exists():
                raise ManifestImageError(f"missing image file: {root / rec.image}")
    return manifest


def save_image(image: np.ndarray, path: Union[str, Path]) -> None:
    """Write an HxWx3 float [0,1] or uint8 array as a lossless PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if image.dtype != np.uint8:
        image = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(image).save(path, format="PNG")


def load_image(path: Union[str, Path]) -> np.ndarray:
    """Load a PNG as HxWx3 float32 intensities in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def load_image_u8(path: Union[str, Path]) -> np.ndarray:
    """Load a PNG as HxWx3 uint8 (compact form for in-memory caches)."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()


def labeled_record(
    image: str,
    episode_id: str,
    frame_index: int,
    speed: float,
    command: Command,
    waypoints: np.ndarray,
    nearby_agents: Optional[list] = None,
) -> ManifestRecord:
    return ManifestRecord(
        image=image,
        episode_id=episode_id,
        frame_index=frame_index,
        kind="labeled",
        speed=float(speed),
        command=int(command),
        waypoints=[[float(x), float(y)] for x, y in np.asarray(waypoints)],
        quality=1.0,
        nearby_agents=nearby_agents,
    )


def unlabeled_record(image: str, episode_id: str, frame_index: int) -> ManifestRecord:
    return ManifestRecord(
        image=image, episode_id=episode_id, frame_index=frame_index, kind="unlabeled"
    )


def pseudo_record(sample: PseudoLabeledSample) -> ManifestRecord:
    return ManifestRecord(
        image=sample.image_path,
        episode_id=sample.episode_id,
        frame_index=sample.frame_index,
        kind="pseudo",
        speed=float(sample.sampled_speed),
        command=int(sample.sampled_command),
        waypoints=[[float(x), float(y)] for x, y in sample.pseudo_plan.waypoints],
        quality=float(sample.pseudo_plan.quality),
        teacher_id=sample.teacher_id,
        sampling_strategy=sample.sampling_strategy.name,
    )

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfd.core import (
    ManifestChecksumError,
    ManifestImageError,
    ManifestMissingError,
    ManifestRecord,
    ManifestVersionError,
    labeled_record,
    load_image,
    read_manifest,
    save_image,
    unlabeled_record,
    write_manifest,
)
from selfd.core.types import Command


def synthetic_records(n, rng):
    records = []
    for i in range(n):
        records.append(
            labeled_record(
                image=f"images/ep0/{i:04d}.png",
                episode_id="ep0",
                frame_index=i,
                speed=float(rng.uniform(0, 12)),
                command=Command(int(rng.integers(1, 4))),
                waypoints=rng.normal(size=(5, 2)),
                nearby_agents=None,
            )
        )
    return records


def test_empty_manifest_roundtrips(tmp_path):
    manifest = write_manifest([], tmp_path / "m.jsonl", split="labeled", seed=3)
    back = read_manifest(tmp_path / "m.jsonl")
    assert len(back) == 0
    assert back.split == "labeled"
    assert back.seed == 3


def test_roundtrip_is_identity_and_reserialization_byte_identical(tmp_path):
    rng = np.random.default_rng(0)
    records = synthetic_records(100, rng)
    write_manifest(records, tmp_path / "a.jsonl", split="labeled", seed=1)
    first = (tmp_path / "a.jsonl").read_bytes()
    back = read_manifest(tmp_path / "a.jsonl")
    assert [r.to_line() for r in back.records] == [r.to_line() for r in records]
    write_manifest(back.records, tmp_path / "b.jsonl", split="labeled", seed=1)
    assert (tmp_path / "b.jsonl").read_bytes() == first


def test_missing_file_reported_distinctly(tmp_path):
    with pytest.raises(ManifestMissingError):
        read_manifest(tmp_path / "nope.jsonl")


def test_version_mismatch_reported_distinctly(tmp_path):
    path = tmp_path / "m.jsonl"
    write_manifest([], path)
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    header["version"] = 99
    path.write_text(json.dumps(header) + "\n")
    with pytest.raises(ManifestVersionError):
        read_manifest(path)


def test_checksum_mismatch_reported_distinctly(tmp_path):
    rng = np.random.default_rng(1)
    path = tmp_path / "m.jsonl"
    write_manifest(synthetic_records(3, rng), path)
    text = path.read_text()
    path.write_text(text.replace('"speed":', '"speed": ', 1))
    with pytest.raises(ManifestChecksumError):
        read_manifest(path)


def test_missing_image_detected(tmp_path):
    rec = unlabeled_record("images/gone.png", "ep0", 0)
    path = tmp_path / "m.jsonl"
    write_manifest([rec], path)
    with pytest.raises(ManifestImageError):
        read_manifest(path, check_images=True)
    save_image(np.zeros((18, 32, 3), dtype=np.uint8), tmp_path / "images/gone.png")
    assert len(read_manifest(path, check_images=True)) == 1


def test_image_roundtrip_lossless(tmp_path):
    rng = np.random.default_rng(2)
    img = (rng.random((18, 32, 3)) * 255).astype(np.uint8)
    save_image(img, tmp_path / "x.png")
    back = load_image(tmp_path / "x.png")
    assert np.array_equal((back * 255).round().astype(np.uint8), img)


@settings(max_examples=25, deadline=None)
@given(
    speed=st.floats(0, 30, allow_nan=False),
    command=st.sampled_from([1, 2, 3]),
    wps=st.lists(
        st.tuples(st.floats(-50, 50, width=32), st.floats(-50, 50, width=32)),
        min_size=5,
        max_size=5,
    ),
)
def test_record_line_roundtrip_property(speed, command, wps):
    rec = labeled_record("img.png", "ep", 0, speed, Command(command), np.array(wps))
    back = ManifestRecord.from_line(rec.to_line())
    assert back == rec
    assert back.command == command

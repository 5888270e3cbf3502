"""Tests for Netpbm codecs and CDNet directory discovery."""

from pathlib import Path
import struct
import sys
import zlib

import numpy as np
import pytest

BACKEND_DIR = Path(__file__).resolve().parents[1]
if str(BACKEND_DIR) not in sys.path:
    sys.path.insert(0, str(BACKEND_DIR))

from app.models.schemas import Frame, Label
from app.services.frame_io import (
    discover_cdnet_sequence,
    discover_sequences,
    load_frame,
    load_ground_truth,
    load_mask,
    load_semantic_map,
    load_sequence,
    read_temporal_roi,
    write_frame,
    write_gray,
    write_mask,
)
from app.utils.errors import FormatError, IoError, LayoutError


def write_sequence(root: Path, frames: int = 3, size=(4, 5)):
    height, width = size
    rng = np.random.default_rng(3)
    for t in range(1, frames + 1):
        data = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
        (root / "input").mkdir(parents=True, exist_ok=True)
        write_frame(root / "input" / f"in{t:06d}.ppm", Frame(data=data, index=t))
        gt = np.zeros((height, width), dtype=np.uint8)
        gt[0, 0] = 255
        write_gray(root / "groundtruth" / f"gt{t:06d}.pgm", gt)
        write_gray(root / "semantic" / f"sem{t:06d}.pgm", np.full((height, width), 128, dtype=np.uint8))
    (root / "temporalROI.txt").write_text(f"2 {frames}\n", encoding="utf-8")


def test_ppm_is_bit_exact(tmp_path, make_frame):
    data = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
    path = tmp_path / "in000007.ppm"
    write_frame(path, make_frame(data))

    raw = path.read_bytes()
    assert raw.startswith(b"P6\n3 2\n255\n")
    assert raw.endswith(data.tobytes())

    frame = load_frame(path)
    assert frame.index == 7
    np.testing.assert_array_equal(frame.data, data)


def test_netpbm_header_comments_are_skipped(tmp_path):
    path = tmp_path / "sem000001.pgm"
    path.write_bytes(b"P5\n# produced by a segmenter\n2 1\n255\n" + bytes([0, 255]))

    semantic = load_semantic_map(path)

    np.testing.assert_array_equal(semantic.values, [[0, 255]])
    np.testing.assert_allclose(semantic.probs, [[0.0, 1.0]])


def test_sixteen_bit_pgm_is_rejected(tmp_path):
    path = tmp_path / "gt000001.pgm"
    path.write_bytes(b"P5\n1 1\n65535\n" + b"\x00\x00")

    with pytest.raises(FormatError):
        load_ground_truth(path)


def png_bytes(pixels: bytes, bit_depth: int, width: int = 1, height: int = 1) -> bytes:
    """Minimal truecolour PNG with unfiltered rows."""

    def chunk(tag: bytes, body: bytes) -> bytes:
        return struct.pack(">I", len(body)) + tag + body + struct.pack(">I", zlib.crc32(tag + body) & 0xFFFFFFFF)

    row = len(pixels) // height
    raw = b"".join(b"\x00" + pixels[i * row:(i + 1) * row] for i in range(height))
    header = struct.pack(">IIBBBBB", width, height, bit_depth, 2, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", header) + chunk(b"IDAT", zlib.compress(raw)) + chunk(b"IEND", b"")


def test_sixteen_bit_rgb_png_is_rejected(tmp_path):
    path = tmp_path / "in000001.png"
    path.write_bytes(png_bytes(b"\x00\x10\x03\x20\x07\x30", bit_depth=16))

    with pytest.raises(FormatError):
        load_frame(path)


def test_eight_bit_rgb_png_loads(tmp_path):
    path = tmp_path / "in000001.png"
    path.write_bytes(png_bytes(b"\x00\x03\x07", bit_depth=8))

    frame = load_frame(path)

    np.testing.assert_array_equal(frame.data, [[[0, 3, 7]]])


def test_truncated_ppm_is_rejected(tmp_path):
    path = tmp_path / "in000001.ppm"
    path.write_bytes(b"P6\n2 2\n255\n" + bytes(5))

    with pytest.raises(FormatError):
        load_frame(path)


def test_missing_and_empty_files_raise_io_error(tmp_path):
    with pytest.raises(IoError):
        load_frame(tmp_path / "in000001.ppm")
    empty = tmp_path / "in000002.ppm"
    empty.write_bytes(b"")
    with pytest.raises(IoError):
        load_frame(empty)


def test_frame_dimension_mismatch_is_format_error(tmp_path, make_frame):
    path = tmp_path / "in000001.ppm"
    write_frame(path, make_frame(np.zeros((2, 2, 3))))

    with pytest.raises(FormatError):
        load_frame(path, expected_dims=(3, 2))


def test_ground_truth_rejects_unknown_labels(tmp_path):
    path = tmp_path / "gt000001.pgm"
    write_gray(path, np.array([[0, 100]], dtype=np.uint8))

    with pytest.raises(FormatError):
        load_ground_truth(path)


@pytest.mark.parametrize("suffix", [".pgm", ".png"])
def test_write_mask_maps_labels_to_0_255(tmp_path, suffix):
    mask = np.array([[Label.BG, Label.FG], [Label.FG, Label.BG]], dtype=np.uint8)
    path = tmp_path / f"bin000001{suffix}"

    write_mask(path, mask)

    np.testing.assert_array_equal(load_mask(path), mask)


def test_load_mask_rejects_non_binary(tmp_path):
    path = tmp_path / "bin000001.pgm"
    write_gray(path, np.array([[0, 128]], dtype=np.uint8))

    with pytest.raises(FormatError):
        load_mask(path)


def test_discover_sequence_sorts_by_index(tmp_path):
    root = tmp_path / "baseline" / "office"
    write_sequence(root, frames=3)

    descriptor = discover_cdnet_sequence(root)

    assert descriptor.name == "office"
    assert descriptor.category == "baseline"
    assert [p.name for p in descriptor.frame_files] == ["in000001.ppm", "in000002.ppm", "in000003.ppm"]
    assert descriptor.temporal_roi == (2, 3)
    assert not descriptor.in_temporal_roi(1)
    assert descriptor.in_temporal_roi(3)


def test_discover_rejects_duplicate_frame_index(tmp_path):
    root = tmp_path / "seq"
    write_sequence(root, frames=2)
    (root / "input" / "in1.ppm").write_bytes((root / "input" / "in000001.ppm").read_bytes())

    with pytest.raises(LayoutError):
        discover_cdnet_sequence(root)


def test_discover_requires_input_dir(tmp_path):
    (tmp_path / "seq").mkdir()

    with pytest.raises(LayoutError):
        discover_cdnet_sequence(tmp_path / "seq")


def test_temporal_roi_must_be_two_integers(tmp_path):
    path = tmp_path / "temporalROI.txt"
    path.write_text("10\n", encoding="utf-8")

    with pytest.raises(LayoutError):
        read_temporal_roi(path)


def test_discover_sequences_walks_category_tree(tmp_path):
    write_sequence(tmp_path / "baseline" / "highway", frames=1)
    write_sequence(tmp_path / "baseline" / "office", frames=1)
    write_sequence(tmp_path / "shadow" / "cubicle", frames=1)

    descriptors = discover_sequences(tmp_path)

    assert [(d.category, d.name) for d in descriptors] == [
        ("baseline", "highway"),
        ("baseline", "office"),
        ("shadow", "cubicle"),
    ]


def test_discover_sequences_on_empty_tree(tmp_path):
    with pytest.raises(LayoutError):
        discover_sequences(tmp_path)


def test_load_sequence_reads_all_rasters(tmp_path):
    root = tmp_path / "seq"
    write_sequence(root, frames=3, size=(4, 5))

    sequence = load_sequence(discover_cdnet_sequence(root))

    assert sequence.shape == (4, 5)
    assert len(sequence.frames) == 3
    assert sorted(sequence.ground_truth) == [1, 2, 3]
    assert sorted(sequence.semantic_maps) == [1, 2, 3]
    assert sequence.roi_mask is None

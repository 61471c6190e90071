import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from dilated_depth import DepthMap, DigestError, FormatError, ParseError
from dilated_depth import data_io as io


def test_hand_encoded_payload(tmp_path):
    path = tmp_path / "t.rdt"
    io.save_tensor(np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32), path)
    raw = path.read_bytes()
    assert raw[:4] == b"RDT1"
    assert struct.unpack("<IIII", raw[4:20]) == (2, 2, 2, 1)
    assert raw[20:].hex() == "0000803f" "00000040" "00004040" "00008040"
    assert len(raw) == 20 + 16


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_round_trip_bit_exact(tmp_path, rng, dtype):
    x = rng.standard_normal((2, 3, 4, 5)).astype(dtype)
    x.ravel()[:3] = [np.inf, -0.0, np.nan]
    io.save_tensor(x, tmp_path / "x.rdt")
    y = io.load_tensor(tmp_path / "x.rdt")
    assert y.dtype == dtype and y.shape == x.shape
    assert y.tobytes() == x.tobytes()


@settings(max_examples=50, deadline=None)
@given(
    hnp.arrays(
        dtype=st.sampled_from([np.float32, np.float64]),
        shape=hnp.array_shapes(min_dims=1, max_dims=4, min_side=1, max_side=5),
        elements={"allow_nan": True, "allow_infinity": True},
    )
)
def test_round_trip_property(tmp_path_factory, array):
    path = tmp_path_factory.mktemp("rt") / "a.rdt"
    io.save_tensor(array, path)
    back = io.load_tensor(path)
    assert back.dtype == array.dtype and back.shape == array.shape
    assert back.tobytes() == np.ascontiguousarray(array).tobytes()


def test_wrong_magic(tmp_path):
    path = tmp_path / "bad.rdt"
    path.write_bytes(b"RDT2" + io.encode_tensor(np.zeros(2))[4:])
    with pytest.raises(FormatError, match="magic"):
        io.load_tensor(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "short.rdt"
    path.write_bytes(io.encode_tensor(np.zeros((2, 2)))[:-1])
    with pytest.raises(FormatError, match="31 bytes, expected 32"):
        io.load_tensor(path)


def test_overflowing_dims_rejected_before_reading(tmp_path):
    path = tmp_path / "huge.rdt"
    path.write_bytes(b"RDT1" + struct.pack("<IIII", 2, 65536, 65536, 1) + b"\0" * 8)
    with pytest.raises(FormatError, match="32 bits"):
        io.load_tensor(path)


def test_unknown_dtype_code(tmp_path):
    path = tmp_path / "code.rdt"
    path.write_bytes(b"RDT1" + struct.pack("<III", 1, 1, 3) + b"\0" * 4)
    with pytest.raises(FormatError, match="dtype code"):
        io.load_tensor(path)


def test_depth_sentinel_survives(tmp_path):
    depth = DepthMap.from_values(np.array([[[[1.5, 0.0], [-1.0, 2.0]]]]))
    io.save_tensor(depth, tmp_path / "d.rdt")
    back = io.load_depth(tmp_path / "d.rdt")
    assert back.mask.ravel().tolist() == [True, False, False, True]
    np.testing.assert_array_equal(back.values[back.mask], [1.5, 2.0])


def test_missing_tensor_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        io.load_tensor(tmp_path / "nope.rdt")


def write_pair(tmp_path, stem, rng):
    img, dep = tmp_path / f"{stem}_i.rdt", tmp_path / f"{stem}_d.rdt"
    io.save_tensor(rng.random((3, 4, 4)), img)
    io.save_tensor(rng.uniform(1, 2, (1, 1, 4, 4)), dep)
    return img.name, dep.name


def test_empty_manifest(tmp_path):
    (tmp_path / "m.csv").write_text("")
    assert io.load_manifest(tmp_path / "m.csv") == []


def test_manifest_order_and_pairs(tmp_path, rng):
    lines = []
    for k, split in enumerate(["train", "test", "train"]):
        img, dep = write_pair(tmp_path, f"p{k}", rng)
        lines.append(f"{img},{dep},{split}\n")
    (tmp_path / "m.csv").write_text("".join(lines))
    records = io.load_manifest(tmp_path / "m.csv")
    assert [r.image.name for r in records] == ["p0_i.rdt", "p1_i.rdt", "p2_i.rdt"]
    assert [r.split for r in records] == ["train", "test", "train"]
    images, depth = io.load_pairs(records)
    assert images.shape == (3, 3, 4, 4) and depth.shape == (3, 1, 4, 4)


def test_manifest_two_fields(tmp_path, rng):
    img, dep = write_pair(tmp_path, "a", rng)
    (tmp_path / "m.csv").write_text(f"{img},{dep},train\n{img},{dep}\n")
    with pytest.raises(ParseError) as info:
        io.load_manifest(tmp_path / "m.csv")
    assert info.value.line == 2


def test_manifest_duplicate_image(tmp_path, rng):
    img, dep = write_pair(tmp_path, "a", rng)
    (tmp_path / "m.csv").write_text(f"{img},{dep},train\n{img},{dep},test\n")
    with pytest.raises(ParseError):
        io.load_manifest(tmp_path / "m.csv")


def test_manifest_dangling_path(tmp_path, rng):
    img, _ = write_pair(tmp_path, "a", rng)
    (tmp_path / "m.csv").write_text(f"{img},missing.rdt,train\n")
    with pytest.raises(io.MissingFileError, match="missing.rdt"):
        io.load_manifest(tmp_path / "m.csv")


def test_manifest_write_read(tmp_path, rng):
    img, dep = write_pair(tmp_path, "a", rng)
    records = [io.ManifestRecord(tmp_path / img, tmp_path / dep, "test")]
    io.write_manifest(tmp_path / "m.csv", records)
    assert io.load_manifest(tmp_path / "m.csv") == records


def test_checkpoint_round_trip(tmp_path, rng):
    state = {"a.weight": rng.standard_normal((2, 3)), "b": rng.standard_normal(4).astype(np.float32)}
    io.save_checkpoint(tmp_path / "ck", state, "bins = 50\n")
    back, text = io.load_checkpoint(tmp_path / "ck")
    assert text == "bins = 50\n"
    for k in state:
        assert back[k].tobytes() == state[k].tobytes()


def test_checkpoint_digest_mismatch(tmp_path):
    io.save_checkpoint(tmp_path / "ck", {"x": np.zeros(1)}, "bins = 50\n")
    (tmp_path / "ck" / "config.txt").write_text("bins = 200\n")
    with pytest.raises(DigestError):
        io.load_checkpoint(tmp_path / "ck")

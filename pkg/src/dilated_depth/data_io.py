"""RDT1 tensor files, RGB-D pair manifests and network checkpoints.

RDT1 layout, all integers unsigned 32-bit little-endian::

    b"RDT1" | ndim | dims[0] .. dims[ndim-1] | dtype code | payload

dtype code 1 is IEEE-754 binary32, 2 is binary64; the payload is the
row-major little-endian array. Depth maps store invalid pixels as 0.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .depth_head import DepthMap
from .errors import DepthError, DigestError, FormatError, ParseError

MAGIC = b"RDT1"
MAX_NDIM = 8
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class MissingFileError(DepthError, FileNotFoundError):
    """A manifest or checkpoint refers to a file that does not exist."""


def encode_tensor(array) -> bytes:
    if isinstance(array, DepthMap):
        array = array.to_sentinel()
    array = np.asarray(array)
    if array.dtype not in _CODES:
        if array.dtype.kind in "iub":
            array = array.astype(np.float64)
        else:
            raise FormatError(f"cannot store dtype {array.dtype}; use float32 or float64")
    if not 1 <= array.ndim <= MAX_NDIM:
        raise FormatError(f"cannot store a {array.ndim}-dimensional array")
    if any(d >= 2**32 for d in array.shape):
        raise FormatError(f"dimension too large for RDT1: {array.shape}")
    code = _CODES[array.dtype]
    header = MAGIC + struct.pack(f"<I{array.ndim}II", array.ndim, *array.shape, code)
    return header + np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes()


def save_tensor(array, path) -> None:
    path = Path(path)
    data = encode_tensor(array)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write tensor file: {exc.strerror}", str(path)) from exc


def _read_exact(fh, n: int, what: str, path) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"{path}: truncated {what}: expected {n} bytes, got {len(data)}")
    return data


def load_tensor(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"tensor file not found: {path}")
    with open(path, "rb") as fh:
        size = os.fstat(fh.fileno()).st_size
        if _read_exact(fh, 4, "magic", path) != MAGIC:
            raise FormatError(f"{path}: bad magic, not an RDT1 file")
        (ndim,) = struct.unpack("<I", _read_exact(fh, 4, "header", path))
        if not 1 <= ndim <= MAX_NDIM:
            raise FormatError(f"{path}: unsupported ndim {ndim}")
        dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "dims", path))
        (code,) = struct.unpack("<I", _read_exact(fh, 4, "dtype code", path))
        if code not in _DTYPES:
            raise FormatError(f"{path}: unknown dtype code {code}")
        count = 1
        for d in dims:
            count *= d
        if count >= 2**32:
            raise FormatError(f"{path}: dims {dims} hold {count} elements, more than 32 bits allow")
        dtype = _DTYPES[code]
        expected = count * dtype.itemsize
        available = size - fh.tell()
        if available != expected:
            raise FormatError(f"{path}: payload has {available} bytes, expected {expected} for dims {dims}")
        payload = _read_exact(fh, expected, "payload", path)
    array = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return array.astype(dtype.newbyteorder("="))


def load_depth(path) -> DepthMap:
    """Load a depth map as (n, 1, h, w); non-positive pixels are invalid."""
    values = load_tensor(path).astype(np.float64)
    if values.ndim == 2:
        values = values[None, None]
    elif values.ndim == 3:
        values = values[None]
    if values.ndim != 4 or values.shape[1] != 1:
        raise FormatError(f"{path}: depth tensor has shape {values.shape}, expected (n, 1, h, w)")
    return DepthMap.from_values(values)


def load_image(path) -> np.ndarray:
    """Load an image tensor as (n, c, h, w)."""
    image = load_tensor(path)
    if image.ndim == 3:
        image = image[None]
    if image.ndim != 4:
        raise FormatError(f"{path}: image tensor has shape {image.shape}, expected (c, h, w) or (n, c, h, w)")
    return image


# ---------------------------------------------------------------------------
# manifests

SPLITS = ("train", "test")


@dataclass(frozen=True)
class ManifestRecord:
    image: Path
    depth: Path
    split: str


def load_manifest(path, check_files: bool = True) -> list[ManifestRecord]:
    """Parse ``image,depth,split`` lines; relative paths resolve against the manifest."""
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"manifest not found: {path}")
    base = path.parent
    records = []
    seen = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise ParseError(f"expected 3 comma-separated fields, got {len(parts)}", lineno)
        image, depth, split = parts
        if not image or not depth:
            raise ParseError("empty path field", lineno)
        if split not in SPLITS:
            raise ParseError(f"split must be one of {SPLITS}, got {split!r}", lineno)
        image_path = base / image
        if image_path in seen:
            raise ParseError(f"image {image} already listed on line {seen[image_path]}", lineno)
        seen[image_path] = lineno
        record = ManifestRecord(image_path, base / depth, split)
        if check_files:
            for p in (record.image, record.depth):
                if not p.exists():
                    raise MissingFileError(f"line {lineno}: file not found: {p}")
        records.append(record)
    return records


def write_manifest(path, records) -> None:
    path = Path(path)
    lines = []
    for r in records:
        image = os.path.relpath(r.image, path.parent)
        depth = os.path.relpath(r.depth, path.parent)
        lines.append(f"{image},{depth},{r.split}\n")
    path.write_text("".join(lines))


def load_pairs(records) -> tuple[np.ndarray, DepthMap]:
    """Stack manifest records into an image batch and a depth batch."""
    images, depths = [], []
    for r in records:
        images.append(load_image(r.image))
        depths.append(load_depth(r.depth))
    if not images:
        raise FormatError("no records to load")
    try:
        stacked = np.concatenate(images)
        values = np.concatenate([d.values for d in depths])
        mask = np.concatenate([d.mask for d in depths])
    except ValueError as exc:
        raise FormatError(f"manifest tensors disagree in shape: {exc}") from None
    if stacked.shape[0] != values.shape[0] or stacked.shape[2:] != values.shape[2:]:
        raise FormatError(f"images {stacked.shape} and depths {values.shape} do not align")
    return stacked, DepthMap(values, mask)


# ---------------------------------------------------------------------------
# checkpoints

CONFIG_FILE = "config.txt"
DIGEST_FILE = "config.digest"


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def save_checkpoint(directory, state: dict[str, np.ndarray], config_text: str) -> Path:
    """Write one RDT1 file per named tensor plus the config and its digest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = sorted(state)
    for name in names:
        save_tensor(state[name], directory / f"{name}.rdt")
    (directory / "tensors.txt").write_text("".join(f"{n}\n" for n in names))
    (directory / CONFIG_FILE).write_text(config_text)
    (directory / DIGEST_FILE).write_text(text_digest(config_text) + "\n")
    return directory


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], str]:
    """Return ``(state, config_text)``; raises DigestError on a digest mismatch."""
    directory = Path(directory)
    index = directory / "tensors.txt"
    for required in (index, directory / CONFIG_FILE, directory / DIGEST_FILE):
        if not required.exists():
            raise MissingFileError(f"checkpoint file not found: {required}")
    config_text = (directory / CONFIG_FILE).read_text()
    digest = (directory / DIGEST_FILE).read_text().strip()
    if digest != text_digest(config_text):
        raise DigestError(f"{directory}: config digest mismatch; checkpoint and config disagree")
    state = {}
    for name in index.read_text().split():
        state[name] = load_tensor(directory / f"{name}.rdt")
    return state, config_text

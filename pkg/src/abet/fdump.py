"""FDUMP: bit-exact binary container for feature/score arrays.

Layout, little-endian throughout::

    magic     8 bytes   b"ABETFTR1"
    count     u32       number of arrays
    per array:
        name_len  u16
        name      name_len bytes, UTF-8, unique within the file
        rank      u32
        dims      rank x u64
        data      prod(dims) x f64
    has_labels  u8
    if has_labels == 1:
        count   u64
        labels  count x u32

Round trips are bit-exact for every finite double, signed zeros included.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, FormatError

MAGIC = b"ABETFTR1"


@dataclass
class FeatureDump:
    """Named float64 arrays plus optional class labels."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    labels: np.ndarray | None = None

    def __post_init__(self):
        clean: dict[str, np.ndarray] = {}
        for name, arr in self.arrays.items():
            if not name:
                raise DomainError("array names must be non-empty")
            a = np.asarray(arr, dtype=np.float64)
            if a.size and not np.all(np.isfinite(a)):
                raise DomainError(f"array {name!r} contains non-finite values")
            clean[name] = a
        self.arrays = clean
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.ndim != 1:
                raise DomainError("labels must be 1-D")
            if lab.size and (lab.min() < 0 or lab.max() > 0xFFFFFFFF):
                raise DomainError("labels must fit in u32")
            self.labels = lab.astype(np.uint32)

    def require(self, *names: str) -> list[np.ndarray]:
        """Return the named arrays, raising FormatError for any missing one."""
        missing = [n for n in names if n not in self.arrays]
        if missing:
            raise FormatError(f"dump is missing required array(s): {', '.join(missing)}")
        return [self.arrays[n] for n in names]


def write_fdump(dump: FeatureDump, path) -> None:
    """Serialize a FeatureDump to `path`."""
    chunks = [MAGIC, struct.pack("<I", len(dump.arrays))]
    for name, arr in dump.arrays.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise DomainError(f"array name too long: {name[:32]}...")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    if dump.labels is None:
        chunks.append(struct.pack("<B", 0))
    else:
        chunks.append(struct.pack("<B", 1))
        chunks.append(struct.pack("<Q", dump.labels.size))
        chunks.append(np.ascontiguousarray(dump.labels, dtype="<u4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.path = path
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"{self.path}: truncated {what} at offset {self.pos} "
                f"(need {n} bytes, have {len(self.data) - self.pos})"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        raw = self.take(struct.calcsize(fmt), what)
        return struct.unpack(fmt, raw)


def read_fdump(path) -> FeatureDump:
    """Parse an FDUMP file, validating structure as it goes."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0")
    (count,) = reader.unpack("<I", "array count")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H", "name length")
        try:
            name = reader.take(name_len, "array name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: array name is not valid UTF-8") from exc
        if name in arrays:
            raise FormatError(f"{path}: duplicate array name {name!r}")
        (rank,) = reader.unpack("<I", f"rank of {name!r}")
        dims = reader.unpack(f"<{rank}Q", f"dims of {name!r}") if rank else ()
        total = 1
        for d in dims:
            total *= d
        if total > len(reader.data):  # cheap bound before allocating
            raise FormatError(f"{path}: truncated payload of {name!r} at offset {reader.pos}")
        raw = reader.take(8 * total, f"payload of {name!r}")
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
        if arr.size and not np.all(np.isfinite(arr)):
            raise FormatError(f"{path}: array {name!r} contains non-finite values")
        arrays[name] = arr
    (flag,) = reader.unpack("<B", "labels flag")
    labels = None
    if flag == 1:
        (n,) = reader.unpack("<Q", "label count")
        raw = reader.take(4 * n, "labels")
        labels = np.frombuffer(raw, dtype="<u4").astype(np.uint32)
    elif flag != 0:
        raise FormatError(f"{path}: labels flag must be 0 or 1, got {flag}")
    if reader.pos != len(reader.data):
        raise FormatError(f"{path}: {len(reader.data) - reader.pos} trailing bytes at offset {reader.pos}")
    return FeatureDump(arrays=arrays, labels=labels)

#!/usr/bin/env python3
"""
.nzwt weight files.

    magic     4s   b"NZWT"
    version   u16
    count     u32
    per parameter:
        name_len u16, name utf-8 ("<section>/<dotted.name>")
        rank     u8,  extents u32 * rank
        data     little-endian float32, row-major

All integers are little-endian.
"""

import hashlib
import logging
import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

from errors import VersionMismatchError, WeightFormatError

logger = logging.getLogger(__name__)

MAGIC = b"NZWT"
VERSION = 1
DIGEST_BYTES = 16

Sections = Dict[str, Dict[str, np.ndarray]]


def serialize_weights(sections: Sections) -> bytes:
    """Pack {section: {name: array}} into .nzwt bytes, in sorted order"""
    entries = []
    for section in sorted(sections):
        if "/" in section:
            raise WeightFormatError(f"Section tag may not contain '/': {section}")
        for name in sorted(sections[section]):
            entries.append((f"{section}/{name}", np.asarray(sections[section][name])))

    parts = [MAGIC, struct.pack("<HI", VERSION, len(entries))]
    for full_name, array in entries:
        encoded = full_name.encode("utf-8")
        if len(encoded) > 0xFFFF or array.ndim > 0xFF:
            raise WeightFormatError(f"Parameter {full_name} cannot be stored")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<B{array.ndim}I", array.ndim, *array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(parts)


def deserialize_weights(data: bytes) -> Sections:
    view = memoryview(data)
    if len(view) < 10 or bytes(view[:4]) != MAGIC:
        raise WeightFormatError("Not an .nzwt file (bad magic)")
    version, count = struct.unpack_from("<HI", view, 4)
    if version != VERSION:
        raise VersionMismatchError(f"Weight file version {version}, expected {VERSION}")

    offset = 10
    sections: Sections = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", view, offset)
            offset += 2
            full_name = bytes(view[offset:offset + name_len]).decode("utf-8")
            if len(full_name.encode("utf-8")) != name_len:
                raise WeightFormatError("Truncated parameter name")
            offset += name_len
            (rank,) = struct.unpack_from("<B", view, offset)
            offset += 1
            shape = struct.unpack_from(f"<{rank}I", view, offset)
            offset += 4 * rank
            nbytes = 4 * int(np.prod(shape, dtype=np.int64))
            if offset + nbytes > len(view):
                raise WeightFormatError(f"Data of {full_name} runs past the end of the file")
            array = np.frombuffer(view[offset:offset + nbytes], dtype="<f4").reshape(shape)
            offset += nbytes

            section, sep, name = full_name.partition("/")
            if not sep:
                raise WeightFormatError(f"Parameter {full_name} has no section tag")
            if name in sections.setdefault(section, {}):
                raise WeightFormatError(f"Duplicate parameter {full_name}")
            sections[section][name] = array.astype(np.float32)
    except (struct.error, UnicodeDecodeError) as e:
        raise WeightFormatError(f"Malformed weight file: {e}") from e

    if offset != len(view):
        raise WeightFormatError(f"{len(view) - offset} trailing bytes after {count} parameters")
    return sections


def save_weights(path: Union[str, Path], sections: Sections) -> bytes:
    data = serialize_weights(sections)
    Path(path).write_bytes(data)
    logger.info(f"💾 Saved {sum(len(s) for s in sections.values())} tensors to {path}")
    return data


def load_weights(path: Union[str, Path]) -> Sections:
    return deserialize_weights(Path(path).read_bytes())


def digest(data: bytes) -> bytes:
    """First 16 bytes of SHA-256 of a weight file"""
    return hashlib.sha256(data).digest()[:DIGEST_BYTES]

"""
Binary checkpoint format for MLP parameters.

Layout (all integers 32-bit little-endian unsigned):
    b"SMRT" | version | then until end of file, per tensor:
    name length | UTF-8 name | rank | dims... | float64 LE values, row-major
"""

import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

from src.exceptions import CheckpointError
from src.logging_config import get_logger
from src.nn import LinearLayer, Mlp, LEAKY_SLOPE

MAGIC = b"SMRT"
FORMAT_VERSION = 1

_U32 = struct.Struct('<I')

logger = get_logger(__name__)


def encode_tensors(tensors: Dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, _U32.pack(FORMAT_VERSION)]
    for name, value in tensors.items():
        encoded_name = name.encode('utf-8')
        array = np.asarray(value, dtype="<f8")
        chunks.append(_U32.pack(len(encoded_name)))
        chunks.append(encoded_name)
        chunks.append(_U32.pack(array.ndim))
        chunks.extend(_U32.pack(dim) for dim in array.shape)
        chunks.append(array.tobytes(order='C'))
    return b''.join(chunks)


def decode_tensors(data: bytes, source: str = "<bytes>") -> Dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic {data[:4]!r})", path=source)

    def read_u32(offset: int) -> int:
        if offset + 4 > len(data):
            raise CheckpointError(f"{source}: truncated at byte {offset}", path=source)
        return _U32.unpack_from(data, offset)[0]

    version = read_u32(4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unsupported format version {version}", path=source)

    tensors: Dict[str, np.ndarray] = {}
    offset = 8
    while offset < len(data):
        name_len = read_u32(offset)
        offset += 4
        if offset + name_len > len(data):
            raise CheckpointError(f"{source}: truncated tensor name at byte {offset}", path=source)
        try:
            name = data[offset:offset + name_len].decode('utf-8')
        except UnicodeDecodeError as e:
            raise CheckpointError(f"{source}: tensor name at byte {offset} is not UTF-8", path=source,
                                  original_error=e) from e
        offset += name_len

        rank = read_u32(offset)
        offset += 4
        dims = []
        for _ in range(rank):
            dims.append(read_u32(offset))
            offset += 4

        count = 1
        for dim in dims:
            count *= dim
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError(f"{source}: truncated values of tensor {name!r}", path=source)
        values = np.frombuffer(data, dtype='<f8', count=count, offset=offset)
        tensors[name] = values.astype(np.float64).reshape(tuple(dims))
        offset = end
    return tensors


def save_checkpoint(path: Union[str, Path], tensors: Dict[str, np.ndarray]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_tensors(tensors))
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}", path=str(path), original_error=e)
    logger.debug(f"Wrote {len(tensors)} tensors to {path}")


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}", path=str(path))
    return decode_tensors(path.read_bytes(), source=str(path))


def mlp_tensors(net: Mlp, prefix: str) -> Dict[str, np.ndarray]:
    """Name every parameter of ``net`` under ``prefix`` (e.g. ``gen.``)."""
    return {f"{prefix}{name}": value for name, value, _, _, _ in net.parameters()}


def mlp_from_tensors(tensors: Dict[str, np.ndarray], prefix: str, name: str = "mlp",
                     slope: float = LEAKY_SLOPE) -> Mlp:
    """Rebuild an MLP from the numbered layer tensors stored under ``prefix``.

    Other tensors under the prefix (scalar metadata) are ignored.
    """
    segments = (key[len(prefix):].split('.')[0] for key in tensors if key.startswith(prefix))
    indices = sorted({int(segment) for segment in segments if segment.isdigit()})
    if not indices:
        raise CheckpointError(f"no tensors with prefix {prefix!r}")
    if indices != list(range(len(indices))):
        raise CheckpointError(f"layer indices under {prefix!r} are not contiguous: {indices}")

    layers = []
    for k in indices:
        try:
            weight = tensors[f"{prefix}{k}.weight"]
            bias = tensors[f"{prefix}{k}.bias"]
        except KeyError as e:
            raise CheckpointError(f"missing tensor {e.args[0]!r}")
        layers.append(LinearLayer(weight=weight, bias=bias, name=str(k)))
    return Mlp(layers, slope=slope, name=name)

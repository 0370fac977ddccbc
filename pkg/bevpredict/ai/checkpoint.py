"""
Checkpoint persistence

Binary layout (little-endian):

    magic b"BEVF" | u16 version
    u32 depth | u32 base_features | u32 in_channels | u32 out_channels | u8 head
    u64 iteration
    u32 tensor count, then per tensor: u8 ndim | u32 dims[ndim] | float32 data
    u8 has_momentum, then the momentum buffers in the same order and layout

Tensors appear in network parameter order, so names are implied by the NetSpec.
"""

import struct
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from bevpredict.ai.network import Network, build_layers
from bevpredict.models import HeadType, NetSpec
from bevpredict.utils.errors import (
    CheckpointError,
    CheckpointMagicError,
    CheckpointTrailingDataError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)

MAGIC = b"BEVF"
VERSION = 1

_HEADS: List[HeadType] = [HeadType.LINEAR, HeadType.TANH, HeadType.CLIPPED_RELU]


@dataclass
class Checkpoint:
    """Network spec, parameters, momentum buffers and iteration counter"""

    spec: NetSpec
    params: Dict[str, np.ndarray]
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)
    iteration: int = 0

    @classmethod
    def from_network(cls, net: Network, velocity: Dict[str, np.ndarray] = None,
                     iteration: int = 0) -> "Checkpoint":
        return cls(
            spec=net.spec,
            params={k: v.copy() for k, v in net.params.items()},
            velocity={k: v.copy() for k, v in (velocity or {}).items()},
            iteration=iteration,
        )

    def to_network(self) -> Network:
        return Network(
            self.spec,
            build_layers(self.spec),
            {k: v.copy() for k, v in self.params.items()},
        )

    def identical_to(self, other: "Checkpoint") -> bool:
        """Bitwise comparison of every field"""
        return save_checkpoint(self) == save_checkpoint(other)


def _expected_shapes(spec: NetSpec) -> List[Tuple[str, Tuple[int, ...]]]:
    return [
        (name, shape)
        for layer in build_layers(spec)
        for name, shape in layer.param_shapes().items()
    ]


def _pack_tensor(array: np.ndarray) -> bytes:
    header = struct.pack("<B", array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype="<f4").tobytes()


def save_checkpoint(ckpt: Checkpoint) -> bytes:
    spec = ckpt.spec
    parts = [
        MAGIC,
        struct.pack("<H", VERSION),
        struct.pack("<IIIIB", spec.depth, spec.base_features, spec.in_channels,
                    spec.out_channels, _HEADS.index(spec.head)),
        struct.pack("<Q", ckpt.iteration),
    ]

    names = [name for name, _ in _expected_shapes(spec)]
    parts.append(struct.pack("<I", len(names)))
    parts.extend(_pack_tensor(ckpt.params[name]) for name in names)

    parts.append(struct.pack("<B", 1 if ckpt.velocity else 0))
    if ckpt.velocity:
        parts.extend(_pack_tensor(ckpt.velocity[name]) for name in names)

    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(
                f"checkpoint truncated at byte {len(self.data)}, needed {self.pos + n}"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensor(self, name: str, shape: Tuple[int, ...]) -> np.ndarray:
        (ndim,) = self.unpack("<B")
        dims = self.unpack(f"<{ndim}I")
        if tuple(dims) != tuple(shape):
            raise CheckpointError(f"tensor {name} has shape {dims}, spec expects {shape}")
        count = int(np.prod(dims))
        return np.frombuffer(self.take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)


def load_checkpoint(data: bytes) -> Checkpoint:
    reader = _Reader(data)

    magic = reader.take(len(MAGIC))
    if magic != MAGIC:
        raise CheckpointMagicError(f"not a checkpoint: magic {magic!r}, expected {MAGIC!r}")
    (version,) = reader.unpack("<H")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, supported {VERSION}")

    depth, base_features, in_channels, out_channels, head = reader.unpack("<IIIIB")
    if head >= len(_HEADS):
        raise CheckpointError(f"unknown head code {head}")
    spec = NetSpec(depth=depth, base_features=base_features, in_channels=in_channels,
                   out_channels=out_channels, head=_HEADS[head])
    (iteration,) = reader.unpack("<Q")

    expected = _expected_shapes(spec)
    (count,) = reader.unpack("<I")
    if count != len(expected):
        raise CheckpointError(f"checkpoint holds {count} tensors, spec expects {len(expected)}")
    params = {name: reader.tensor(name, shape) for name, shape in expected}

    (has_momentum,) = reader.unpack("<B")
    velocity = {}
    if has_momentum:
        velocity = {name: reader.tensor(name, shape) for name, shape in expected}

    if reader.pos != len(data):
        raise CheckpointTrailingDataError(
            f"checkpoint has {len(data) - reader.pos} unexpected byte(s) after offset {reader.pos}"
        )

    return Checkpoint(spec=spec, params=params, velocity=velocity, iteration=iteration)

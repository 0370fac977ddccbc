"""
On-disk formats: scene record text, binary PGM images and raw stack files

Scene records (text, one token-separated record per line):

    #bevpredict-scene v1 rate_hz=<r> extent_x=<m> extent_y=<m>
    F <t_index> <n_vehicles>
    V <id> <cx> <cy> <w> <h> <vx|nan> <vy|nan>      (n_vehicles lines)

Stack files (little-endian):

    magic b"BEVS" | u16 version | u32 d | u32 h | u32 w | f64 dt_s | u8 has_target
    d*h*w float32 input channels, row-major
    d*h*w float32 target channels when has_target == 1
"""

import math
import re
import struct
from typing import List, Optional, Tuple

import numpy as np

from bevpredict.models import BevGrid, Frame, GridSpec, SampleStack, SceneSequence, VehicleState
from bevpredict.utils.errors import ImageFormatError, SceneFormatError, StackFormatError

SCENE_HEADER = "#bevpredict-scene v1"

STACK_MAGIC = b"BEVS"
STACK_VERSION = 1
_STACK_HEADER = struct.Struct("<4sHIIIdB")


# ---------------------------------------------------------------------------
# Scene records
# ---------------------------------------------------------------------------

def _fmt(value: Optional[float]) -> str:
    return "nan" if value is None else repr(float(value))


def _opt(token: str) -> Optional[float]:
    value = float(token)
    return None if math.isnan(value) else value


def write_scene(seq: SceneSequence) -> str:
    """Serialize a sequence; floats use shortest round-trip text"""

    lines = [
        f"{SCENE_HEADER} rate_hz={seq.rate_hz!r} "
        f"extent_x={seq.extent_x!r} extent_y={seq.extent_y!r}"
    ]
    for frame in seq.frames:
        lines.append(f"F {frame.t_index} {len(frame.vehicles)}")
        for v in frame.vehicles:
            lines.append(
                f"V {v.id} {_fmt(v.cx)} {_fmt(v.cy)} {_fmt(v.w)} {_fmt(v.h)} "
                f"{_fmt(v.vx)} {_fmt(v.vy)}"
            )
    return "\n".join(lines) + "\n"


def read_scene(text: str) -> SceneSequence:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or not lines[0].startswith(SCENE_HEADER):
        raise SceneFormatError(f"scene file must start with '{SCENE_HEADER}'")

    meta = dict(re.findall(r"(\w+)=(\S+)", lines[0][len(SCENE_HEADER):]))
    try:
        rate_hz = float(meta["rate_hz"])
        extent_x = float(meta.get("extent_x", 512.0))
        extent_y = float(meta.get("extent_y", 32.0))
    except (KeyError, ValueError) as e:
        raise SceneFormatError(f"bad scene header: {lines[0]!r}") from e

    frames: List[Frame] = []
    i = 1
    while i < len(lines):
        tokens = lines[i].split()
        if len(tokens) != 3 or tokens[0] != "F":
            raise SceneFormatError(f"line {i + 1}: expected frame record, got {lines[i]!r}")
        try:
            t_index, count = int(tokens[1]), int(tokens[2])
        except ValueError as e:
            raise SceneFormatError(f"line {i + 1}: {e}") from e
        if count > len(lines) - i - 1:
            raise SceneFormatError(f"line {i + 1}: frame declares {count} vehicles past end of file")
        vehicles = []
        for j in range(i + 1, i + 1 + count):
            tokens = lines[j].split()
            if len(tokens) != 8 or tokens[0] != "V":
                raise SceneFormatError(f"line {j + 1}: expected vehicle record, got {lines[j]!r}")
            try:
                vehicles.append(VehicleState(
                    id=int(tokens[1]),
                    cx=float(tokens[2]), cy=float(tokens[3]),
                    w=float(tokens[4]), h=float(tokens[5]),
                    vx=_opt(tokens[6]), vy=_opt(tokens[7]),
                ))
            except ValueError as e:
                raise SceneFormatError(f"line {j + 1}: {e}") from e
        frames.append(Frame(t_index=t_index, vehicles=vehicles))
        i += 1 + count

    return SceneSequence(frames=frames, rate_hz=rate_hz, extent_x=extent_x, extent_y=extent_y)


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

def quantize(values: np.ndarray) -> np.ndarray:
    """round(255 * p) with halves rounded up, clipped to 0..255"""
    scaled = np.floor(np.asarray(values, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def write_image(grid: BevGrid) -> bytes:
    """8-bit binary portable graymap (P5)"""

    h, w = grid.values.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    return header + quantize(grid.values).tobytes()


def _pgm_tokens(data: bytes, count: int) -> Tuple[List[bytes], int]:
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("PGM header ends early")
        tokens.append(data[start:pos])
    # Exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_image(data: bytes, spec: Optional[GridSpec] = None) -> BevGrid:
    """Decode a binary PGM into a grid with values = byte / maxval"""

    tokens, offset = _pgm_tokens(data, 4)
    if tokens[0] != b"P5":
        raise ImageFormatError(f"expected binary PGM magic 'P5', got {tokens[0]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise ImageFormatError("PGM header holds a non-integer field") from e
    if not 0 < maxval < 256:
        raise ImageFormatError(f"only 8-bit PGM is supported (maxval={maxval})")

    raster = np.frombuffer(data, dtype=np.uint8, count=-1, offset=offset)
    if raster.size < w * h:
        raise ImageFormatError(f"PGM raster holds {raster.size} bytes, expected {w * h}")

    if spec is None:
        spec = GridSpec(width_px=w, height_px=h)
    elif spec.shape != (h, w):
        spec = spec.model_copy(update={"width_px": w, "height_px": h})

    values = raster[: w * h].reshape(h, w).astype(np.float64) / maxval
    return BevGrid(spec, values)


# ---------------------------------------------------------------------------
# Stacks
# ---------------------------------------------------------------------------

def write_stack(inputs: np.ndarray, dt_s: float, targets: Optional[np.ndarray] = None) -> bytes:
    if inputs.ndim != 3:
        raise StackFormatError(f"stack must be (d, h, w), got shape {inputs.shape}")
    if targets is not None and targets.shape != inputs.shape:
        raise StackFormatError(f"target shape {targets.shape} != input shape {inputs.shape}")

    d, h, w = inputs.shape
    parts = [
        _STACK_HEADER.pack(STACK_MAGIC, STACK_VERSION, d, h, w, float(dt_s), targets is not None),
        np.ascontiguousarray(inputs, dtype="<f4").tobytes(),
    ]
    if targets is not None:
        parts.append(np.ascontiguousarray(targets, dtype="<f4").tobytes())
    return b"".join(parts)


def read_stack(data: bytes) -> Tuple[np.ndarray, Optional[np.ndarray], float]:
    """Returns (inputs, targets or None, dt_s)"""

    if len(data) < _STACK_HEADER.size:
        raise StackFormatError("stack file shorter than its header")
    magic, version, d, h, w, dt_s, has_target = _STACK_HEADER.unpack_from(data)
    if magic != STACK_MAGIC:
        raise StackFormatError(f"bad stack magic {magic!r}")
    if version != STACK_VERSION:
        raise StackFormatError(f"unsupported stack version {version}")

    n = d * h * w
    blocks = 2 if has_target else 1
    expected = _STACK_HEADER.size + 4 * n * blocks
    if len(data) < expected:
        raise StackFormatError(f"stack file truncated: {len(data)} of {expected} bytes")

    payload = np.frombuffer(data, dtype="<f4", count=n * blocks, offset=_STACK_HEADER.size)
    inputs = payload[:n].reshape(d, h, w).astype(np.float32)
    targets = payload[n:].reshape(d, h, w).astype(np.float32) if has_target else None
    return inputs, targets, dt_s


def stack_bytes(sample: SampleStack) -> bytes:
    return write_stack(sample.inputs, sample.dt_s, sample.targets)

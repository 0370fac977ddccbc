"""
Scene sources: HighD track ingestion, temporal downsampling, train/test
split and a synthetic two-stream highway
"""

import io
import logging
import re
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from bevpredict.models import DatasetStats, Frame, SceneSequence, SynthConfig, VehicleState
from bevpredict.utils.errors import InvalidArgumentError, TrackFormatError, TrackParseError

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("frame", "id", "x", "y", "width", "height")
VELOCITY_COLUMNS = ("xVelocity", "yVelocity")

_RECORDING_ID = re.compile(r"(\d+)_tracks")


def ingest_tracks(tracks_csv: str, rate_hz: float) -> SceneSequence:
    """
    Parse a HighD tracks table into a scene sequence

    Args:
        tracks_csv: CSV text with at least frame, id, x, y, width, height
            (x, y is the upper-left corner of the bounding box)
        rate_hz: Recording rate of the table

    Returns:
        One frame per distinct frame value, vehicles centered and sorted by id
    """

    if rate_hz <= 0:
        raise InvalidArgumentError(f"rate_hz must be positive, got {rate_hz}")

    try:
        df = pd.read_csv(io.StringIO(tracks_csv), dtype=str, skipinitialspace=True)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise TrackFormatError(detail=str(e)) from e
    df.columns = [c.strip() for c in df.columns]

    for column in REQUIRED_COLUMNS:
        if column not in df.columns:
            raise TrackFormatError(column)

    columns = list(REQUIRED_COLUMNS) + [c for c in VELOCITY_COLUMNS if c in df.columns]
    numeric = pd.DataFrame(index=df.index)
    for column in columns:
        raw = df[column]
        parsed = pd.to_numeric(raw, errors="coerce")
        bad = parsed.isna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise TrackParseError(row + 1, column, str(raw.iloc[row]))
        numeric[column] = parsed

    numeric = numeric.sort_values(["frame", "id"], kind="mergesort")
    has_velocity = all(c in numeric.columns for c in VELOCITY_COLUMNS)

    frames: List[Frame] = []
    for frame_value, group in numeric.groupby("frame", sort=True):
        vehicles = []
        for row in group.itertuples(index=False):
            vehicles.append(VehicleState(
                id=int(row.id),
                cx=float(row.x) + float(row.width) / 2.0,
                cy=float(row.y) + float(row.height) / 2.0,
                w=float(row.width),
                h=float(row.height),
                vx=float(row.xVelocity) if has_velocity else None,
                vy=float(row.yVelocity) if has_velocity else None,
            ))
        frames.append(Frame(t_index=int(frame_value), vehicles=vehicles))

    logger.info(f"Ingested {len(numeric)} detections into {len(frames)} frames at {rate_hz} Hz")

    return SceneSequence(frames=frames, rate_hz=rate_hz)


def downsample(seq: SceneSequence, keep_every: int) -> SceneSequence:
    """Keep frames 0, k, 2k, ... and reindex them consecutively"""

    if keep_every < 1:
        raise InvalidArgumentError(f"keep_every must be >= 1, got {keep_every}")

    kept = [
        Frame(t_index=i, vehicles=frame.vehicles)
        for i, frame in enumerate(seq.frames[::keep_every])
    ]

    return seq.model_copy(update={"frames": kept, "rate_hz": seq.rate_hz / keep_every})


class Partition(BaseModel):
    train: List[int] = Field(default_factory=list)
    test: List[int] = Field(default_factory=list)
    unused: List[int] = Field(default_factory=list)


def split(seq_ids: Sequence[int], train_ids: Iterable[int], test_ids: Iterable[int]) -> Partition:
    """Deterministic train/test partition of recording ids (input order kept)"""

    train_set = set(train_ids)
    test_set = set(test_ids)
    overlap = train_set & test_set
    if overlap:
        raise InvalidArgumentError(f"ids in both train and test sets: {sorted(overlap)}")

    partition = Partition()
    for seq_id in seq_ids:
        if seq_id in train_set:
            partition.train.append(seq_id)
        elif seq_id in test_set:
            partition.test.append(seq_id)
        else:
            partition.unused.append(seq_id)

    return partition


def recording_id(path: Path) -> int:
    """`01_tracks.csv` -> 1"""

    match = _RECORDING_ID.search(Path(path).name)
    if not match:
        raise InvalidArgumentError(f"cannot read a recording id from file name '{Path(path).name}'")
    return int(match.group(1))


def load_recordings(
    paths: Iterable[Path],
    rate_hz: float = 25.0,
    keep_every: int = 5
) -> Dict[int, SceneSequence]:
    """Ingest and downsample several HighD recordings keyed by recording id"""

    recordings: Dict[int, SceneSequence] = {}
    for path in sorted(Path(p) for p in paths):
        rec_id = recording_id(path)
        seq = ingest_tracks(path.read_text(), rate_hz)
        recordings[rec_id] = downsample(seq, keep_every)
        logger.info(f"Recording {rec_id}: {len(recordings[rec_id])} frames after downsampling")

    return recordings


def dataset_stats(
    sequences: Mapping[int, SceneSequence],
    d: int,
    keep_every: int = 1
) -> DatasetStats:
    """Frame, trajectory and sample counts over native-rate sequences"""

    frames_native = 0
    frames_down = 0
    trajectories = 0
    samples = 0

    for seq in sequences.values():
        reduced = downsample(seq, keep_every)
        frames_native += len(seq)
        frames_down += len(reduced)
        trajectories += len({v.id for frame in seq.frames for v in frame.vehicles})
        samples += max(0, len(reduced) - 2 * d + 1)

    return DatasetStats(
        frames_native=frames_native,
        frames_downsampled=frames_down,
        trajectories=trajectories,
        samples=samples,
    )


# ---------------------------------------------------------------------------
# Synthetic highway
# ---------------------------------------------------------------------------

class _SynthVehicle:
    """Mutable simulation state of one synthetic vehicle"""

    def __init__(self, vid: int, lane: int, direction: int, x: float, speed: float,
                 length: float, width: float, y: float):
        self.id = vid
        self.lane = lane
        self.direction = direction
        self.x = x
        self.y = y
        self.speed = speed
        self.length = length
        self.width = width
        self.target_lane: Optional[int] = None
        self.lateral_rate = 0.0
        self.change_left_s = 0.0

    def state(self) -> VehicleState:
        return VehicleState(
            id=self.id, cx=self.x, cy=self.y, w=self.length, h=self.width,
            vx=self.direction * self.speed, vy=self.lateral_rate,
        )


def _lane_centers(cfg: SynthConfig) -> List[float]:
    n_total = 2 * cfg.n_lanes
    top = (cfg.extent_y - n_total * cfg.lane_width) / 2.0
    return [top + (i + 0.5) * cfg.lane_width for i in range(n_total)]


def _lane_direction(cfg: SynthConfig, lane: int) -> int:
    # Upper lanes (small y) flow towards -x, lower lanes towards +x
    return -1 if lane < cfg.n_lanes else 1


def synth_highway(cfg: SynthConfig) -> SceneSequence:
    """
    Generate a deterministic two-stream highway scene

    Vehicles keep a constant speed. A lane change is a linear lateral ramp
    lasting `cfg.lane_change_s` towards an adjacent lane of the same stream.
    Vehicles whose center leaves [0, extent_x] are dropped, and replaced at
    the stream entry when `cfg.spawn` is set.
    """

    rng = np.random.default_rng(cfg.seed)
    centers = _lane_centers(cfg)
    n_total = len(centers)
    dt = 1.0 / cfg.rate_hz
    n_frames = max(1, int(round(cfg.duration_s * cfg.rate_hz)))
    p_frame = 1.0 - (1.0 - cfg.lane_change_prob) ** dt

    lane_speed = rng.uniform(cfg.speed_range[0], cfg.speed_range[1], size=n_total)

    def new_vehicle(vid: int, lane: int, x: float) -> _SynthVehicle:
        length = float(rng.uniform(*cfg.length_range))
        return _SynthVehicle(
            vid, lane, _lane_direction(cfg, lane), x, float(lane_speed[lane]),
            length, cfg.vehicle_width, centers[lane],
        )

    # Spread vehicles over lanes, evenly spaced within each lane with jitter
    per_lane = [[] for _ in range(n_total)]
    for i in range(cfg.n_vehicles):
        per_lane[i % n_total].append(i)

    vehicles: List[_SynthVehicle] = []
    for lane, members in enumerate(per_lane):
        if not members:
            continue
        spacing = cfg.extent_x / len(members)
        offset = float(rng.uniform(0, spacing))
        for slot, vid in enumerate(members):
            jitter = float(rng.uniform(-0.2, 0.2)) * spacing
            x = (offset + slot * spacing + jitter) % cfg.extent_x
            vehicles.append(new_vehicle(vid + 1, lane, x))
    vehicles.sort(key=lambda v: v.id)
    next_id = cfg.n_vehicles + 1

    frames: List[Frame] = []
    for k in range(n_frames):
        frames.append(Frame(t_index=k, vehicles=[v.state() for v in vehicles]))

        survivors: List[_SynthVehicle] = []
        spawned: List[_SynthVehicle] = []
        for v in vehicles:
            # One draw per vehicle per frame keeps the random stream aligned
            u = float(rng.random())
            v.x += v.direction * v.speed * dt

            if v.target_lane is not None:
                step = min(dt, v.change_left_s)
                v.y += v.lateral_rate * step
                v.change_left_s -= step
                if v.change_left_s <= 1e-9:
                    v.lane = v.target_lane
                    v.y = centers[v.lane]
                    v.target_lane = None
                    v.lateral_rate = 0.0
            elif u < p_frame:
                _start_lane_change(cfg, v, centers, rng)

            if 0.0 <= v.x <= cfg.extent_x:
                survivors.append(v)
            elif cfg.spawn:
                lane = int(rng.integers(cfg.n_lanes)) + (0 if v.direction < 0 else cfg.n_lanes)
                entry = cfg.extent_x if v.direction < 0 else 0.0
                spawned.append(new_vehicle(next_id, lane, entry))
                next_id += 1

        vehicles = survivors + spawned

    logger.info(
        f"Synthesized {len(frames)} frames at {cfg.rate_hz} Hz "
        f"({cfg.n_vehicles} initial vehicles, seed {cfg.seed})"
    )

    return SceneSequence(frames=frames, rate_hz=cfg.rate_hz,
                         extent_x=cfg.extent_x, extent_y=cfg.extent_y)


def _start_lane_change(cfg: SynthConfig, v: _SynthVehicle, centers: List[float],
                       rng: np.random.Generator) -> None:
    first = 0 if v.direction < 0 else cfg.n_lanes
    last = first + cfg.n_lanes - 1
    options = [lane for lane in (v.lane - 1, v.lane + 1) if first <= lane <= last]
    if not options:
        return
    target = options[int(rng.integers(len(options)))] if len(options) > 1 else options[0]
    v.target_lane = target
    v.change_left_s = cfg.lane_change_s
    v.lateral_rate = (centers[target] - centers[v.lane]) / cfg.lane_change_s

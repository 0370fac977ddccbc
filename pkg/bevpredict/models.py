"""
Domain models for scenes, grids, networks and evaluation results
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class HeadType(str, Enum):
    LINEAR = "linear"
    TANH = "tanh"
    CLIPPED_RELU = "clipped_relu"


class BaselineMethod(str, Enum):
    CONSTANT_VELOCITY = "cv"
    ZERO_MOTION = "zero"


class LossReduction(str, Enum):
    """How the training objective reduces squared errors over a sample"""

    MEAN = "mean"
    HALF_SUM = "half_sum"


# ---------------------------------------------------------------------------
# Scenes
# ---------------------------------------------------------------------------

class VehicleState(BaseModel):
    """One vehicle at one frame, world frame in meters (x longitudinal, y lateral)"""

    model_config = ConfigDict(frozen=True)

    id: int = Field(..., description="Track id")
    cx: float = Field(..., allow_inf_nan=False, description="Center x (m)")
    cy: float = Field(..., allow_inf_nan=False, description="Center y (m)")
    w: float = Field(..., gt=0, allow_inf_nan=False, description="Longitudinal extent (m)")
    h: float = Field(..., gt=0, allow_inf_nan=False, description="Lateral extent (m)")
    vx: Optional[float] = Field(None, description="Longitudinal velocity (m/s)")
    vy: Optional[float] = Field(None, description="Lateral velocity (m/s)")

    def shifted(self, dx: float, dy: float) -> "VehicleState":
        return self.model_copy(update={"cx": self.cx + dx, "cy": self.cy + dy})


class Frame(BaseModel):
    model_config = ConfigDict(frozen=True)

    t_index: int
    vehicles: List[VehicleState] = Field(default_factory=list)

    @field_validator("vehicles")
    @classmethod
    def _unique_ids(cls, vehicles: List[VehicleState]) -> List[VehicleState]:
        ids = [v.id for v in vehicles]
        if len(ids) != len(set(ids)):
            raise ValueError(f"duplicate vehicle ids in frame: {sorted(ids)}")
        return vehicles

    def ids(self) -> set:
        return {v.id for v in self.vehicles}

    def by_id(self) -> Dict[int, VehicleState]:
        return {v.id: v for v in self.vehicles}

    def restricted_to(self, ids: set) -> "Frame":
        """Copy keeping only vehicles whose id is in `ids`"""
        return Frame(t_index=self.t_index, vehicles=[v for v in self.vehicles if v.id in ids])


class SceneSequence(BaseModel):
    """Time-indexed frames at a fixed rate"""

    model_config = ConfigDict(frozen=True)

    frames: List[Frame] = Field(default_factory=list)
    rate_hz: float = Field(..., gt=0)
    extent_x: float = Field(512.0, gt=0, description="Study area length (m)")
    extent_y: float = Field(32.0, gt=0, description="Study area width (m)")

    @field_validator("frames")
    @classmethod
    def _increasing(cls, frames: List[Frame]) -> List[Frame]:
        for prev, cur in zip(frames, frames[1:]):
            if cur.t_index <= prev.t_index:
                raise ValueError(
                    f"frames must be strictly increasing in t_index "
                    f"({prev.t_index} then {cur.t_index})"
                )
        return frames

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def dt_s(self) -> float:
        return 1.0 / self.rate_hz


class SynthConfig(BaseModel):
    """Parameters of the synthetic two-stream highway"""

    model_config = ConfigDict(extra="forbid")

    n_vehicles: int = Field(20, ge=0)
    n_lanes: int = Field(3, ge=1, description="Lanes per direction")
    lane_width: float = Field(3.75, gt=0)
    speed_range: Tuple[float, float] = Field((25.0, 35.0), description="(min, max) m/s")
    length_range: Tuple[float, float] = Field((4.0, 5.0), description="(min, max) vehicle length, m")
    vehicle_width: float = Field(1.8, gt=0)
    lane_change_prob: float = Field(0.0, ge=0, le=1, description="Per-second probability")
    lane_change_s: float = Field(3.0, gt=0, description="Duration of the lateral ramp")
    duration_s: float = Field(30.0, gt=0)
    rate_hz: float = Field(5.0, gt=0)
    extent_x: float = Field(512.0, gt=0)
    extent_y: float = Field(32.0, gt=0)
    spawn: bool = Field(False, description="Replace vehicles leaving the area with new ones")
    seed: int = Field(0, ge=0, lt=2 ** 64)

    @model_validator(mode="after")
    def _check_ranges(self) -> "SynthConfig":
        lo, hi = self.speed_range
        if lo < 0 or lo > hi:
            raise ValueError(f"speed_range must satisfy 0 <= min <= max, got {self.speed_range}")
        lo, hi = self.length_range
        if lo <= 0 or lo > hi:
            raise ValueError(f"length_range must satisfy 0 < min <= max, got {self.length_range}")
        if 2 * self.n_lanes * self.lane_width > self.extent_y:
            raise ValueError(
                f"{2 * self.n_lanes} lanes of {self.lane_width} m do not fit in "
                f"extent_y={self.extent_y} m"
            )
        return self


class DatasetStats(BaseModel):
    frames_native: int
    frames_downsampled: int
    trajectories: int
    samples: int


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------

class GridSpec(BaseModel):
    """Raster geometry; pixel (r, c) samples world (origin_x + c*x_res, origin_y + r*y_res)"""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    width_px: int = Field(512, ge=1, alias="width")
    height_px: int = Field(64, ge=1, alias="height")
    x_m_per_px: float = Field(1.0, gt=0)
    y_m_per_px: float = Field(0.5, gt=0)
    origin_x: float = Field(0.0, allow_inf_nan=False)
    origin_y: float = Field(0.0, allow_inf_nan=False)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height_px, self.width_px)

    def is_compatible_with(self, depth: int) -> bool:
        m = 2 ** depth
        return self.width_px % m == 0 and self.height_px % m == 0


@dataclass(frozen=True)
class BevGrid:
    """Occupancy raster, values in [0, 1]"""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.array(self.values))
        if self.values.shape != self.spec.shape:
            raise ValueError(
                f"grid values shape {self.values.shape} does not match spec {self.spec.shape}"
            )
        self.values.setflags(write=False)


@dataclass(frozen=True)
class SampleStack:
    """d input channels (t-(d-1)dt .. t) and d target channels (t+dt .. t+d*dt)"""

    spec: GridSpec
    inputs: np.ndarray
    targets: np.ndarray
    dt_s: float
    t: int = 0

    def __post_init__(self):
        if self.inputs.shape != self.targets.shape:
            raise ValueError(
                f"input {self.inputs.shape} and target {self.targets.shape} stacks differ"
            )
        if self.inputs.shape[1:] != self.spec.shape:
            raise ValueError(f"stack spatial shape {self.inputs.shape[1:]} != {self.spec.shape}")

    @property
    def d(self) -> int:
        return self.inputs.shape[0]


class StackConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    d: int = Field(15, ge=1, description="Channels per input/target stack")
    dt_s: float = Field(0.2, gt=0, description="Seconds between channels")
    keep_every: int = Field(5, ge=1, description="Downsampling factor applied at ingest")


# ---------------------------------------------------------------------------
# Network and training
# ---------------------------------------------------------------------------

class NetSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    depth: int = Field(5, ge=1, description="Encoder-decoder levels including the bottleneck")
    base_features: int = Field(4, ge=1, description="Features after the pre-processing block")
    in_channels: int = Field(15, ge=1)
    out_channels: int = Field(15, ge=1)
    head: HeadType = HeadType.LINEAR


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(1e-6, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    grad_threshold: float = Field(1.0, gt=0)
    minibatch: int = Field(1, ge=1, le=1, description="Only single-sample steps are supported")
    epochs: int = Field(1, ge=1)
    seed: int = Field(0, ge=0)
    max_steps: Optional[int] = Field(None, ge=1)
    log_every: int = Field(100, ge=1)
    loss_reduction: LossReduction = Field(
        LossReduction.MEAN,
        description="mean: gradient of the MSE; half_sum: gradient of half the summed squared error",
    )


class ArchitectureRow(BaseModel):
    depth: int
    receptive_field: int
    min_input_size: int
    parameters: int


# ---------------------------------------------------------------------------
# Extraction, association, evaluation
# ---------------------------------------------------------------------------

class ExtractConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    p_min: float = Field(0.5, gt=0, lt=1)
    win_w: float = Field(5.0, gt=0, description="Half-window along x (m)")
    win_h: float = Field(2.0, gt=0, description="Half-window along y (m)")


class PositionEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    peak_p: float
    discrete_rc: Tuple[int, int]


class Pair(BaseModel):
    model_config = ConfigDict(frozen=True)

    estimate: int
    target: int
    distance: float
    dx: float = Field(0.0, description="estimate x minus target x")
    dy: float = Field(0.0, description="estimate y minus target y")


class Assignment(BaseModel):
    pairs: List[Pair] = Field(default_factory=list)
    unmatched_estimates: List[int] = Field(default_factory=list)
    unmatched_targets: List[int] = Field(default_factory=list)


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    stride: int = Field(1, ge=1, description="Step between evaluated time indices")
    max_distance_m: float = Field(math.inf, gt=0, description="Association gate")


class HorizonMetrics(BaseModel):
    horizon_s: float
    eps_x: Optional[float] = Field(None, ge=0, description="None when nothing was matched")
    eps_y: Optional[float] = Field(None, ge=0)
    n_matched: int = 0
    n_missed: int = 0
    n_spurious: int = 0


class EvaluationReport(BaseModel):
    horizons: List[HorizonMetrics]
    samples: int
    eps_x: Optional[float] = None
    eps_y: Optional[float] = None
    n_matched: int = 0
    n_missed: int = 0
    n_spurious: int = 0


# ---------------------------------------------------------------------------
# Application configuration
# ---------------------------------------------------------------------------

class AppConfig(BaseModel):
    """Every configurable section; net channels default to the stack depth"""

    model_config = ConfigDict(extra="forbid")

    grid: GridSpec = Field(default_factory=GridSpec)
    stack: StackConfig = Field(default_factory=StackConfig)
    net: NetSpec = Field(default_factory=NetSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    extract: ExtractConfig = Field(default_factory=ExtractConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)

    @model_validator(mode="before")
    @classmethod
    def _channels_from_stack(cls, data):
        if not isinstance(data, dict):
            return data
        stack = data.get("stack") or {}
        d = stack.d if isinstance(stack, StackConfig) else stack.get("d")
        net = data.get("net")
        if d is not None and (net is None or isinstance(net, dict)):
            net = dict(net or {})
            net.setdefault("in_channels", d)
            net.setdefault("out_channels", d)
            data = {**data, "net": net}
        return data

    @model_validator(mode="after")
    def _check_consistency(self) -> "AppConfig":
        if self.net.in_channels != self.stack.d or self.net.out_channels != self.stack.d:
            raise ValueError(
                f"net channels ({self.net.in_channels} -> {self.net.out_channels}) "
                f"must both equal stack.d={self.stack.d}"
            )
        if not self.grid.is_compatible_with(self.net.depth):
            raise ValueError(
                f"grid {self.grid.width_px}x{self.grid.height_px} is not a multiple of "
                f"2^{self.net.depth} = {2 ** self.net.depth} for net.depth={self.net.depth}"
            )
        return self

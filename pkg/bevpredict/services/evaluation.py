"""
Evaluation: per-horizon position errors, numeric baselines and recursive prediction
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from bevpredict.ai.checkpoint import Checkpoint
from bevpredict.ai.network import Network, forward
from bevpredict.models import (
    Assignment,
    BaselineMethod,
    BevGrid,
    EvalConfig,
    EvaluationReport,
    ExtractConfig,
    Frame,
    GridSpec,
    HorizonMetrics,
    PositionEstimate,
    SampleStack,
    SceneSequence,
    VehicleState,
)
from bevpredict.services.association import associate
from bevpredict.services.extraction import extract_positions, world_to_pixel
from bevpredict.services.metrics_collector import MetricsCollector
from bevpredict.services.rasterizer import build_sample, valid_sample_indices
from bevpredict.utils.errors import InvalidArgumentError, SampleRangeError, ShapeError

logger = logging.getLogger(__name__)

PredictFn = Callable[[SampleStack], np.ndarray]


def horizon_errors(
    assignments_per_channel: Sequence[Sequence[Assignment]],
    dt_s: float
) -> List[HorizonMetrics]:
    """
    Pool the assignments of each output channel into one HorizonMetrics

    Channel k covers horizon (k + 1) * dt_s. Channels without a single
    matched pair report eps_x / eps_y as None.
    """

    metrics = []
    for k, assignments in enumerate(assignments_per_channel):
        dx = [abs(p.dx) for a in assignments for p in a.pairs]
        dy = [abs(p.dy) for a in assignments for p in a.pairs]
        metrics.append(HorizonMetrics(
            horizon_s=(k + 1) * dt_s,
            eps_x=float(np.mean(dx)) if dx else None,
            eps_y=float(np.mean(dy)) if dy else None,
            n_matched=len(dx),
            n_missed=sum(len(a.unmatched_targets) for a in assignments),
            n_spurious=sum(len(a.unmatched_estimates) for a in assignments),
        ))
    return metrics


def _step_count(horizon_s: float, dt_s: float) -> int:
    return int(round(horizon_s / dt_s))


def constant_velocity_oracle(
    history: Sequence[Frame],
    horizons: Sequence[float],
    dt_s: float,
    use_recorded_velocity: bool = False
) -> List[Frame]:
    """
    Extrapolate every vehicle of the last history frame at constant velocity

    Velocity is the displacement between the last two frames. A vehicle seen
    only in the last frame stays at rest, unless `use_recorded_velocity` is
    set and it carries vx / vy.
    """

    if len(history) < 2:
        raise InvalidArgumentError(f"constant-velocity oracle needs >= 2 history frames, got {len(history)}")

    last, prev = history[-1], history[-2]
    elapsed = (last.t_index - prev.t_index) * dt_s
    previous = prev.by_id()

    velocities = {}
    for v in last.vehicles:
        if v.id in previous:
            before = previous[v.id]
            velocities[v.id] = ((v.cx - before.cx) / elapsed, (v.cy - before.cy) / elapsed)
        elif use_recorded_velocity and v.vx is not None and v.vy is not None:
            velocities[v.id] = (v.vx, v.vy)
        else:
            velocities[v.id] = (0.0, 0.0)

    frames = []
    for horizon in horizons:
        frames.append(Frame(
            t_index=last.t_index + _step_count(horizon, dt_s),
            vehicles=[
                v.shifted(velocities[v.id][0] * horizon, velocities[v.id][1] * horizon)
                for v in last.vehicles
            ],
        ))
    return frames


def zero_motion_baseline(history: Sequence[Frame], horizons: Sequence[float], dt_s: float) -> List[Frame]:
    """Every vehicle of the last history frame stays where it is"""

    if not history:
        raise InvalidArgumentError("zero-motion baseline needs at least one history frame")
    last = history[-1]
    return [
        Frame(t_index=last.t_index + _step_count(h, dt_s), vehicles=list(last.vehicles))
        for h in horizons
    ]


def recursive_predict(net: Network, inputs: np.ndarray, steps: int) -> List[np.ndarray]:
    """
    Feed the first output channel back as the newest input channel

    Returns one output stack per step; the input keeps d channels throughout.
    """

    if steps < 1:
        raise InvalidArgumentError(f"steps must be >= 1, got {steps}")
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"input stack must be (d, h, w), got shape {x.shape}")

    outputs = []
    for step in range(steps):
        out = forward(net, x)
        outputs.append(out)
        x = np.concatenate([x[1:], out[:1]], axis=0)
        logger.debug(f"Recursive step {step + 1}/{steps} done")
    return outputs


@dataclass
class EvaluationResult:
    report: EvaluationReport
    first_t: Optional[int] = None
    first_prediction: Optional[np.ndarray] = None


def _summarize(horizons: List[HorizonMetrics], assignments: List[List[Assignment]],
               samples: int) -> EvaluationReport:
    dx = [abs(p.dx) for channel in assignments for a in channel for p in a.pairs]
    dy = [abs(p.dy) for channel in assignments for a in channel for p in a.pairs]
    return EvaluationReport(
        horizons=horizons,
        samples=samples,
        eps_x=float(np.mean(dx)) if dx else None,
        eps_y=float(np.mean(dy)) if dy else None,
        n_matched=sum(h.n_matched for h in horizons),
        n_missed=sum(h.n_missed for h in horizons),
        n_spurious=sum(h.n_spurious for h in horizons),
    )


def _evaluation_times(seq: SceneSequence, d: int, stride: int) -> List[int]:
    times = list(valid_sample_indices(seq, d))[::stride]
    if not times:
        raise SampleRangeError(
            f"sequence of {len(seq)} frames is too short for d={d}: at least {2 * d} frames needed"
        )
    return times


def _targets(seq: SceneSequence, t: int, k: int) -> List[VehicleState]:
    present = seq.frames[t].ids()
    return seq.frames[t + k + 1].restricted_to(present).vehicles


def evaluate_predictor(
    predict_fn: PredictFn,
    seq: SceneSequence,
    spec: GridSpec,
    d: int,
    extract_cfg: ExtractConfig = ExtractConfig(),
    eval_cfg: EvalConfig = EvalConfig(),
    n_jobs: int = 1,
    metrics: Optional[MetricsCollector] = None
) -> EvaluationResult:
    """
    Score any grid predictor on every valid time index of `seq`

    For each t: build the sample, predict d channels, extract positions per
    channel and associate them with the channel's filtered targets.
    """

    times = _evaluation_times(seq, d, eval_cfg.stride)

    def score(t: int):
        sample = build_sample(seq, t, d, spec)
        pred = np.asarray(predict_fn(sample), dtype=np.float64)
        if pred.shape != sample.targets.shape:
            raise ShapeError(f"predictor returned shape {pred.shape}, expected {sample.targets.shape}")
        per_channel = [
            associate(
                extract_positions(BevGrid(spec, np.array(pred[k])), extract_cfg),
                _targets(seq, t, k),
                eval_cfg.max_distance_m,
            )
            for k in range(d)
        ]
        return pred, per_channel

    logger.info(f"Evaluating {len(times)} time indices (d={d}, n_jobs={n_jobs})")
    if n_jobs == 1:
        results = [score(t) for t in times]
    else:
        results = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(score)(t) for t in times)

    by_channel: List[List[Assignment]] = [[] for _ in range(d)]
    for _, per_channel in results:
        for k, assignment in enumerate(per_channel):
            by_channel[k].append(assignment)

    report = _summarize(horizon_errors(by_channel, seq.dt_s), by_channel, len(times))
    if metrics is not None:
        metrics.record_evaluation(report.samples, report.n_matched, report.n_missed, report.n_spurious)

    return EvaluationResult(report=report, first_t=times[0], first_prediction=results[0][0])


def evaluate(
    ckpt: Checkpoint,
    seq: SceneSequence,
    spec: GridSpec,
    extract_cfg: ExtractConfig = ExtractConfig(),
    eval_cfg: EvalConfig = EvalConfig(),
    n_jobs: int = 1,
    metrics: Optional[MetricsCollector] = None
) -> EvaluationResult:
    """evaluate_predictor with the checkpoint's network; d is its channel count"""

    net = ckpt.to_network()
    d = ckpt.spec.in_channels
    if ckpt.spec.out_channels != d:
        raise ShapeError(
            f"network maps {d} channels to {ckpt.spec.out_channels}; evaluation needs equal counts"
        )
    return evaluate_predictor(
        lambda sample: forward(net, sample.inputs),
        seq, spec, d, extract_cfg, eval_cfg, n_jobs, metrics,
    )


def _as_estimates(frame: Frame, spec: GridSpec) -> List[PositionEstimate]:
    estimates = []
    for v in frame.vehicles:
        r, c = world_to_pixel(v.cx, v.cy, spec)
        estimates.append(PositionEstimate(x=v.cx, y=v.cy, peak_p=1.0,
                                          discrete_rc=(int(round(r)), int(round(c)))))
    return estimates


def evaluate_baseline(
    seq: SceneSequence,
    spec: GridSpec,
    d: int,
    method: BaselineMethod = BaselineMethod.CONSTANT_VELOCITY,
    eval_cfg: EvalConfig = EvalConfig(),
    metrics: Optional[MetricsCollector] = None
) -> EvaluationResult:
    """Score a numeric baseline with the same targets, association and metrics"""

    times = _evaluation_times(seq, d, eval_cfg.stride)
    dt = seq.dt_s
    horizons = [(k + 1) * dt for k in range(d)]
    by_channel: List[List[Assignment]] = [[] for _ in range(d)]

    for t in times:
        history = seq.frames[t - d + 1:t + 1]
        if method == BaselineMethod.CONSTANT_VELOCITY:
            predicted = constant_velocity_oracle(history, horizons, dt)
        else:
            predicted = zero_motion_baseline(history, horizons, dt)
        for k, frame in enumerate(predicted):
            by_channel[k].append(
                associate(_as_estimates(frame, spec), _targets(seq, t, k), eval_cfg.max_distance_m)
            )

    logger.info(f"Baseline '{method.value}' scored on {len(times)} time indices")
    report = _summarize(horizon_errors(by_channel, dt), by_channel, len(times))
    if metrics is not None:
        metrics.record_evaluation(report.samples, report.n_matched, report.n_missed, report.n_spurious)
    return EvaluationResult(report=report, first_t=times[0])


def report_frame(report: EvaluationReport) -> pd.DataFrame:
    """Per-horizon rows followed by an `all` row with pooled totals"""

    rows = [
        {
            "horizon_s": f"{h.horizon_s:.6g}",
            "eps_x": h.eps_x,
            "eps_y": h.eps_y,
            "matched": h.n_matched,
            "missed": h.n_missed,
            "spurious": h.n_spurious,
        }
        for h in report.horizons
    ]
    rows.append({
        "horizon_s": "all",
        "eps_x": report.eps_x,
        "eps_y": report.eps_y,
        "matched": report.n_matched,
        "missed": report.n_missed,
        "spurious": report.n_spurious,
    })
    return pd.DataFrame(rows, columns=["horizon_s", "eps_x", "eps_y", "matched", "missed", "spurious"])

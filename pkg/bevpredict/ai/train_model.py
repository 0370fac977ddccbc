"""
Training for the BEV prediction network
MSE loss, reverse-mode gradients, global-norm clipping and SGD with momentum
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from bevpredict.ai.checkpoint import Checkpoint
from bevpredict.ai.network import ForwardCache, Network, build_network
from bevpredict.models import GridSpec, LossReduction, NetSpec, SampleStack, SceneSequence, TrainConfig
from bevpredict.services.metrics_collector import MetricsCollector
from bevpredict.services.rasterizer import build_sample, valid_sample_indices
from bevpredict.utils.errors import InvalidArgumentError, ShapeError

logger = logging.getLogger(__name__)

Gradients = Dict[str, np.ndarray]

RUNNING_LOSS_DECAY = 0.9


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean of squared differences over every channel and pixel"""

    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return float(np.mean((pred - target) ** 2))


def loss_and_gradients(
    net: Network,
    sample: SampleStack,
    reduction: LossReduction = LossReduction.MEAN
) -> Tuple[float, Gradients]:
    """
    MSE of one sample and the parameter gradients of the training objective

    The returned loss is always the MSE. With HALF_SUM the gradients are
    those of 0.5 * sum of squared errors, i.e. the MSE gradients scaled by
    half the element count.
    """

    cache = ForwardCache()
    pred = net.run(sample.inputs, cache)
    target = np.asarray(sample.targets, dtype=np.float64)
    loss = mse_loss(pred, target)
    if reduction == LossReduction.HALF_SUM:
        dout = pred - target
    else:
        dout = 2.0 * (pred - target) / pred.size
    return loss, net.backprop(cache, dout)


def backward(net: Network, sample: SampleStack) -> Gradients:
    """d(MSE)/d(parameter) for every parameter, float64"""

    _, grads = loss_and_gradients(net, sample)
    return grads


def global_norm(grads: Gradients) -> float:
    return float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))


def clip_gradients(grads: Gradients, threshold: float) -> Gradients:
    """Scale every gradient by threshold / norm when the global L2 norm exceeds threshold"""

    if threshold <= 0:
        raise InvalidArgumentError(f"gradient threshold must be positive, got {threshold}")

    norm = global_norm(grads)
    if norm <= threshold:
        return dict(grads)
    scale = threshold / norm
    return {name: g * scale for name, g in grads.items()}


@dataclass
class OptimizerState:
    """Momentum buffers (parameter dtype) and number of steps taken"""

    velocity: Dict[str, np.ndarray]
    iteration: int = 0

    @classmethod
    def zeros_like(cls, net: Network) -> "OptimizerState":
        return cls({name: np.zeros_like(p) for name, p in net.params.items()})


def sgd_momentum_step(
    net: Network,
    grads: Gradients,
    cfg: TrainConfig,
    state: OptimizerState
) -> Tuple[Network, OptimizerState]:
    """
    Classical momentum: v <- momentum * v + g, theta <- theta - lr * v

    Updates `net` and `state` in place and returns both.
    """

    for name, param in net.params.items():
        g = grads[name]
        if g.shape != param.shape:
            raise ShapeError(f"gradient {name} has shape {g.shape}, parameter has {param.shape}")
        v = cfg.momentum * state.velocity[name].astype(np.float64) + g
        param[...] = param.astype(np.float64) - cfg.lr * v
        state.velocity[name] = v.astype(param.dtype)

    state.iteration += 1
    return net, state


class SampleDataset:
    """Lazily rasterized samples of one or more scene sequences"""

    def __init__(self, sequences: Sequence[SceneSequence], d: int, spec: GridSpec):
        self.sequences = list(sequences)
        self.d = d
        self.spec = spec
        self.index: List[Tuple[int, int]] = [
            (i, t)
            for i, seq in enumerate(self.sequences)
            for t in valid_sample_indices(seq, d)
        ]

    def __len__(self) -> int:
        return len(self.index)

    def __getitem__(self, i: int) -> SampleStack:
        seq_i, t = self.index[i]
        return build_sample(self.sequences[seq_i], t, self.d, self.spec)


@dataclass
class LossRecord:
    step: int
    loss: float
    running_loss: float


@dataclass
class Trainer:
    """
    Single-sample SGD loop

    Args:
        net: Network to optimize in place
        cfg: Optimizer and loop settings
        state: Momentum buffers and step counter (fresh when omitted)
        metrics: Optional per-run metrics registry
    """

    net: Network
    cfg: TrainConfig
    state: Optional[OptimizerState] = None
    metrics: Optional[MetricsCollector] = None
    history: List[LossRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.state is None:
            self.state = OptimizerState.zeros_like(self.net)

    @classmethod
    def resume(cls, ckpt: Checkpoint, cfg: TrainConfig,
               metrics: Optional[MetricsCollector] = None) -> "Trainer":
        net = ckpt.to_network()
        velocity = {k: v.copy() for k, v in ckpt.velocity.items()} or None
        state = OptimizerState(velocity, ckpt.iteration) if velocity else None
        trainer = cls(net, cfg, state, metrics)
        trainer.state.iteration = ckpt.iteration
        return trainer

    def step(self, sample: SampleStack) -> LossRecord:
        started = time.perf_counter()

        loss, grads = loss_and_gradients(self.net, sample, self.cfg.loss_reduction)
        norm = global_norm(grads)
        clipped = norm > self.cfg.grad_threshold
        grads = clip_gradients(grads, self.cfg.grad_threshold)
        sgd_momentum_step(self.net, grads, self.cfg, self.state)

        if self.history:
            running = RUNNING_LOSS_DECAY * self.history[-1].running_loss + (1 - RUNNING_LOSS_DECAY) * loss
        else:
            running = loss
        record = LossRecord(self.state.iteration, loss, running)
        self.history.append(record)

        if self.metrics is not None:
            self.metrics.record_step(loss, running, norm, clipped, time.perf_counter() - started)
        return record

    def fit(self, dataset: Sequence[SampleStack]) -> Checkpoint:
        """Run cfg.epochs passes over `dataset` in seeded shuffled order"""

        n = len(dataset)
        if n == 0:
            raise InvalidArgumentError("training needs at least one sample")

        rng = np.random.default_rng(self.cfg.seed)
        steps = 0
        logger.info(
            f"Training on {n} samples for {self.cfg.epochs} epoch(s), "
            f"lr={self.cfg.lr}, momentum={self.cfg.momentum}, "
            f"loss_reduction={self.cfg.loss_reduction.value}"
        )

        for epoch in range(self.cfg.epochs):
            for i in rng.permutation(n):
                if self.cfg.max_steps is not None and steps >= self.cfg.max_steps:
                    break
                record = self.step(dataset[int(i)])
                steps += 1
                if record.step % self.cfg.log_every == 0:
                    logger.info(
                        f"step {record.step}: loss={record.loss:.6g} "
                        f"running_loss={record.running_loss:.6g}"
                    )
            else:
                logger.debug(f"Epoch {epoch + 1}/{self.cfg.epochs} done")
                continue
            break

        logger.info(f"Training finished after {steps} step(s), iteration {self.state.iteration}")
        return self.checkpoint()

    def checkpoint(self) -> Checkpoint:
        return Checkpoint.from_network(self.net, self.state.velocity, self.state.iteration)

    def loss_log(self) -> pd.DataFrame:
        """step, loss, running_loss per optimizer step"""
        return pd.DataFrame(
            [(r.step, r.loss, r.running_loss) for r in self.history],
            columns=["step", "loss", "running_loss"],
        )


def train(
    dataset: Sequence[SampleStack],
    cfg: TrainConfig,
    net_spec: Optional[NetSpec] = None,
    resume: Optional[Checkpoint] = None,
    metrics: Optional[MetricsCollector] = None
) -> Checkpoint:
    """Train a fresh network (seeded by cfg.seed) or continue `resume`"""

    if resume is not None:
        trainer = Trainer.resume(resume, cfg, metrics)
    else:
        trainer = Trainer(build_network(net_spec or NetSpec(), seed=cfg.seed), cfg, metrics=metrics)
    return trainer.fit(dataset)

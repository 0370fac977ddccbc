"""
Metrics Collector - Prometheus counters and gauges for training and evaluation runs
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Union

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

logger = logging.getLogger(__name__)


class MetricsCollector:
    """Per-run metric registry; nothing is published on the process default registry"""

    def __init__(self, registry: Optional[CollectorRegistry] = None):
        self.registry = registry or CollectorRegistry()

        # Training
        self.train_steps = Counter(
            'bevpredict_train_steps_total',
            'Optimizer steps taken',
            registry=self.registry
        )
        self.clipped_steps = Counter(
            'bevpredict_train_clipped_steps_total',
            'Steps whose gradient norm exceeded the threshold',
            registry=self.registry
        )
        self.loss = Gauge(
            'bevpredict_train_loss',
            'MSE of the latest step',
            registry=self.registry
        )
        self.running_loss = Gauge(
            'bevpredict_train_running_loss',
            'Exponentially smoothed MSE',
            registry=self.registry
        )
        self.grad_norm = Gauge(
            'bevpredict_train_grad_norm',
            'Global gradient norm before clipping',
            registry=self.registry
        )
        self.step_duration = Histogram(
            'bevpredict_train_step_seconds',
            'Wall time of one forward/backward/update',
            registry=self.registry
        )

        # Evaluation
        self.samples_evaluated = Counter(
            'bevpredict_eval_samples_total',
            'Time indices evaluated',
            registry=self.registry
        )
        self.positions = Counter(
            'bevpredict_eval_positions_total',
            'Association outcomes over all channels',
            ['outcome'],
            registry=self.registry
        )

    def record_step(self, loss: float, running_loss: float, grad_norm: float,
                    clipped: bool, seconds: float) -> None:
        self.train_steps.inc()
        if clipped:
            self.clipped_steps.inc()
        self.loss.set(loss)
        self.running_loss.set(running_loss)
        self.grad_norm.set(grad_norm)
        self.step_duration.observe(seconds)

    def record_evaluation(self, samples: int, matched: int, missed: int, spurious: int) -> None:
        self.samples_evaluated.inc(samples)
        self.positions.labels(outcome="matched").inc(matched)
        self.positions.labels(outcome="missed").inc(missed)
        self.positions.labels(outcome="spurious").inc(spurious)

    def value(self, name: str, labels: Optional[Dict[str, str]] = None) -> Optional[float]:
        """Current value of one exposed sample, e.g. `bevpredict_train_steps_total`"""
        return self.registry.get_sample_value(name, labels or {})

    def write(self, path: Union[str, Path]) -> None:
        """Write the registry in the Prometheus text exposition format"""

        write_to_textfile(str(path), self.registry)
        logger.info(f"Metrics written to {path}")

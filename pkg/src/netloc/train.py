"""Semi-supervised transductive training: anchor loss, full-batch steps.

One scenario is one graph; every epoch is a full-batch gradient step on
the squared-error of the anchor rows only. Agent ground truth is used
solely for the per-epoch RMSE diagnostic and never touches a gradient.
"""

import csv
import time
from contextlib import nullcontext
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numcore as nc
from .errors import ConfigError, TrainingDiverged
from .models import Model, ModelConfig, build_model

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    def threadpool_limits(limits=None):
        return nullcontext()


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 0.01
    optimizer: str = "adam"
    dropout: float = 0.5
    seed: int = 0
    # model hyperparameters
    hidden: int = 2000
    heads: int = 4
    head_dim: int = 256
    att_dim: int = 64
    score_dim: int = 64
    gamma: float = 100.0
    threshold: float = 1.2
    coarse_threshold: float = 4.0
    max_range: Optional[float] = None
    leaky_slope: float = 0.2
    # numerics: BLAS threads pinned per run for bit-reproducibility
    blas_threads: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0,1), got {self.dropout}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")

    def model_config(self, kind):
        return ModelConfig(
            kind=kind, hidden=self.hidden, heads=self.heads,
            head_dim=self.head_dim, att_dim=self.att_dim,
            score_dim=self.score_dim, gamma=self.gamma,
            threshold=self.threshold, coarse_threshold=self.coarse_threshold,
            max_range=self.max_range, leaky_slope=self.leaky_slope,
        )


@dataclass
class MetricsRecord:
    anchor_loss: list = field(default_factory=list)
    agent_rmse: list = field(default_factory=list)
    seconds: list = field(default_factory=list)  # cumulative wall clock


@dataclass
class TrainedModel:
    kind: str
    params: dict
    config: TrainConfig
    metrics: MetricsRecord
    model: Model

    @property
    def final_rmse(self):
        return self.metrics.agent_rmse[-1]


def anchor_loss(predictions, scenario):
    """Squared Frobenius error over the anchor rows only."""
    predictions = np.asarray(predictions)
    diff = predictions[: scenario.n_anchors] - scenario.anchor_positions()
    return float(np.sum(diff * diff))


def _anchor_loss_node(graph, pred, scenario):
    pred_anchors = nc.slice_rows(pred, 0, scenario.n_anchors)
    truth = graph.constant(scenario.anchor_positions())
    return nc.frobenius_sq(nc.subtract(pred_anchors, truth))


def train(kind, scenario, measurements, cfg):
    """Full-batch training for cfg.epochs; deterministic given cfg.seed."""
    from .evaluation import rmse_agents  # local import avoids a cycle

    if measurements.n != scenario.n:
        raise ConfigError("measurements do not match the scenario size")
    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    drop_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 4]))
    model = build_model(kind, measurements, cfg.model_config(kind), init_rng)
    metrics = MetricsRecord()
    opt_state = nc.AdamState(lr=cfg.lr)
    last_finite = None
    t0 = time.perf_counter()
    with threadpool_limits(limits=cfg.blas_threads):
        for epoch in range(1, cfg.epochs + 1):
            graph = nc.DiffGraph()
            out = model.forward(graph, training=True, dropout_p=cfg.dropout,
                                rng=drop_rng)
            loss = _anchor_loss_node(graph, out.predictions, scenario)
            loss_val = float(loss.data[0, 0])
            if not np.isfinite(loss_val):
                raise TrainingDiverged(epoch, last_finite)
            last_finite = loss_val
            graph.backward(loss)
            grads = graph.gradients()
            if cfg.optimizer == "adam":
                model.params, opt_state = nc.adam_step(model.params, grads, opt_state)
            else:
                model.params = nc.sgd_step(model.params, grads, cfg.lr)

            eval_graph = nc.DiffGraph()
            eval_out = model.forward(eval_graph, training=False)
            rmse = rmse_agents(eval_out.predictions.data, scenario)
            metrics.anchor_loss.append(loss_val)
            metrics.agent_rmse.append(rmse)
            metrics.seconds.append(time.perf_counter() - t0)
    return TrainedModel(kind=kind, params=model.params, config=cfg,
                        metrics=metrics, model=model)


def write_metrics_csv(path, metrics):
    """Stream format: epoch,anchor_loss,agent_rmse,seconds."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["epoch", "anchor_loss", "agent_rmse", "seconds"])
        rows = zip(metrics.anchor_loss, metrics.agent_rmse, metrics.seconds)
        for epoch, (lo, rm, sec) in enumerate(rows, start=1):
            out.writerow([epoch, repr(lo), repr(rm), repr(sec)])


def save_model(path, trained):
    meta = {
        "kind": trained.kind,
        "config": {k: v for k, v in trained.config.__dict__.items()},
        "max_range": trained.model.max_range,
    }
    nc.save_tensors(path, trained.params, metadata=meta)


def load_model(path, measurements):
    """Rebuild a runnable Model from a checkpoint (for evaluation)."""
    params, meta = nc.load_tensors(path)
    cfg = TrainConfig(**meta["config"])
    model = build_model(meta["kind"], measurements,
                        cfg.model_config(meta["kind"]),
                        np.random.default_rng(0))
    model.params = params
    model.max_range = meta["max_range"]
    return model, cfg

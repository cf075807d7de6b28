"""MSE loss, optimizers and the two-phase train / prune / train schedule."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .core import KanNetwork, PruneReport, backward, forward, prune
from .data import WindowDataset
from .errors import InvalidInputError, TrainingDivergedError

log = logging.getLogger(__name__)

ADAM = "adaptive-moment"
PLAIN = "plain-gradient"
OPTIMIZERS = (ADAM, PLAIN)


@dataclass
class TrainConfig:
    steps_phase1: int = 20
    steps_phase2: int = 20
    prune_threshold: float = 5e-2
    learning_rate: float = 1e-2
    optimizer: str = ADAM
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("steps_phase1", "steps_phase2", "seed"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v:
                raise InvalidInputError(f"{name} must be an integer, got {v!r}")
            setattr(self, name, int(v))
        if self.steps_phase1 < 0 or self.steps_phase2 < 0:
            raise InvalidInputError("step counts must be >= 0")
        if not (math.isfinite(self.prune_threshold) and self.prune_threshold >= 0):
            raise InvalidInputError(f"prune_threshold must be >= 0, got {self.prune_threshold}")
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise InvalidInputError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidInputError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown train config key(s): {sorted(unknown)}")
        return cls(**d)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class GradientDescent:
    def __init__(self, params, lr):
        self.params = params
        self.lr = lr

    def step(self, grads):
        for p, g in zip(self.params, grads):
            p -= self.lr * g


def make_optimizer(cfg: TrainConfig, params):
    if cfg.optimizer == ADAM:
        return Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    return GradientDescent(params, cfg.learning_rate)


def mse_loss(pred, target):
    """Mean squared error over all entries and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape or pred.size < 1:
        raise InvalidInputError(f"pred {pred.shape} and target {target.shape} must match and be non-empty")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


@dataclass
class TrainLog:
    losses_phase1: list[float]
    losses_phase2: list[float]
    final_loss: float
    prune_report: PruneReport | None
    duration_s: float = field(default=0.0, compare=False)

    @property
    def initial_loss(self) -> float:
        losses = self.losses_phase1 or self.losses_phase2
        return losses[0] if losses else self.final_loss

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "losses_phase1": self.losses_phase1,
            "losses_phase2": self.losses_phase2,
            "final_loss": self.final_loss,
            "prune_report": self.prune_report.to_dict() if self.prune_report else None,
        }
        if include_timing:
            d["duration_s"] = self.duration_s
        return d


def _run_phase(net, x, y, cfg, steps, first_step, losses):
    opt = make_optimizer(cfg, net.parameters())
    for i in range(steps):
        pred, cache = forward(net, x)
        loss, grad = mse_loss(pred, y)
        if not math.isfinite(loss):
            raise TrainingDivergedError(first_step + i, loss)
        losses.append(loss)
        opt.step(backward(net, cache, grad).arrays())


def _check_dataset(net: KanNetwork, dataset: WindowDataset):
    if len(dataset) < 1:
        raise InvalidInputError("training dataset is empty")
    if dataset.inputs.shape[1] != net.widths[0] or dataset.targets.shape[1] != net.widths[-1]:
        raise InvalidInputError(
            f"dataset dims ({dataset.inputs.shape[1]} -> {dataset.targets.shape[1]}) "
            f"do not match network widths {net.widths}"
        )


def train(net: KanNetwork, dataset: WindowDataset, cfg: TrainConfig | None = None):
    """Full-batch training, one prune between the phases.

    The input network is not modified. Each phase starts a fresh optimizer so
    moment estimates from phase one cannot move masked edges.
    """
    cfg = (cfg or TrainConfig()).validate()
    _check_dataset(net, dataset)
    started = time.perf_counter()
    x, y = dataset.net_inputs, dataset.targets
    work = net.copy()
    phase1, phase2 = [], []
    _run_phase(work, x, y, cfg, cfg.steps_phase1, 0, phase1)
    work, report = prune(work, x, cfg.prune_threshold)
    log.debug("pruned %d edge(s) at threshold %g", len(report.masked_edges), cfg.prune_threshold)
    _run_phase(work, x, y, cfg, cfg.steps_phase2, cfg.steps_phase1, phase2)
    final, _ = mse_loss(forward(work, x)[0], y)
    if not math.isfinite(final):
        raise TrainingDivergedError(cfg.steps_phase1 + cfg.steps_phase2, final)
    return work, TrainLog(phase1, phase2, final, report, time.perf_counter() - started)


def fit_model(widths, dataset: WindowDataset, cfg: TrainConfig | None = None,
              interior_count: int = 5, degree: int = 3, base: bool = True):
    """Initialise a network from ``cfg.seed`` and train it."""
    cfg = cfg or TrainConfig()
    net = KanNetwork.init(widths, interior_count, degree, cfg.seed, base=base)
    return train(net, dataset, cfg)

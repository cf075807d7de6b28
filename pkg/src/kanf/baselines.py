"""MLP baseline, forecast metrics and the T-KAN / MT-KAN / MLP benchmark."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import count_parameters, predict
from .data import WindowDataset, train_test_windows
from .errors import InvalidInputError, TrainingDivergedError
from .mtkan import partition_variables
from .spline import silu, silu_grad
from .training import TrainConfig, TrainLog, fit_model, make_optimizer, mse_loss

log = logging.getLogger(__name__)

ACTIVATIONS = ("silu", "relu")
# hidden layouts whose sizes match the comparison table (84 in, 21 out)
TABLE_MLP_HIDDEN = ((5,), (50,), (200,), (5, 5), (50, 50))
CSV_COLUMNS = ("Model", "Configuration", "MSE", "MAE", "RMSE", "Parameters")


def mlp_count_parameters(widths) -> int:
    widths = list(widths)
    if len(widths) < 2:
        raise InvalidInputError("an MLP needs at least two widths")
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


def _act(name, z):
    return silu(z) if name == "silu" else np.maximum(z, 0.0)


def _act_grad(name, z):
    return silu_grad(z) if name == "silu" else (z > 0).astype(float)


@dataclass
class MlpNetwork:
    weights: list[np.ndarray]  # (n_in, n_out) per layer
    biases: list[np.ndarray]
    activation: str = "silu"

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise InvalidInputError("an MLP needs one bias per weight matrix and at least one layer")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise InvalidInputError(f"layer {l}: weight {w.shape} and bias {b.shape} do not fit")
            if l and self.weights[l - 1].shape[1] != w.shape[0]:
                raise InvalidInputError(f"layer {l}: widths do not chain")

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @classmethod
    def init(cls, widths, seed: int = 0, activation: str = "silu") -> "MlpNetwork":
        widths = [int(w) for w in widths]
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise InvalidInputError(f"invalid MLP widths {widths}")
        rng = np.random.default_rng(seed)
        ws = [rng.normal(0.0, 1.0 / math.sqrt(a), (a, b)) for a, b in zip(widths[:-1], widths[1:])]
        return cls(ws, [np.zeros(b) for b in widths[1:]], activation)

    @classmethod
    def zeros(cls, widths, activation: str = "silu") -> "MlpNetwork":
        return cls([np.zeros((a, b)) for a, b in zip(widths[:-1], widths[1:])],
                   [np.zeros(b) for b in widths[1:]], activation)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpNetwork":
        return MlpNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)


def mlp_forward(net: MlpNetwork, x):
    """Returns ``(output, cache)``; hidden layers are activated, the last is linear."""
    h = np.asarray(x, dtype=float)
    squeeze = h.ndim == 1
    h = np.atleast_2d(h)
    if h.shape[1] != net.widths[0]:
        raise InvalidInputError(f"input width {h.shape[1]} != {net.widths[0]}")
    cache = []
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        cache.append((h, z))
        h = z if l == last else _act(net.activation, z)
    return (h[0] if squeeze else h), cache


def mlp_predict(net: MlpNetwork, x) -> np.ndarray:
    return mlp_forward(net, x)[0]


def mlp_backward(net: MlpNetwork, cache, output_grad) -> list[np.ndarray]:
    """Gradients in :meth:`MlpNetwork.parameters` order."""
    g = np.atleast_2d(np.asarray(output_grad, dtype=float))
    grads = [None] * (2 * len(net.weights))
    for l in range(len(net.weights) - 1, -1, -1):
        h, z = cache[l]
        if g.shape != z.shape:
            raise InvalidInputError(f"output_grad shape {g.shape} != {z.shape}")
        if l != len(net.weights) - 1:
            g = g * _act_grad(net.activation, z)
        grads[2 * l] = h.T @ g
        grads[2 * l + 1] = g.sum(axis=0)
        g = g @ net.weights[l].T
    return grads


def mlp_train(net: MlpNetwork, dataset: WindowDataset, cfg: TrainConfig | None = None):
    """Full-batch training for ``steps_phase1 + steps_phase2`` steps, no pruning."""
    cfg = (cfg or TrainConfig()).validate()
    if dataset.inputs.shape[1] != net.widths[0] or dataset.targets.shape[1] != net.widths[-1]:
        raise InvalidInputError(f"dataset dims do not match MLP widths {net.widths}")
    started = time.perf_counter()
    x, y = dataset.net_inputs, dataset.targets
    work = net.copy()
    opt = make_optimizer(cfg, work.parameters())
    losses = []
    for i in range(cfg.steps_phase1 + cfg.steps_phase2):
        pred, cache = mlp_forward(work, x)
        loss, grad = mse_loss(pred, y)
        if not math.isfinite(loss):
            raise TrainingDivergedError(i, loss)
        losses.append(loss)
        opt.step(mlp_backward(work, cache, grad))
    final, _ = mse_loss(mlp_predict(work, x), y)
    if not math.isfinite(final):
        raise TrainingDivergedError(len(losses), final)
    n1 = cfg.steps_phase1
    return work, TrainLog(losses[:n1], losses[n1:], final, None, time.perf_counter() - started)


def evaluate(pred, target) -> dict:
    p = np.asarray(pred, dtype=float)
    t = np.asarray(target, dtype=float)
    if p.shape != t.shape:
        raise InvalidInputError(f"shape mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise InvalidInputError("cannot evaluate empty predictions")
    err = p - t
    mse = float(np.mean(err * err))
    return {"mse": mse, "mae": float(np.mean(np.abs(err))), "rmse": math.sqrt(mse)}


@dataclass
class BenchmarkRow:
    model: str
    configuration: str
    mse: float
    mae: float
    rmse: float
    parameters: int


@dataclass
class BenchmarkResult:
    rows: list[BenchmarkRow] = field(default_factory=list)

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.model, r.configuration, f"{r.mse:.6e}", f"{r.mae:.6e}", f"{r.rmse:.6e}", r.parameters])
        return buf.getvalue()


def _config_str(widths) -> str:
    return "[" + ",".join(str(w) for w in widths) + "]"


def _units(values, ds: WindowDataset, var: int, T: int):
    return values[:, var * T:(var + 1) * T] * ds.std[var] + ds.mean[var]


def run_benchmark(columns: dict, h: int = 84, T: int = 21, hidden=(5,), group_size: int = 5,
                  mlp_hidden=TABLE_MLP_HIDDEN, train_config: TrainConfig | None = None,
                  interior_count: int = 5, degree: int = 3, mlp_activation: str = "silu") -> BenchmarkResult:
    """Chronological 80/20 split per variable; metrics pooled over all
    variables in original units. ``Parameters`` is the per-model count
    (active parameters for KANs), averaged over models and rounded."""
    cfg = train_config or TrainConfig()
    names = list(columns)
    if not names:
        raise InvalidInputError("benchmark needs at least one series")
    data = {n: np.asarray(columns[n], dtype=float) for n in names}
    result = BenchmarkResult()

    splits = {n: train_test_windows(data[n], h, T) for n in names}
    widths = [h, *hidden, T]
    preds, targets, counts = [], [], []
    for n in names:
        tr, te = splits[n]
        net, _ = fit_model(widths, tr, cfg, interior_count, degree)
        preds.append(_units(predict(net, te.net_inputs), te, 0, T))
        targets.append(_units(te.targets, te, 0, T))
        counts.append(count_parameters(net, active_only=True))
    result.rows.append(_row("T-KAN", widths, preds, targets, counts))

    groups = partition_variables(len(names), group_size, names, h, T)
    preds, targets, counts = [], [], []
    gwidths = None
    for g in groups:
        matrix = np.column_stack([data[n] for n in g.members])
        tr, te = train_test_windows(matrix, h, T)
        gw = [g.input_width, *hidden, g.output_width]
        gwidths = gwidths or gw
        net, _ = fit_model(gw, tr, cfg, interior_count, degree)
        out = predict(net, te.net_inputs)
        for v in range(g.size):
            preds.append(_units(out, te, v, T))
            targets.append(_units(te.targets, te, v, T))
        counts.append(count_parameters(net, active_only=True))
    result.rows.append(_row("MT-KAN", gwidths, preds, targets, counts))

    for hid in mlp_hidden:
        mw = [h, *hid, T]
        preds, targets = [], []
        for n in names:
            tr, te = splits[n]
            net, _ = mlp_train(MlpNetwork.init(mw, cfg.seed, mlp_activation), tr, cfg)
            preds.append(_units(mlp_predict(net, te.net_inputs), te, 0, T))
            targets.append(_units(te.targets, te, 0, T))
        result.rows.append(_row("MLP", mw, preds, targets, [mlp_count_parameters(mw)]))
    return result


def _row(model, widths, preds, targets, counts) -> BenchmarkRow:
    m = evaluate(np.concatenate([p.ravel() for p in preds]), np.concatenate([t.ravel() for t in targets]))
    log.info("%s %s mse=%.4g", model, widths, m["mse"])
    return BenchmarkRow(model, _config_str(widths), m["mse"], m["mae"], m["rmse"], int(round(float(np.mean(counts)))))

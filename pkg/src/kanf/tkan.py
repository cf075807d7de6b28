"""T-KAN: per-segment KAN forecasters and drift detection between segments.

Each segment of a univariate series gets its own network, trained from the
same seed on windows standardized with that segment's own stats. Drift is
read off the learned activations: consecutive models whose edge functions
differ by more than a threshold mark a concept boundary.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import KanNetwork, predict
from .data import Normalization, make_windows
from .errors import InvalidInputError
from .training import TrainConfig, fit_model

EPS_NORM = 1e-8
MAD_K = 3.0
MIN_REL_MAD = 0.5


@dataclass
class ArchConfig:
    h: int = 84
    T: int = 21
    hidden: tuple[int, ...] = (5,)
    interior_count: int = 5
    degree: int = 3
    base: bool = True

    def __post_init__(self):
        self.hidden = tuple(int(w) for w in self.hidden)
        if self.h < 1 or self.T < 1 or any(w < 1 for w in self.hidden):
            raise InvalidInputError("h, T and hidden widths must be positive")

    def widths(self, n_vars: int = 1) -> list[int]:
        return [self.h * n_vars, *self.hidden, self.T * n_vars]

    def to_dict(self) -> dict:
        return {"h": self.h, "T": self.T, "hidden": list(self.hidden),
                "interior_count": self.interior_count, "degree": self.degree, "base": self.base}


def forecast(model: KanNetwork, history, normalization: Normalization) -> np.ndarray:
    """Forecast ``T`` steps in original units from ``h`` raw observations.

    A 2-D ``history`` is treated as a batch of histories (one per row).
    """
    hist = np.asarray(history, dtype=float)
    if hist.shape[-1] != model.widths[0]:
        raise InvalidInputError(f"history length {hist.shape[-1]} != model input width {model.widths[0]}")
    z = (hist - normalization.mean[0]) / normalization.std[0]
    out = predict(model, z * normalization.input_scale)
    return out * normalization.std[0] + normalization.mean[0]


@dataclass
class SegmentModel:
    start: int
    stop: int
    network: KanNetwork
    normalization: Normalization
    final_loss: float


@dataclass
class TkanEnsemble:
    segment_length: int
    stride: int
    arch: ArchConfig
    train_config: TrainConfig
    models: list[SegmentModel] = field(default_factory=list)

    def __len__(self):
        return len(self.models)


def segment_starts(length: int, segment_length: int, stride: int) -> list[int]:
    if length < segment_length:
        return []
    return list(range(0, length - segment_length + 1, stride))


def fit_ensemble(series, segment_length: int, stride: int | None = None,
                 arch: ArchConfig | None = None, train_config: TrainConfig | None = None,
                 jobs: int = 1) -> TkanEnsemble:
    arch = arch or ArchConfig()
    cfg = train_config or TrainConfig()
    stride = segment_length if stride is None else stride
    s = np.asarray(series, dtype=float).reshape(-1)
    minimum = arch.h + arch.T + 1
    if segment_length < minimum:
        raise InvalidInputError(f"segment_length {segment_length} is below the trainable minimum h+T+1 = {minimum}")
    if stride < 1:
        raise InvalidInputError(f"stride must be >= 1, got {stride}")
    starts = segment_starts(s.shape[0], segment_length, stride)
    if not starts:
        raise InvalidInputError(
            f"series of length {s.shape[0]} is too short; need at least {segment_length} points for one segment"
        )

    def fit_one(start):
        seg = s[start:start + segment_length]
        ds = make_windows(seg, arch.h, arch.T)
        net, tlog = fit_model(arch.widths(), ds, cfg, arch.interior_count, arch.degree, arch.base)
        return SegmentModel(start, start + segment_length, net, ds.normalization, tlog.final_loss)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            models = list(pool.map(fit_one, starts))
    else:
        models = [fit_one(st) for st in starts]
    return TkanEnsemble(segment_length, stride, arch, cfg, models)


def edge_curves(net: KanNetwork, sample_count: int) -> list[np.ndarray]:
    """Every edge activation on a uniform grid of its domain, masked as zero.

    One array of shape ``(sample_count, n_out, n_in)`` per layer.
    """
    out = []
    for layer in net.layers:
        xs = np.linspace(layer.grid.domain_lo, layer.grid.domain_hi, sample_count)
        out.append(layer.edge_values(np.repeat(xs[:, None], layer.n_in, axis=1)))
    return out


def edge_distances(m1: KanNetwork, m2: KanNetwork, sample_count: int = 101) -> list[np.ndarray]:
    """Normalized RMS difference per edge, one ``(n_out, n_in)`` array per layer."""
    if sample_count < 10:
        raise InvalidInputError(f"sample_count must be >= 10, got {sample_count}")
    if not m1.same_architecture(m2):
        raise InvalidInputError(f"architectures differ: {m1.widths} vs {m2.widths}")
    out = []
    for a, b in zip(edge_curves(m1, sample_count), edge_curves(m2, sample_count)):
        diff = np.sqrt(np.mean((a - b) ** 2, axis=0))
        scale = np.maximum(np.maximum(np.sqrt(np.mean(a * a, axis=0)), np.sqrt(np.mean(b * b, axis=0))), EPS_NORM)
        out.append(diff / scale)
    return out


def activation_distance(m1: KanNetwork, m2: KanNetwork, sample_count: int = 101) -> float:
    """Mean over corresponding edges of their normalized RMS difference."""
    per_edge = edge_distances(m1, m2, sample_count)
    return float(np.concatenate([d.ravel() for d in per_edge]).mean())


def calibrate_threshold(distances, k: float = MAD_K, min_rel_mad: float = MIN_REL_MAD) -> float:
    """``median + k * MAD`` of a set of distances.

    The (unscaled) MAD is floored at ``min_rel_mad * median``: with only a
    handful of near-equal distances the raw MAD collapses and any small
    fluctuation would be flagged.
    """
    d = np.asarray(distances, dtype=float)
    if d.size == 0:
        raise InvalidInputError("cannot calibrate a threshold from no distances")
    med = float(np.median(d))
    mad = float(np.median(np.abs(d - med)))
    return med + k * max(mad, min_rel_mad * med)


@dataclass
class DriftReport:
    distances: list[float]
    matrix: np.ndarray
    flags: list[bool]
    threshold: float
    threshold_mode: str
    segments: list[tuple[int, int]]
    edge_breakdown: dict[int, list[dict]] = field(default_factory=dict)

    @property
    def flagged(self) -> list[int]:
        """Indices ``i`` of flagged boundaries between model ``i`` and ``i+1``."""
        return [i for i, f in enumerate(self.flags) if f]

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "threshold_mode": self.threshold_mode,
            "segments": [list(s) for s in self.segments],
            "boundaries": [
                {"index": i, "between": [i, i + 1], "at": self.segments[i + 1][0],
                 "distance": d, "drift": f}
                for i, (d, f) in enumerate(zip(self.distances, self.flags))
            ],
            "matrix": self.matrix.tolist(),
            "edge_breakdown": {str(k): v for k, v in self.edge_breakdown.items()},
        }

    def matrix_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.matrix.shape[0]
        w.writerow(["model"] + [str(j) for j in range(n)])
        for i in range(n):
            w.writerow([str(i)] + [repr(float(v)) for v in self.matrix[i]])
        return buf.getvalue()


def distance_matrix(models: list[KanNetwork], sample_count: int = 101) -> np.ndarray:
    n = len(models)
    mat = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            mat[i, j] = mat[j, i] = activation_distance(models[i], models[j], sample_count)
    return mat


def detect_drift(ensemble: TkanEnsemble, threshold: float | None = None,
                 sample_count: int = 101) -> DriftReport:
    """Flag boundary ``i`` when ``d(model_i, model_{i+1}) > threshold``.

    Without an explicit threshold, one is calibrated from the ensemble's own
    consecutive distances with :func:`calibrate_threshold`.
    """
    if len(ensemble.models) < 2:
        raise InvalidInputError("drift detection needs an ensemble of at least 2 models")
    nets = [m.network for m in ensemble.models]
    mat = distance_matrix(nets, sample_count)
    consecutive = [float(mat[i, i + 1]) for i in range(len(nets) - 1)]
    if threshold is None:
        thr, mode = calibrate_threshold(consecutive), "mad"
    else:
        if not np.isfinite(threshold) or threshold < 0:
            raise InvalidInputError(f"threshold must be >= 0, got {threshold}")
        thr, mode = float(threshold), "fixed"
    flags = [d > thr for d in consecutive]
    breakdown = {}
    for i, flagged in enumerate(flags):
        if not flagged:
            continue
        per_edge = edge_distances(nets[i], nets[i + 1], sample_count)
        breakdown[i] = [
            {"layer": l, "q": int(q), "p": int(p), "distance": float(d[q, p])}
            for l, d in enumerate(per_edge) for q, p in np.ndindex(d.shape)
        ]
    segments = [(m.start, m.stop) for m in ensemble.models]
    return DriftReport(consecutive, mat, flags, thr, mode, segments, breakdown)

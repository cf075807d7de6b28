"""Series ingestion, volatility targets, standardization and windowing."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._files import atomic_write_text
from .errors import EmptyDataError, FormatError, InvalidDataError, InvalidInputError

log = logging.getLogger(__name__)

OHLCV_COLUMNS = ("date", "open", "high", "low", "close", "volume")
VOLATILITY_WINDOW = 21
INPUT_SCALE = 1.0 / 3.0
TRAIN_FRACTION = 0.8


@dataclass
class OhlcvSeries:
    ticker: str
    dates: list[date]
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray
    dropped_rows: int = 0

    def __post_init__(self):
        n = len(self.dates)
        for name in ("open", "high", "low", "close", "volume"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise InvalidDataError(f"column {name} has {arr.shape[0]} rows, expected {n}")
            setattr(self, name, arr)
        for i in range(1, n):
            if not self.dates[i] > self.dates[i - 1]:
                raise InvalidDataError(f"dates not strictly increasing at row {i}", row=i)
        bad = np.nonzero(~(self.close > 0))[0]
        if bad.size:
            raise InvalidDataError(f"close price must be positive (row {bad[0]})", row=int(bad[0]))

    def __len__(self):
        return len(self.dates)


def log_returns(close) -> np.ndarray:
    close = np.asarray(close, dtype=float)
    bad = np.nonzero(~(close > 0))[0]
    if bad.size:
        raise InvalidDataError(f"non-positive close at row {bad[0]}", row=int(bad[0]))
    return np.log(close[1:] / close[:-1])


def realized_volatility(returns, window_n: int = VOLATILITY_WINDOW) -> np.ndarray:
    """Rolling root-sum-of-squares of ``window_n`` consecutive returns.

    ``out[i]`` covers ``returns[i : i + window_n]``, i.e. it is aligned with
    the last return in its window.
    """
    r = np.asarray(returns, dtype=float)
    if window_n < 1:
        raise InvalidInputError(f"window_n must be >= 1, got {window_n}")
    if r.shape[0] < window_n:
        raise InvalidInputError(f"need at least {window_n} returns, got {r.shape[0]}")
    return np.sqrt((sliding_window_view(r, window_n) ** 2).sum(axis=-1))


@dataclass
class Normalization:
    """Per-variable z-score stats plus the extra scale into the spline domain.

    Network inputs are ``(x - mean) / std * input_scale``; network outputs are
    z-scores and are mapped back with ``mean + std * y``.
    """

    mean: np.ndarray
    std: np.ndarray
    input_scale: float = INPUT_SCALE

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.std = np.atleast_1d(np.asarray(self.std, dtype=float))
        if self.mean.shape != self.std.shape:
            raise InvalidInputError("mean and std must have the same length")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.std)) and np.all(self.std > 0)):
            raise InvalidInputError("normalization stats must be finite with std > 0")

    @classmethod
    def fit(cls, values, input_scale: float = INPUT_SCALE) -> "Normalization":
        v = np.asarray(values, dtype=float)
        v = v[:, None] if v.ndim == 1 else v
        mean = v.mean(axis=0)
        std = v.std(axis=0)
        # constant series: keep the level, use unit scale
        flat = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
        std = np.where(flat, 1.0, std)
        return cls(mean, std, input_scale)

    @property
    def n_vars(self) -> int:
        return self.mean.shape[0]

    def standardize(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        return (v - self.mean) / self.std if v.ndim == 2 else (v - self.mean[0]) / self.std[0]

    def destandardize(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return z * self.std + self.mean if z.ndim == 2 else z * self.std[0] + self.mean[0]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "input_scale": self.input_scale}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(d["mean"], d["std"], float(d.get("input_scale", INPUT_SCALE)))


def flatten_variable_major(window: np.ndarray) -> np.ndarray:
    """``[h, m]`` window -> all ``h`` steps of variable 0, then variable 1, ..."""
    return np.ascontiguousarray(np.asarray(window).T).reshape(-1)


@dataclass
class WindowDataset:
    inputs: np.ndarray  # (N, m*h), standardized
    targets: np.ndarray  # (N, m*T), standardized
    h: int
    T: int
    normalization: Normalization
    stride: int = 1
    starts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        if self.inputs.shape[0] < 1 or self.inputs.shape[0] != self.targets.shape[0]:
            raise InvalidInputError("a window dataset needs >= 1 matching input/target rows")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def net_inputs(self) -> np.ndarray:
        return self.inputs * self.normalization.input_scale

    @property
    def mean(self):
        return self.normalization.mean

    @property
    def std(self):
        return self.normalization.std


def make_windows(series, h: int, T: int, stride: int = 1,
                 normalization: Normalization | None = None) -> WindowDataset:
    """Slice ``(history h -> horizon T)`` pairs out of a series.

    ``series`` is 1-D (one variable) or ``[length, m]``; multivariate windows
    are flattened variable-major. Stats are fitted on ``series`` itself unless
    given, so pass the training split in and reuse its stats for test data.
    """
    s = np.asarray(series, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    if s.ndim != 2:
        raise InvalidInputError("series must be 1-D or 2-D")
    if h < 1 or T < 1 or stride < 1:
        raise InvalidInputError(f"h, T and stride must be >= 1 (got {h}, {T}, {stride})")
    n = s.shape[0]
    if n < h + T:
        raise InvalidInputError(f"series of length {n} is too short; need at least h+T = {h + T}")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("series contains non-finite values")
    norm = normalization or Normalization.fit(s)
    if norm.n_vars != s.shape[1]:
        raise InvalidInputError(f"normalization covers {norm.n_vars} variables, series has {s.shape[1]}")
    z = (s - norm.mean) / norm.std
    starts = np.arange(0, n - h - T + 1, stride)
    # (N, m, h+T) windows, variable-major once the last two axes are split
    win = sliding_window_view(z, h + T, axis=0)[starts]
    inputs = win[:, :, :h].reshape(len(starts), -1)
    targets = win[:, :, h:].reshape(len(starts), -1)
    return WindowDataset(np.ascontiguousarray(inputs), np.ascontiguousarray(targets),
                         h, T, norm, stride, starts)


def split_index(length: int, train_fraction: float = TRAIN_FRACTION) -> int:
    if not 0 < train_fraction < 1:
        raise InvalidInputError(f"train_fraction must be in (0, 1), got {train_fraction}")
    return int(math.floor(length * train_fraction))


def train_test_windows(series, h: int, T: int, stride: int = 1,
                       train_fraction: float = TRAIN_FRACTION):
    """Chronological split: train windows inside the first part, test windows
    whose targets lie in the hold-out part (their history may reach back).
    Both use the training split's stats."""
    s = np.asarray(series, dtype=float)
    cut = split_index(s.shape[0], train_fraction)
    train = make_windows(s[:cut], h, T, stride)
    if s.shape[0] - cut < T:
        raise InvalidInputError(f"hold-out part has {s.shape[0] - cut} points; need at least T = {T}")
    test = make_windows(s[cut - h:], h, T, stride, normalization=train.normalization)
    return train, test


def _parse_float(text: str) -> float | None:
    text = text.strip()
    if not text:
        return None
    try:
        v = float(text)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_ohlcv_csv(path, ticker: str | None = None) -> OhlcvSeries:
    """Read a ``Date,Open,High,Low,Close,Volume`` file (any column case).

    Rows with a missing or unparseable field are dropped and counted in
    ``dropped_rows``; rows are sorted by date.
    """
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file, expected a header row") from None
        cols = {name.strip().lower(): i for i, name in enumerate(header)}
        missing = [c for c in OHLCV_COLUMNS if c not in cols]
        if missing:
            raise FormatError(f"{path}: header lacks columns {missing}")
        rows, dropped = [], 0
        for raw in reader:
            if not raw or all(not cell.strip() for cell in raw):
                continue
            try:
                d = date.fromisoformat(raw[cols["date"]].strip())
                values = [_parse_float(raw[cols[c]]) for c in OHLCV_COLUMNS[1:]]
            except (IndexError, ValueError):
                dropped += 1
                continue
            if any(v is None for v in values):
                dropped += 1
                continue
            rows.append((d, *values))
    if dropped:
        log.warning("%s: dropped %d row(s) with missing fields", path, dropped)
    if not rows:
        raise EmptyDataError(f"{path}: no valid rows")
    rows.sort(key=lambda r: r[0])
    arr = np.array([r[1:] for r in rows], dtype=float)
    name = ticker if ticker is not None else Path(path).stem
    return OhlcvSeries(name, [r[0] for r in rows], *arr.T, dropped_rows=dropped)


def write_ohlcv_csv(path, series: OhlcvSeries):
    lines = ["Date,Open,High,Low,Close,Volume"]
    for i, d in enumerate(series.dates):
        vals = (series.open[i], series.high[i], series.low[i], series.close[i], series.volume[i])
        lines.append(d.isoformat() + "," + ",".join(repr(float(v)) for v in vals))
    return atomic_write_text(path, "\n".join(lines) + "\n")


def is_ohlcv_header(header) -> bool:
    names = {h.strip().lower() for h in header}
    return all(c in names for c in OHLCV_COLUMNS)


def load_series_csv(path) -> dict[str, np.ndarray]:
    """Read a wide table: first column is a time label, the rest are variables."""
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty file, expected a header row") from None
        if len(header) < 2 or len(set(header)) != len(header):
            raise FormatError(f"{path}: need a time column plus uniquely named value columns")
        rows, dropped = [], 0
        for raw in reader:
            if not raw or all(not cell.strip() for cell in raw):
                continue
            vals = [_parse_float(c) for c in raw[1:len(header)]]
            if len(vals) != len(header) - 1 or any(v is None for v in vals):
                dropped += 1
                continue
            rows.append(vals)
    if dropped:
        log.warning("%s: dropped %d row(s) with missing fields", path, dropped)
    if not rows:
        raise EmptyDataError(f"{path}: no valid rows")
    arr = np.array(rows, dtype=float)
    return {name: arr[:, j] for j, name in enumerate(header[1:])}


def write_series_csv(path, columns: dict[str, np.ndarray], index_name: str = "t"):
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    lines = [",".join([index_name] + names)]
    for i, row in enumerate(data):
        lines.append(",".join([str(i)] + [repr(float(v)) for v in row]))
    return atomic_write_text(path, "\n".join(lines) + "\n")


# --- synthetic generators -------------------------------------------------

SYNTH_KINDS = ("sine", "trend", "regime_switch", "lead_lag", "ar1")

_DEFAULTS = {
    "sine": {"length": 1000, "period": 50.0, "amplitude": 1.0, "phase": 0.0, "offset": 0.0, "noise": 0.0},
    "trend": {"length": 1000, "slope": 0.01, "intercept": 0.0, "noise": 0.0},
    "ar1": {"length": 1000, "phi": 0.9, "sigma": 1.0},
    "lead_lag": {"length": 1000, "lag": 3, "phi": 0.9, "sigma": 1.0, "noise": 0.1},
    "regime_switch": {"length": 1000, "switch_at": 500,
                      "first": {"kind": "sine"}, "second": {"kind": "trend"}},
}


@dataclass
class SynthSeries:
    kind: str
    series: dict[str, np.ndarray]
    switch_index: int | None = None
    lag: int | None = None

    @property
    def values(self) -> np.ndarray:
        """The first (or only) generated vector."""
        return next(iter(self.series.values()))


def _resolve(kind: str, params: dict | None) -> dict:
    if kind not in SYNTH_KINDS:
        raise InvalidInputError(f"unknown synthetic kind {kind!r}; choose from {SYNTH_KINDS}")
    params = dict(params or {})
    unknown = set(params) - set(_DEFAULTS[kind])
    if unknown:
        raise InvalidInputError(f"unknown parameter(s) for {kind}: {sorted(unknown)}")
    p = {**_DEFAULTS[kind], **params}
    if int(p["length"]) != p["length"] or p["length"] < 1:
        raise InvalidInputError(f"length must be a positive integer, got {p['length']}")
    p["length"] = int(p["length"])
    for key, v in p.items():
        if isinstance(v, (int, float)) and not math.isfinite(v):
            raise InvalidInputError(f"parameter {key} must be finite")
    return p


def _generate(kind: str, p: dict, rng: np.random.Generator) -> np.ndarray:
    n = p["length"]
    t = np.arange(n, dtype=float)
    if kind == "sine":
        if p["period"] <= 0:
            raise InvalidInputError("period must be > 0")
        x = p["amplitude"] * np.sin(2.0 * np.pi * t / p["period"] + p["phase"]) + p["offset"]
        if p["noise"]:
            x = x + p["noise"] * rng.standard_normal(n)
        return x
    if kind == "trend":
        x = p["intercept"] + p["slope"] * t
        if p["noise"]:
            x = x + p["noise"] * rng.standard_normal(n)
        return x
    if kind == "ar1":
        return _ar1(n, p["phi"], p["sigma"], rng)
    raise AssertionError(kind)


def _ar1(n, phi, sigma, rng):
    if not abs(phi) < 1:
        raise InvalidInputError(f"ar1 needs |phi| < 1, got {phi}")
    eps = sigma * rng.standard_normal(n)
    x = np.empty(n)
    x[0] = eps[0] / math.sqrt(1.0 - phi * phi)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + eps[i]
    return x


def synth_generate(kind: str, params: dict | None = None, seed: int = 0) -> SynthSeries:
    """Deterministic synthetic fixtures; see ``_DEFAULTS`` for parameters.

    ``regime_switch`` concatenates two sub-generators (``first``/``second``,
    each a ``{"kind": ..., **params}`` mapping) at ``switch_at``;
    ``lead_lag`` returns ``A`` (an AR(1) process) and ``B[t] = A[t-lag] + noise``.
    """
    p = _resolve(kind, params)
    rng = np.random.default_rng(seed)
    if kind == "regime_switch":
        n, cut = p["length"], int(p["switch_at"])
        if not 0 < cut < n:
            raise InvalidInputError(f"switch_at must lie in (0, {n}), got {cut}")
        parts = []
        for part, length in ((p["first"], cut), (p["second"], n - cut)):
            part = dict(part)
            sub_kind = part.pop("kind", None)
            if sub_kind not in ("sine", "trend", "ar1"):
                raise InvalidInputError(f"regime parts must be sine, trend or ar1, got {sub_kind!r}")
            parts.append(_generate(sub_kind, _resolve(sub_kind, {**part, "length": length}), rng))
        return SynthSeries(kind, {"x": np.concatenate(parts)}, switch_index=cut)
    if kind == "lead_lag":
        lag = int(p["lag"])
        if lag < 0:
            raise InvalidInputError(f"lag must be >= 0, got {lag}")
        n = p["length"]
        a_full = _ar1(n + lag, p["phi"], p["sigma"], rng)
        a = a_full[lag:]
        b = a_full[:n] + p["noise"] * rng.standard_normal(n)
        return SynthSeries(kind, {"A": a, "B": b}, lag=lag)
    return SynthSeries(kind, {"x": _generate(kind, p, rng)})

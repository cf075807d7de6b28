"""Command-line entry point: ``kanf {train,predict,drift,symbolify,benchmark,synth}``.

Every command resolves its configuration (defaults < ``--config`` file <
flags), validates it before any data is read, computes everything in memory
and only then writes its outputs, each through an atomic rename. The
resolved configuration is echoed to ``config.json`` in the output directory.
Errors are reported on stderr as one JSON object ``{"error", "message"}``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._files import atomic_write_json, atomic_write_text
from .baselines import ACTIVATIONS, TABLE_MLP_HIDDEN, evaluate, run_benchmark
from .core import count_parameters, load_checkpoint, predict, save_checkpoint
from .data import (SYNTH_KINDS, VOLATILITY_WINDOW, Normalization, flatten_variable_major,
                   is_ohlcv_header, load_ohlcv_csv, load_series_csv, log_returns,
                   realized_volatility, synth_generate, train_test_windows, write_series_csv)
from .errors import InvalidInputError, KanfError
from .mtkan import load_group_file, partition_variables, unflatten
from .symbolic import symbolify_network
from .tkan import ArchConfig, detect_drift, fit_ensemble
from .training import OPTIMIZERS, TrainConfig, fit_model

log = logging.getLogger("kanf")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

COMMON = {"seed": 0, "jobs": 1}
MODEL = {"h": 84, "T": 21, "hidden": [5], "interior_count": 5, "degree": 3, "base": True,
         "steps_phase1": 20, "steps_phase2": 20, "prune_threshold": 5e-2,
         "learning_rate": 1e-2, "optimizer": OPTIMIZERS[0]}
DEFAULTS = {
    "train": {**COMMON, **MODEL, "data": None, "columns": None, "model": "tkan",
              "group_size": 5, "group_file": None},
    "predict": {**COMMON, "data": None, "checkpoint": None, "backtest": False, "plot": False},
    "drift": {**COMMON, **MODEL, "data": None, "columns": None, "segment_length": 252,
              "stride": None, "threshold": "mad", "sample_count": 101},
    "symbolify": {**COMMON, "checkpoint": None, "sample_count": 101},
    "benchmark": {**COMMON, **MODEL, "data": None, "columns": None, "group_size": 5,
                  "mlp_hidden": [list(h) for h in TABLE_MLP_HIDDEN], "mlp_activation": "silu"},
    "synth": {**COMMON, "kind": None, "params": {}},
}


class IoError(KanfError):
    kind = "io"
    exit_code = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidInputError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _layouts(text: str) -> list[list[int]]:
    return [_int_list(part) for part in text.split(";") if part.strip()]


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _threshold(text: str):
    if text == "mad":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"threshold must be 'mad' or a number, got {text!r}") from None


def _param(text: str):
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kanf", description="KAN forecasting, drift analysis and symbolic reporting.")
    parser.add_argument("--version", action="version", version=f"kanf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON file of option values (flags take precedence)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--jobs", type=int, help="worker cap for parallel sections")

    def data(p):
        p.add_argument("--data", action="append",
                       help="OHLCV CSV (turned into realized volatility) or wide series CSV; repeatable")
        p.add_argument("--columns", type=_names, help="comma-separated variables to use")

    def model(p):
        p.add_argument("--h", type=int, help="history length per variable")
        p.add_argument("--T", type=int, help="forecast horizon per variable")
        p.add_argument("--hidden", type=_int_list, help="hidden widths, e.g. 5 or 8,4")
        p.add_argument("--interior-count", type=int, help="spline grid intervals G")
        p.add_argument("--degree", type=int, help="spline degree k")
        p.add_argument("--base", action=argparse.BooleanOptionalAction, default=None,
                       help="include the silu base branch")
        p.add_argument("--steps-phase1", type=int)
        p.add_argument("--steps-phase2", type=int)
        p.add_argument("--prune-threshold", type=float)
        p.add_argument("--learning-rate", type=float)
        p.add_argument("--optimizer", choices=OPTIMIZERS)

    p = sub.add_parser("train", help="train T-KAN or MT-KAN models")
    common(p), data(p), model(p)
    p.add_argument("--model", choices=("tkan", "mtkan"))
    p.add_argument("--group-size", type=int)
    p.add_argument("--group-file", help="JSON list of lists of variable names")

    p = sub.add_parser("predict", help="forecast from checkpoints")
    common(p)
    p.add_argument("--data", action="append")
    p.add_argument("--checkpoint", help="checkpoint file or a train output directory")
    p.add_argument("--backtest", action=argparse.BooleanOptionalAction, default=None,
                   help="forecast the last T observed steps instead of the future")
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=None,
                   help="also write forecast.svg")

    p = sub.add_parser("drift", help="segment ensemble and drift report")
    common(p), data(p), model(p)
    p.add_argument("--segment-length", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--threshold", type=_threshold, help="'mad' or a fixed distance")
    p.add_argument("--sample-count", type=int)

    p = sub.add_parser("symbolify", help="fit primitive formulas to a checkpoint's edges")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--sample-count", type=int)

    p = sub.add_parser("benchmark", help="compare T-KAN, MT-KAN and MLP baselines")
    common(p), data(p), model(p)
    p.add_argument("--group-size", type=int)
    p.add_argument("--mlp-hidden", type=_layouts, help="hidden layouts, e.g. '5;50;50,50'")
    p.add_argument("--mlp-activation", choices=ACTIVATIONS)

    p = sub.add_parser("synth", help="write a synthetic fixture series CSV")
    common(p)
    p.add_argument("--kind", choices=SYNTH_KINDS)
    p.add_argument("--param", action="append", type=_param, default=None,
                   help="generator parameter key=value (value parsed as JSON when possible)")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg = {k: (list(v) if isinstance(v, list) else v) for k, v in DEFAULTS[args.command].items()}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise IoError(f"cannot read config {args.config}: {exc.strerror or exc}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise InvalidInputError(f"config {args.config} must hold a JSON object")
        unknown = sorted(set(doc) - set(cfg))
        if unknown:
            raise InvalidInputError(f"unknown config key(s) for {args.command}: {unknown}")
        cfg.update(doc)
    flags = vars(args)
    for key in cfg:
        if key == "params":
            if flags.get("param"):
                cfg["params"] = {**cfg["params"], **dict(flags["param"])}
        elif flags.get(key) is not None:
            cfg[key] = flags[key]
    _validate(args.command, cfg)
    return cfg


def _need_int(cfg, key, low):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < low:
        raise InvalidInputError(f"{key} must be an integer >= {low}, got {v!r}")


def _validate(command: str, cfg: dict):
    _need_int(cfg, "seed", 0)
    _need_int(cfg, "jobs", 1)
    if "h" in cfg:
        arch = _arch(cfg)
        if arch.degree < 0 or arch.interior_count < 1:
            raise InvalidInputError("interior_count must be >= 1 and degree >= 0")
        train_config(cfg)
    if "data" in cfg and command != "synth":
        if not cfg["data"]:
            raise InvalidInputError(f"{command} needs --data")
        if isinstance(cfg["data"], str):
            cfg["data"] = [cfg["data"]]
    if command in ("predict", "symbolify") and not cfg["checkpoint"]:
        raise InvalidInputError(f"{command} needs --checkpoint")
    if command in ("train", "benchmark"):
        _need_int(cfg, "group_size", 1)
    if command == "drift":
        _need_int(cfg, "segment_length", cfg["h"] + cfg["T"] + 1)
        if cfg["stride"] is not None:
            _need_int(cfg, "stride", 1)
        _need_int(cfg, "sample_count", 10)
        t = cfg["threshold"]
        if t != "mad" and not (isinstance(t, (int, float)) and math.isfinite(t) and t >= 0):
            raise InvalidInputError(f"threshold must be 'mad' or a number >= 0, got {t!r}")
    if command == "symbolify":
        _need_int(cfg, "sample_count", 50)
    if command == "benchmark":
        if not cfg["mlp_hidden"] or any(not h or min(h) < 1 for h in cfg["mlp_hidden"]):
            raise InvalidInputError("mlp_hidden needs at least one non-empty layout of positive widths")
        if cfg["mlp_activation"] not in ACTIVATIONS:
            raise InvalidInputError(f"mlp_activation must be one of {ACTIVATIONS}")
    if command == "synth":
        if cfg["kind"] not in SYNTH_KINDS:
            raise InvalidInputError(f"synth needs --kind, one of {SYNTH_KINDS}")
        if not isinstance(cfg["params"], dict):
            raise InvalidInputError("params must be a JSON object")
    if command == "train" and cfg["model"] not in ("tkan", "mtkan"):
        raise InvalidInputError(f"model must be tkan or mtkan, got {cfg['model']!r}")


def _arch(cfg) -> ArchConfig:
    for key in ("h", "T", "interior_count", "degree"):
        _need_int(cfg, key, 0)
    return ArchConfig(cfg["h"], cfg["T"], tuple(cfg["hidden"]), cfg["interior_count"], cfg["degree"],
                      bool(cfg["base"]))


def train_config(cfg) -> TrainConfig:
    return TrainConfig(steps_phase1=cfg["steps_phase1"], steps_phase2=cfg["steps_phase2"],
                       prune_threshold=float(cfg["prune_threshold"]),
                       learning_rate=float(cfg["learning_rate"]), optimizer=cfg["optimizer"],
                       seed=cfg["seed"])


# --- data -------------------------------------------------------------------

def _read_header(path) -> list[str]:
    try:
        with open(path, newline="", encoding="utf-8-sig") as fh:
            return next(csv.reader(fh), [])
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc


def load_columns(paths, selection=None) -> dict[str, np.ndarray]:
    """Variables from every data file, in file then column order.

    OHLCV files become realized-volatility series and are aligned by date
    when several are given; series tables must then share their length.
    """
    dated, plain = {}, {}
    for path in paths:
        if is_ohlcv_header(_read_header(path)):
            s = load_ohlcv_csv(path)
            rv = realized_volatility(log_returns(s.close))
            dated[s.ticker] = dict(zip(s.dates[VOLATILITY_WINDOW:], rv))
        else:
            plain.update(load_series_csv(path))
    columns = {}
    if dated:
        common = sorted(set.intersection(*(set(d) for d in dated.values())))
        if not common:
            raise InvalidInputError("OHLCV files share no dates")
        columns = {name: np.array([d[t] for t in common]) for name, d in dated.items()}
    for name, values in plain.items():
        if name in columns:
            raise InvalidInputError(f"variable {name!r} appears in more than one file")
        columns[name] = values
    lengths = {len(v) for v in columns.values()}
    if len(lengths) > 1:
        raise InvalidInputError(f"variables have different lengths {sorted(lengths)}")
    if selection:
        missing = [c for c in selection if c not in columns]
        if missing:
            raise InvalidInputError(f"unknown column(s) {missing}; available {list(columns)}")
        columns = {c: columns[c] for c in selection}
    return columns


# --- commands ---------------------------------------------------------------

def _echo(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in ("out", "config")}


def cmd_train(cfg: dict, out: Path) -> dict:
    arch, tc = _arch(cfg), train_config(cfg)
    columns = load_columns(cfg["data"], cfg["columns"])
    names = list(columns)
    if cfg["model"] == "tkan":
        groups = [[n] for n in names]
    elif cfg["group_file"]:
        groups = [list(g.members) for g in load_group_file(cfg["group_file"], names, arch.h, arch.T)]
    else:
        groups = [list(g.members) for g in partition_variables(len(names), cfg["group_size"], names)]
    files, logs = {}, []
    for i, members in enumerate(groups):
        matrix = np.column_stack([columns[n] for n in members])
        tr, te = train_test_windows(matrix if len(members) > 1 else matrix[:, 0], arch.h, arch.T)
        net, tlog = fit_model(arch.widths(len(members)), tr, tc, arch.interior_count, arch.degree, arch.base)
        test = evaluate(predict(net, te.net_inputs), te.targets)
        name = f"checkpoints/{i:03d}.json"
        meta = {"model": cfg["model"], "columns": members, "h": arch.h, "T": arch.T}
        files[name] = (net, tr.normalization.to_dict(), meta)
        logs.append({"checkpoint": name, "columns": members, **tlog.to_dict(),
                     "test_standardized": test,
                     "parameters": count_parameters(net), "active_parameters": count_parameters(net, True)})
        log.info("trained %s on %s: final loss %.4g", cfg["model"], members, tlog.final_loss)
    for name, (net, norm, meta) in files.items():
        save_checkpoint(out / name, net, norm, meta)
    atomic_write_json(out / "train_log.json", {"models": logs})
    return {"checkpoints": list(files), "train_log": "train_log.json"}


def _checkpoint_paths(target) -> list[Path]:
    p = Path(target)
    if p.is_dir():
        found = sorted((p / "checkpoints").glob("*.json")) or sorted(p.glob("*.json"))
        found = [f for f in found if f.name not in ("config.json", "train_log.json")]
        if not found:
            raise IoError(f"no checkpoints in {p}")
        return found
    if not p.exists():
        raise IoError(f"checkpoint {p} does not exist")
    return [p]


def _load_checkpoint(path):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc


def cmd_predict(cfg: dict, out: Path) -> dict:
    models = [_load_checkpoint(p) for p in _checkpoint_paths(cfg["checkpoint"])]
    columns = load_columns(cfg["data"])
    rows, curves = [], []
    for net, norm_d, meta in models:
        members = meta.get("columns") or [list(columns)[0]]
        h, T = int(meta.get("h", net.widths[0] // len(members))), int(meta.get("T", net.widths[-1] // len(members)))
        missing = [m for m in members if m not in columns]
        if missing:
            raise InvalidInputError(f"data lacks column(s) {missing} needed by the checkpoint")
        norm = Normalization.from_dict(norm_d) if norm_d else Normalization(np.zeros(len(members)), np.ones(len(members)))
        matrix = np.column_stack([columns[m] for m in members])
        end = matrix.shape[0] - (T if cfg["backtest"] else 0)
        if end < h:
            raise InvalidInputError(f"need at least {h + (T if cfg['backtest'] else 0)} observations, got {matrix.shape[0]}")
        window = matrix[end - h:end]
        z = (window - norm.mean) / norm.std
        flat = flatten_variable_major(z) * norm.input_scale
        fc = unflatten(predict(net, flat), T, len(members)) * norm.std + norm.mean
        for v, name in enumerate(members):
            actual = matrix[end:end + T, v] if cfg["backtest"] else None
            for step in range(T):
                a = "" if actual is None else repr(float(actual[step]))
                rows.append([name, str(step + 1), a, repr(float(fc[step, v]))])
            curves.append((name, matrix[:end, v], matrix[end:end + T, v] if cfg["backtest"] else None, fc[:, v]))
    text = "series_id,step,actual,predicted\n" + "".join(",".join(r) + "\n" for r in rows)
    written = {"forecast": "forecast.csv"}
    svg = _forecast_svg(curves) if cfg["plot"] else None
    atomic_write_text(out / "forecast.csv", text)
    if svg is not None:
        atomic_write_text(out / "forecast.svg", svg)
        written["plot"] = "forecast.svg"
    return written


def _forecast_svg(curves, history: int = 200) -> str:
    import io

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n = len(curves)
    with matplotlib.rc_context({"svg.hashsalt": "kanf", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(n, 1, figsize=(7, 2.2 * n), squeeze=False)
        for ax, (name, past, actual, fc) in zip(axes[:, 0], curves):
            past = past[-history:]
            t0 = len(past)
            truth = past if actual is None else np.concatenate([past, actual])
            ax.plot(np.arange(len(truth)), truth, color="tab:blue", lw=1, label="true")
            ax.plot(np.arange(t0, t0 + len(fc)), fc, color="tab:red", lw=1, label="forecast")
            ax.set_title(str(name), fontsize=9)
            ax.legend(fontsize=7, loc="upper left")
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return buf.getvalue()


def cmd_drift(cfg: dict, out: Path) -> dict:
    arch, tc = _arch(cfg), train_config(cfg)
    columns = load_columns(cfg["data"], cfg["columns"])
    if len(columns) != 1:
        raise InvalidInputError(f"drift analyses one variable; select one of {list(columns)} with --columns")
    series = next(iter(columns.values()))
    ens = fit_ensemble(series, cfg["segment_length"], cfg["stride"], arch, tc, jobs=cfg["jobs"])
    threshold = None if cfg["threshold"] == "mad" else float(cfg["threshold"])
    report = detect_drift(ens, threshold, cfg["sample_count"])
    doc = {"variable": next(iter(columns)), **report.to_dict(),
           "segment_final_losses": [m.final_loss for m in ens.models]}
    atomic_write_json(out / "drift_report.json", doc)
    atomic_write_text(out / "distance_matrix.csv", report.matrix_csv())
    return {"report": "drift_report.json", "matrix": "distance_matrix.csv", "flagged": report.flagged}


def cmd_symbolify(cfg: dict, out: Path) -> dict:
    net, _, meta = _load_checkpoint(_checkpoint_paths(cfg["checkpoint"])[0])
    report = symbolify_network(net, sample_count=cfg["sample_count"])
    atomic_write_json(out / "symbolic.json", {"checkpoint_metadata": meta, **report.to_dict()})
    atomic_write_text(out / "formulas.txt", report.text())
    return {"report": "symbolic.json", "formulas": "formulas.txt", "edges": len(report.fits)}


def cmd_benchmark(cfg: dict, out: Path) -> dict:
    arch, tc = _arch(cfg), train_config(cfg)
    columns = load_columns(cfg["data"], cfg["columns"])
    result = run_benchmark(columns, arch.h, arch.T, arch.hidden, cfg["group_size"],
                           [tuple(h) for h in cfg["mlp_hidden"]], tc, arch.interior_count, arch.degree,
                           cfg["mlp_activation"])
    atomic_write_text(out / "benchmark.csv", result.csv())
    return {"results": "benchmark.csv", "rows": len(result.rows)}


def cmd_synth(cfg: dict, out: Path) -> dict:
    s = synth_generate(cfg["kind"], cfg["params"], cfg["seed"])
    write_series_csv(out / "series.csv", s.series)
    meta = {"kind": s.kind, "switch_index": s.switch_index, "lag": s.lag}
    atomic_write_json(out / "synth.json", meta)
    return {"series": "series.csv", **meta}


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "drift": cmd_drift,
            "symbolify": cmd_symbolify, "benchmark": cmd_benchmark, "synth": cmd_synth}


def _setup_logging():
    level = LOG_LEVELS.get(os.environ.get("KANF_LOG", "error").strip().lower(), logging.ERROR)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        out = Path(args.out)
        summary = COMMANDS[args.command](cfg, out)
        atomic_write_json(out / "config.json", {"command": args.command, **_echo(cfg)})
    except KanfError as exc:
        return _fail(exc.kind, str(exc), exc.exit_code)
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        return _fail("io", f"{exc.filename or ''}: {exc.strerror or exc}".lstrip(": "), 2)
    except OSError as exc:
        return _fail("io", str(exc), 2)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())

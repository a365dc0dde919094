"""Command-line front end: train, forecast, evaluate, ablate, gridsearch,
synth, plot.

Every command validates its full configuration before doing any work, and
all output files are written atomically (temp file + rename), so a failed
run never leaves a partial artifact. Exit codes: 0 success, 1 usage or
configuration error, 2 data error, 3 numerical divergence during
training.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .data import (DataError, Normalizer, load_csv, make_windows, normalize,
                   denormalize, split_chronological, prepare, synth_series)
from .model import VARIANTS, HyVaeConfig, make_variant, deserialize, serialize
from .rng import Rng
from .training import (DEFAULT_GRID, DivergenceError, ar_baseline, evaluate,
                       grid_search, run_ablation, train)
from .viz import render_forecast_svg

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


class UsageError(Exception):
    """Bad flags or configuration (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):          # argparse's default exits with code 2
        raise UsageError(message)


# One flat namespace of settings; a --config file may supply any of them
# and explicit flags win over file values, which win over the defaults.
DEFAULTS = {
    "column": 0,
    "header": False,
    "m": 50,
    "n": 1,
    "l": 10,
    "L": 4,
    "d": 32,
    "warmup_epochs": 30,
    "epochs": 100,
    "batch_size": 64,
    "lr": 0.01,
    "seed": 0,
    "seeds": [0, 1, 2, 3, 4],
    "variant": "full",
    "mode": "mean",
    "steps": 1,
    "horizons": [1],
    "parallel": 1,
    "normalized": False,
    "quiet": False,
    "kind": "sine",
    "length": 1400,
}

_INT_KEYS = {"column", "m", "n", "l", "L", "d", "warmup_epochs", "epochs",
             "batch_size", "seed", "parallel", "steps", "length"}
_FLOAT_KEYS = {"lr"}
_BOOL_KEYS = {"header", "normalized", "quiet"}
_LIST_KEYS = {"seeds", "horizons"}
_STR_KEYS = {"data", "model", "out", "report", "grid", "variant", "mode",
             "kind"}
CONFIG_KEYS = _INT_KEYS | _FLOAT_KEYS | _BOOL_KEYS | _LIST_KEYS | _STR_KEYS


def _parse_int_list(value):
    if isinstance(value, (list, tuple)):
        items = list(value)
    else:
        items = [part for part in str(value).split(",") if part.strip()]
    if not items:
        raise ValueError("empty list")
    return [int(item) for item in items]


def _file_config(args) -> dict:
    path = getattr(args, "config", None)
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError("config file must hold a flat object of settings")
    settings = {}
    for key, value in raw.items():
        if key not in CONFIG_KEYS:
            raise UsageError(f"unknown config key {key!r}")
        try:
            if key in _INT_KEYS:
                value = int(value)
            elif key in _FLOAT_KEYS:
                value = float(value)
            elif key in _BOOL_KEYS:
                value = bool(value)
            elif key in _LIST_KEYS:
                value = _parse_int_list(value)
            else:
                value = str(value)
        except (TypeError, ValueError):
            raise UsageError(
                f"config key {key!r} has invalid value {value!r}") from None
        settings[key] = value
    return settings


class _Settings:
    """Merged view of flags > config file > defaults."""

    def __init__(self, args):
        self._args = args
        self._file = _file_config(args)

    def __getitem__(self, key):
        value = getattr(self._args, key, None)
        if value is None:
            value = self._file.get(key)
        if value is None:
            value = DEFAULTS.get(key)
        if key in _LIST_KEYS and value is not None:
            try:
                value = _parse_int_list(value)
            except ValueError:
                raise UsageError(
                    f"{key} must be a comma-separated list of integers, "
                    f"got {value!r}") from None
        return value

    def require(self, key):
        value = self[key]
        if value is None:
            flag = "--" + key.replace("_", "-")
            raise UsageError(
                f"missing required setting {key!r} (pass {flag} or put "
                f"{key} in a --config file)")
        return value


def _write_atomic(path, payload):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if isinstance(payload, bytes) else "w"
    with open(tmp, mode) as handle:
        handle.write(payload)
    os.replace(tmp, path)


def _say(settings, message):
    if not settings["quiet"]:
        print(message)


def _load_series(settings):
    return load_csv(settings.require("data"), column=settings["column"],
                    has_header=settings["header"])


def _build_config(settings) -> HyVaeConfig:
    d = settings["d"]
    return HyVaeConfig(
        l=settings["l"], L=settings["L"], d_z=d, d_h=d, n=settings["n"],
        m=settings["m"], warmup_epochs=settings["warmup_epochs"],
        seed=settings["seed"])


def _load_model(settings):
    path = settings.require("model")
    try:
        payload = Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read model file: {exc}") from None
    model, norm = deserialize(payload)
    return model, Normalizer(norm["min"], norm["max"])


def _metric_rows(per_horizon) -> list:
    return [(h, ms.mse, ms.mae, ms.mape) for h, ms in sorted(per_horizon.items())]


def _print_table(header, rows):
    widths = [max(len(str(header[i])), *(len(str(r[i])) for r in rows))
              for i in range(len(header))]
    for line in [header] + rows:
        print("  ".join(str(cell).ljust(widths[i])
                        for i, cell in enumerate(line)).rstrip())


def _float_cell(value: float) -> str:
    return f"{value:.6e}"


# -- commands -----------------------------------------------------------------

def cmd_train(args) -> int:
    settings = _Settings(args)
    config = _build_config(settings)
    variant = settings["variant"]
    if variant not in VARIANTS:
        raise UsageError(f"unknown variant {variant!r}; pick from {VARIANTS}")
    epochs = settings["epochs"]
    series = _load_series(settings)
    splits = prepare(series, m=config.m, n=config.n)
    model = make_variant(config, variant)

    def progress(stats):
        line = (f"epoch {stats.epoch}/{epochs} loss={stats.train_loss:.6f} "
                f"val_mse={stats.val_mse:.6f} beta={stats.beta:.3f}")
        if stats.clipped_batches:
            line += f" clipped={stats.clipped_batches}"
        _say(settings, line)

    model, report = train(
        model, splits, epochs=epochs, batch_size=settings["batch_size"],
        lr=settings["lr"], rng=Rng(config.seed), on_epoch=progress)

    out = Path(settings["out"] or "model.json")
    payload = serialize(model, {"min": splits.normalizer.min,
                                "max": splits.normalizer.max})
    _write_atomic(out, payload)
    report_path = settings["report"] or out.with_suffix(".report.json")
    report_doc = {
        "best_epoch": report.best_epoch,
        "best_val_mse": report.best_val_mse,
        "wall_time_s": report.wall_time_s,
        "variant": variant,
        "epochs": [
            {"epoch": e.epoch, "train_loss": e.train_loss, "recon": e.recon,
             "kl_ladder": e.kl_ladder, "kl_temporal": e.kl_temporal,
             "beta": e.beta, "val_mse": e.val_mse,
             "clipped_batches": e.clipped_batches}
            for e in report.epochs
        ],
    }
    _write_atomic(Path(report_path), json.dumps(report_doc, indent=2) + "\n")
    _say(settings, f"best epoch {report.best_epoch} "
         f"(validation MSE {report.best_val_mse:.6g}); wrote {out}")
    return EXIT_OK


def cmd_forecast(args) -> int:
    settings = _Settings(args)
    model, normalizer = _load_model(settings)
    mode = settings["mode"]
    if mode not in ("mean", "sample"):
        raise UsageError(f"unknown forecast mode {mode!r}")
    steps = settings["steps"]
    n, m = model.config.n, model.config.m
    if not 1 <= steps <= n:
        raise UsageError(
            f"steps={steps} outside this model's horizon range 1..{n}")
    series = _load_series(settings)
    values = series.values
    if values.size < m:
        raise DataError(
            f"forecast needs at least m={m} trailing values, "
            f"got {values.size}")

    if values.size >= m + steps:       # score against the held-out tail
        context = values[values.size - m - steps:values.size - steps]
        truth = values[values.size - steps:]
    else:                              # extend past the end of the series
        context = values[-m:]
        truth = None
    rng = Rng(settings["seed"]) if mode == "sample" else None
    preds = model.forecast(normalize(context, normalizer),
                           mode=mode, rng=rng).data.reshape(-1)[:steps]

    if settings["normalized"]:
        truth_out = None if truth is None else normalize(truth, normalizer)
        preds_out = preds
    else:
        truth_out = truth
        preds_out = denormalize(preds, normalizer)
    lines = ["step,prediction" + (",truth" if truth_out is not None else "")]
    for k in range(steps):
        row = f"{k + 1},{preds_out[k]:.17g}"
        if truth_out is not None:
            row += f",{truth_out[k]:.17g}"
        lines.append(row)
    out = Path(settings["out"] or "forecast.csv")
    _write_atomic(out, "\n".join(lines) + "\n")
    _say(settings, f"wrote {steps} forecast rows to {out}")
    return EXIT_OK


def _test_windows_for(settings, model, normalizer):
    series = _load_series(settings)
    m, n = model.config.m, model.config.n
    segments = split_chronological(series, min_length=m + n)
    return make_windows(normalize(segments[2].values, normalizer), m, n,
                        split="test", normalizer=normalizer)


def cmd_evaluate(args) -> int:
    settings = _Settings(args)
    model, normalizer = _load_model(settings)
    horizons = settings["horizons"]
    dataset = _test_windows_for(settings, model, normalizer)
    report = evaluate(model, dataset, horizons)
    rows = _metric_rows(report.horizons)
    _print_table(("horizon", "mse", "mae", "mape"),
                 [(h, _float_cell(a), _float_cell(b), _float_cell(c))
                  for h, a, b, c in rows])
    if settings["out"]:
        lines = ["horizon,mse,mae,mape"]
        lines += [f"{h},{a:.17g},{b:.17g},{c:.17g}" for h, a, b, c in rows]
        _write_atomic(Path(settings["out"]), "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_ablate(args) -> int:
    settings = _Settings(args)
    config = _build_config(settings)
    seeds = settings["seeds"]
    series = _load_series(settings)
    splits = prepare(series, m=config.m, n=config.n)
    table = run_ablation(
        splits, config, seeds=seeds, epochs=settings["epochs"],
        batch_size=settings["batch_size"], lr=settings["lr"])
    rows = [(kind, table[kind]["mse"], table[kind]["mae"], table[kind]["mape"])
            for kind in ("full", "no_subseq", "no_entire")]
    _print_table(("variant", "mse", "mae", "mape"),
                 [(k, _float_cell(a), _float_cell(b), _float_cell(c))
                  for k, a, b, c in rows])
    if settings["out"]:
        lines = ["variant,mse,mae,mape"]
        lines += [f"{k},{a:.17g},{b:.17g},{c:.17g}" for k, a, b, c in rows]
        _write_atomic(Path(settings["out"]), "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    settings = _Settings(args)
    if settings["grid"]:
        try:
            grid = json.loads(Path(settings["grid"]).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read grid file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"grid file is not valid JSON: {exc}") from None
        if not isinstance(grid, dict):
            raise UsageError("grid file must map hyperparameter names to lists")
    else:
        grid = DEFAULT_GRID
    series = _load_series(settings)
    splits = prepare(series, m=settings["m"], n=settings["n"])
    result = grid_search(
        splits, grid, seeds=settings["seeds"], epochs=settings["epochs"],
        warmup_epochs=settings["warmup_epochs"],
        parallelism=settings["parallel"])
    for params, reason in result.skipped:
        _say(settings, f"skipped {params}: {reason}")
    header = ("rank", "L", "l", "d", "batch_size", "lr", "mean_val_mse",
              "test_mse", "test_mae", "test_mape")
    rows = []
    for rank, row in enumerate(result.rows, start=1):
        p = row.params
        rows.append((rank, p["L"], p["l"], p["d"], p["batch_size"], p["lr"],
                     row.mean_val_mse, row.mean_test.mse, row.mean_test.mae,
                     row.mean_test.mape))
    shown = [(r[0], r[1], r[2], r[3], r[4], r[5], _float_cell(r[6]),
              _float_cell(r[7]), _float_cell(r[8]), _float_cell(r[9]))
             for r in rows[:10]]
    _print_table(header, shown)
    if settings["out"]:
        lines = [",".join(header)]
        lines += [",".join(str(c) for c in r[:6])
                  + "," + ",".join(f"{c:.17g}" for c in r[6:]) for r in rows]
        _write_atomic(Path(settings["out"]), "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    settings = _Settings(args)
    params = {}
    for item in args.param or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--param expects name=value, got {item!r}")
        try:
            params[name] = float(value)
        except ValueError:
            raise UsageError(f"--param {name} has non-numeric value "
                             f"{value!r}") from None
    series = synth_series(settings["kind"], settings["length"],
                          params or None, seed=settings["seed"])
    out = Path(settings["out"] or "series.csv")
    _write_atomic(out, "\n".join(f"{v:.17g}" for v in series.values) + "\n")
    _say(settings, f"wrote {len(series)} values to {out}")
    return EXIT_OK


def _read_forecast_csv(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read forecast file: {exc}") from None
    preds, truths = [], []
    has_truth = True
    rows = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        cells = line.split(",")
        if lineno == 1 and cells[0].strip() == "step":
            continue
        if len(cells) < 2:
            raise DataError(f"{path}: line {lineno} has no prediction column")
        try:
            preds.append(float(cells[1]))
            if len(cells) >= 3:
                truths.append(float(cells[2]))
            else:
                has_truth = False
        except ValueError:
            raise DataError(
                f"{path}: line {lineno} is not numeric: {line!r}") from None
        rows += 1
    if rows == 0:
        raise DataError(f"{path}: no forecast rows")
    return np.array(preds), (np.array(truths) if has_truth else None)


def cmd_plot(args) -> int:
    settings = _Settings(args)
    truth = None
    series = []
    for path in args.inputs:
        preds, file_truth = _read_forecast_csv(path)
        if truth is None and file_truth is not None:
            truth = file_truth
        series.append((Path(path).stem, preds))
    if truth is None:
        raise DataError(
            "none of the forecast files has a truth column to overlay")
    svg = render_forecast_svg(truth, series)
    out = Path(settings["out"] or "forecast.svg")
    _write_atomic(out, svg)
    _say(settings, f"wrote {out}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="random seed (default: 0)")
    common.add_argument("--config", default=None,
                        help="JSON file of settings; flags override it")
    common.add_argument("--quiet", action="store_true", default=None,
                        help="suppress progress output (default: off)")
    return common


def _add_data_flags(sub):
    sub.add_argument("--data", default=None, help="input series CSV")
    sub.add_argument("--column", type=int, default=None,
                     help="CSV column to read (default: 0)")
    sub.add_argument("--header", action="store_true", default=None,
                     help="skip the first CSV line (default: off)")


def _add_hyper_flags(sub):
    sub.add_argument("--m", type=int, default=None,
                     help="window length (default: 50)")
    sub.add_argument("--n", type=int, default=None,
                     help="forecast horizon (default: 1)")
    sub.add_argument("--l", type=int, default=None,
                     help="subsequence length (default: 10)")
    sub.add_argument("--L", type=int, default=None,
                     help="ladder size (default: 4)")
    sub.add_argument("--d", type=int, default=None,
                     help="latent and hidden width (default: 32)")
    sub.add_argument("--warmup-epochs", dest="warmup_epochs", type=int,
                     default=None,
                     help="KL warm-up length in epochs (default: 30)")
    sub.add_argument("--epochs", type=int, default=None,
                     help="training epochs (default: 100)")
    sub.add_argument("--batch-size", dest="batch_size", type=int, default=None,
                     help="mini-batch size (default: 64)")
    sub.add_argument("--lr", type=float, default=None,
                     help="Adam learning rate (default: 0.01)")


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = _Parser(prog="hyvae",
                     description="Hierarchical variational time-series "
                                 "forecasting")
    commands = parser.add_subparsers(dest="command", metavar="command")

    sub = commands.add_parser("train", parents=[common],
                              help="fit a model and write a model file")
    _add_data_flags(sub)
    _add_hyper_flags(sub)
    sub.add_argument("--variant", default=None, choices=list(VARIANTS),
                     help="model variant (default: full)")
    sub.add_argument("--out", default=None,
                     help="model file path (default: model.json)")
    sub.add_argument("--report", default=None,
                     help="training report path (default: <out>.report.json)")
    sub.set_defaults(func=cmd_train)

    sub = commands.add_parser("forecast", parents=[common],
                              help="predict future steps with a model file")
    sub.add_argument("--model", default=None, help="trained model file")
    _add_data_flags(sub)
    sub.add_argument("--steps", type=int, default=None,
                     help="steps to forecast (default: 1)")
    sub.add_argument("--mode", default=None, choices=["mean", "sample"],
                     help="posterior means or one sampled path "
                          "(default: mean)")
    sub.add_argument("--normalized", action="store_true", default=None,
                     help="emit values in normalized [0,1] space "
                          "(default: original units)")
    sub.add_argument("--out", default=None,
                     help="forecast CSV path (default: forecast.csv)")
    sub.set_defaults(func=cmd_forecast)

    sub = commands.add_parser("evaluate", parents=[common],
                              help="score a model on the chronological "
                                   "test split")
    sub.add_argument("--model", default=None, help="trained model file")
    _add_data_flags(sub)
    sub.add_argument("--horizons", default=None,
                     help="comma-separated horizons to score (default: 1)")
    sub.add_argument("--out", default=None,
                     help="metrics CSV path (default: print only)")
    sub.set_defaults(func=cmd_evaluate)

    sub = commands.add_parser("ablate", parents=[common],
                              help="train full/no_subseq/no_entire and "
                                   "compare")
    _add_data_flags(sub)
    _add_hyper_flags(sub)
    sub.add_argument("--seeds", default=None,
                     help="comma-separated seeds (default: 0,1,2,3,4)")
    sub.add_argument("--out", default=None,
                     help="ablation CSV path (default: print only)")
    sub.set_defaults(func=cmd_ablate)

    sub = commands.add_parser("gridsearch", parents=[common],
                              help="rank hyperparameter combinations by "
                                   "validation MSE")
    _add_data_flags(sub)
    sub.add_argument("--m", type=int, default=None,
                     help="window length (default: 50)")
    sub.add_argument("--n", type=int, default=None,
                     help="forecast horizon (default: 1)")
    sub.add_argument("--warmup-epochs", dest="warmup_epochs", type=int,
                     default=None,
                     help="KL warm-up length in epochs (default: 30)")
    sub.add_argument("--epochs", type=int, default=None,
                     help="training epochs per cell (default: 100)")
    sub.add_argument("--grid", default=None,
                     help="JSON file of candidate lists (default: built-in "
                          "search ranges)")
    sub.add_argument("--seeds", default=None,
                     help="comma-separated seeds (default: 0,1,2,3,4)")
    sub.add_argument("--parallel", type=int, default=None,
                     help="worker processes (default: 1)")
    sub.add_argument("--out", default=None,
                     help="ranked CSV path (default: print only)")
    sub.set_defaults(func=cmd_gridsearch)

    sub = commands.add_parser("synth", parents=[common],
                              help="generate a synthetic series CSV")
    sub.add_argument("--kind", default=None,
                     choices=["sine", "trend_season", "ar1"],
                     help="generator family (default: sine)")
    sub.add_argument("--length", type=int, default=None,
                     help="series length (default: 1400)")
    sub.add_argument("--param", action="append", default=None,
                     metavar="NAME=VALUE",
                     help="generator parameter override, repeatable")
    sub.add_argument("--out", default=None,
                     help="output CSV path (default: series.csv)")
    sub.set_defaults(func=cmd_synth)

    sub = commands.add_parser("plot", parents=[common],
                              help="render forecast CSVs as an SVG overlay")
    sub.add_argument("inputs", nargs="+",
                     help="forecast CSVs (step,prediction,truth)")
    sub.add_argument("--out", default=None,
                     help="SVG path (default: forecast.svg)")
    sub.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Config-driven command line tying the modules into reproducible experiments.

Subcommands: ``ingest`` (prices -> split change panels), ``synth`` (generate a
coupled synthetic panel), ``render`` (panels -> grayscale PNG frames),
``train`` (fit a video forecaster, write a checkpoint), ``benchmark`` (score
configured methods on test windows and emit the accuracy table).

Every command takes ``--config PATH`` plus optional ``--seed`` (overrides the
config) and ``--out DIR`` (overrides $FRAMECAST_OUT); outputs carry a manifest
with the config hash, seed and tool version, and reruns with identical inputs
are byte-identical. Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__, baselines, evaluation, imaging, synthdata
from .manifest import write_manifest
from .model import ModelConfig, TrainConfig
from .panels import (
    ChangePanel,
    compute_relative_change,
    load_close_prices,
    make_windows,
    read_change_panel,
    split_by_date,
)

log = logging.getLogger(__name__)

OUT_ENV_VAR = "FRAMECAST_OUT"

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "data": {
        "source": None,           # close-price CSV (date column + asset columns)
        "assets": None,           # column names; None = every non-date column
        "lag": 5,
        "train_val_end": "2018-12-31",
        "test_start": "2019-01-01",
        "val_fraction": 0.05,
        "split_dir": None,        # directory with train.csv/val.csv/test.csv
    },
    "synth": {
        "length": 900,
        "strength": 0.72,
        "noise_std": 1.0,
        "train_rows": 500,
        "val_rows": 50,
    },
    "layout": {
        "kinds": ["grid_tiles"],  # for render: grid_tiles, scatter_pixels, tiled_vector, shuffled
        "arrangement": None,      # asset -> [row, col]; None = built-in default
    },
    "model": {
        "d_y": 50,
        "d_z": 50,
        "k": 5,
        "horizon": 10,
        "image_size": [64, 64],
        "encoder_depth": "small",
        "kl_weight": 1.0,
        "l2_weight": 1.0e-4,
        "obs_std": 1.0,
        "d_w": 16,
        "enc_dim": 128,
        "hidden_dim": 128,
        "base_channels": 32,
    },
    "train": {
        "method": "video_full",
        "epochs": 200,
        "batch_size": 16,
        "learning_rate": 3.0e-3,
    },
    "render": {
        "limit": None,            # cap on rendered time steps
    },
    "benchmark": {
        "methods": ["naive_up", "persistence", "ar"],
        "lambdas": [0.5, 10.0],
        "ar_max_order": 5,
        "zero_policy": "zero_is_up",
    },
}

VIDEO_METHODS = {
    "video_full": baselines.fit_video_full,
    "video_ind": baselines.fit_video_ind,
    "video_shuffled": baselines.fit_video_shuffled,
    "video_scatter": baselines.fit_video_scatter,
    "vector": baselines.fit_vector,
}


class UsageError(Exception):
    """Bad flags or an unusable configuration."""


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | Path | None) -> dict:
    """User YAML merged over the built-in defaults."""
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    loaded = yaml.safe_load(path.read_text()) or {}
    if not isinstance(loaded, dict):
        raise UsageError(f"config root must be a mapping: {path}")
    unknown = set(loaded) - set(DEFAULT_CONFIG)
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    return _deep_merge(DEFAULT_CONFIG, loaded)


def _model_config(cfg: dict) -> ModelConfig:
    section = dict(cfg["model"])
    section["image_size"] = tuple(section["image_size"])
    return ModelConfig(**section)


def _train_config(cfg: dict) -> TrainConfig:
    section = cfg["train"]
    return TrainConfig(epochs=section["epochs"], batch_size=section["batch_size"],
                       learning_rate=section["learning_rate"])


def _arrangement(cfg: dict) -> dict[str, tuple[int, int]] | None:
    raw = cfg["layout"]["arrangement"]
    if raw is None:
        return None
    return {asset: tuple(cell) for asset, cell in raw.items()}


def resolve_panels(cfg: dict, seed: int) -> tuple[ChangePanel, ChangePanel, ChangePanel]:
    """Produce (train, val, test) change panels from whichever source is configured.

    Priority: an explicit split directory, then a close-price CSV run through the
    ingest pipeline, then the synthetic coupled panel.
    """
    data = cfg["data"]
    if data["split_dir"]:
        split_dir = Path(data["split_dir"])
        parts = []
        for name in ("train", "val", "test"):
            path = split_dir / f"{name}.csv"
            if not path.exists():
                raise UsageError(f"split file missing: {path}")
            parts.append(read_change_panel(path, lag=data["lag"]))
        return tuple(parts)
    if data["source"]:
        panel = _ingest_changes(cfg)
        return split_by_date(panel, data["train_val_end"], data["test_start"],
                             data["val_fraction"])
    return _synth_splits(cfg, seed)


def _ingest_changes(cfg: dict) -> ChangePanel:
    data = cfg["data"]
    assets = data["assets"]
    if assets is None:
        import pandas as pd

        header = pd.read_csv(data["source"], nrows=0).columns
        assets = [c for c in header if c != "date"]
    model = cfg["model"]
    min_rows = data["lag"] + model["k"] + model["horizon"]
    prices = load_close_prices(data["source"], assets, min_rows=min_rows)
    return compute_relative_change(prices, lag=data["lag"])


def _synth_splits(cfg: dict, seed: int) -> tuple[ChangePanel, ChangePanel, ChangePanel]:
    synth = cfg["synth"]
    panel = synthdata.demo_market_panel(
        length=synth["length"], strength=synth["strength"],
        noise_std=synth["noise_std"], seed=seed)
    n_train, n_val = synth["train_rows"], synth["val_rows"]
    if n_train + n_val >= len(panel):
        raise UsageError("synth train_rows + val_rows must leave room for a test span")

    def rows(lo, hi):
        return ChangePanel(dates=panel.dates[lo:hi], assets=panel.assets,
                           changes=panel.changes[lo:hi], lag=panel.lag)

    return (rows(0, n_train), rows(n_train, n_train + n_val),
            rows(n_train + n_val, len(panel)))


def _out_dir(args, command: str) -> Path:
    root = args.out or os.environ.get(OUT_ENV_VAR) or "framecast_out"
    path = Path(root) / command
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_split_summary(out: Path, parts, extra: dict) -> None:
    lines = []
    for name, part in zip(("train", "val", "test"), parts):
        lines.append(f"{name}: {len(part)} rows, "
                     f"{part.dates[0].date()} .. {part.dates[-1].date()}")
    for key, value in extra.items():
        lines.append(f"{key}: {value}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")


# -- commands ----------------------------------------------------------------


def cmd_ingest(cfg: dict, seed: int, args) -> int:
    data = cfg["data"]
    if not data["source"]:
        raise UsageError("ingest requires data.source (close-price CSV)")
    out = _out_dir(args, "ingest")
    changes = _ingest_changes(cfg)
    prices = load_close_prices(data["source"], list(changes.assets))
    parts = split_by_date(changes, data["train_val_end"], data["test_start"],
                          data["val_fraction"])
    for name, part in zip(("train", "val", "test"), parts):
        part.to_csv(out / f"{name}.csv")
    _write_split_summary(out, parts, {
        "dropped_rows": prices.dropped_rows,
        "lag": data["lag"],
        "assets": ",".join(changes.assets),
    })
    write_manifest(out, "ingest", cfg, seed)
    print(f"ingest: wrote train/val/test panels to {out}")
    return 0


def cmd_synth(cfg: dict, seed: int, args) -> int:
    out = _out_dir(args, "synth")
    parts = _synth_splits(cfg, seed)
    full = synthdata.demo_market_panel(
        length=cfg["synth"]["length"], strength=cfg["synth"]["strength"],
        noise_std=cfg["synth"]["noise_std"], seed=seed)
    full.to_csv(out / "panel.csv")
    for name, part in zip(("train", "val", "test"), parts):
        part.to_csv(out / f"{name}.csv")
    _write_split_summary(out, parts, {
        "up_fractions": np.array2string(synthdata.up_fraction(full), precision=3),
    })
    write_manifest(out, "synth", cfg, seed)
    print(f"synth: wrote coupled 9-asset panel and splits to {out}")
    return 0


def _layouts_for_render(cfg: dict, train: ChangePanel, seed: int) -> dict[str, imaging.Layout]:
    image_size = tuple(cfg["model"]["image_size"])
    arrangement = _arrangement(cfg)
    layouts: dict[str, imaging.Layout] = {}
    for kind in cfg["layout"]["kinds"]:
        if kind == "grid_tiles":
            layouts[kind] = imaging.build_grid_layout(
                train.assets, arrangement=arrangement, image_size=image_size)
        elif kind == "shuffled":
            base = imaging.build_grid_layout(train.assets, arrangement=arrangement,
                                             image_size=image_size)
            corr = np.corrcoef(train.changes, rowvar=False)
            layouts[kind] = imaging.shuffle_layout(base, seed, corr)
        elif kind == "scatter_pixels":
            layouts[kind] = imaging.scatter_layout_from_projection(train, image_size)
        elif kind == "tiled_vector":
            layouts[kind] = imaging.build_tiled_vector_layout(train.assets, image_size)
        else:
            raise UsageError(f"unknown layout kind for render: {kind!r}")
    return layouts


def cmd_render(cfg: dict, seed: int, args) -> int:
    out = _out_dir(args, "render")
    train, val, test = resolve_panels(cfg, seed)
    full = ChangePanel(
        dates=train.dates.append(val.dates).append(test.dates),
        assets=train.assets,
        changes=np.vstack([train.changes, val.changes, test.changes]),
        lag=train.lag,
    )
    limit = cfg["render"]["limit"]
    rows = len(full) if limit is None else min(int(limit), len(full))
    layouts = _layouts_for_render(cfg, train, seed)
    count = 0
    for kind, layout in layouts.items():
        imaging.save_layout(layout, out / f"layout_{kind}.json")
        frames = imaging.render_sequence(full.changes[:rows], layout)
        for i in range(rows):
            stamp = full.dates[i].strftime("%Y%m%d")
            imaging.write_frame_png(frames[i], out / f"{stamp}_{kind}.png")
            count += 1
    write_manifest(out, "render", cfg, seed)
    print(f"render: wrote {count} frames ({rows} steps x {len(layouts)} layouts) to {out}")
    return 0


def cmd_train(cfg: dict, seed: int, args) -> int:
    method = cfg["train"]["method"]
    if method not in VIDEO_METHODS:
        raise UsageError(
            f"train.method must be one of {sorted(VIDEO_METHODS)}, got {method!r}")
    out = _out_dir(args, "train")
    train, val, test = resolve_panels(cfg, seed)
    model_cfg = _model_config(cfg)
    train_cfg = _train_config(cfg)
    fit = VIDEO_METHODS[method]
    kwargs = {}
    if method in ("video_full", "video_shuffled"):
        kwargs["arrangement"] = _arrangement(cfg)
    forecaster = fit(train, model_cfg, train_cfg, seed, val_panel=val, **kwargs)

    ckpt_dir = out / method
    if isinstance(forecaster, baselines.IndependentVideoForecaster):
        for sub in forecaster.per_asset:
            sub.save(ckpt_dir / sub.layout.assets[0])
        histories = {sub.layout.assets[0]: sub.model.history
                     for sub in forecaster.per_asset}
        finals = {a: h[-1] if h else {} for a, h in histories.items()}
        history_rows = [dict(asset=a, **e) for a, h in histories.items() for e in h]
    else:
        forecaster.save(ckpt_dir)
        history_rows = [dict(asset="all", **e) for e in forecaster.model.history]
        finals = {"all": forecaster.model.final_losses()}

    if history_rows:
        cols = sorted({key for row in history_rows for key in row})
        with open(out / "loss_curve.csv", "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in history_rows:
                fh.write(",".join(str(row.get(c, "")) for c in cols) + "\n")
    write_manifest(out, "train", cfg, seed)
    for name, losses in finals.items():
        train_total = losses.get("train_total", float("nan"))
        val_total = losses.get("val_total", float("nan"))
        print(f"train[{method}:{name}]: final train loss {train_total:.4f}, "
              f"val loss {val_total:.4f}")
    print(f"train: checkpoint written to {ckpt_dir}")
    return 0


def _build_forecasters(cfg: dict, seed: int, train: ChangePanel, val: ChangePanel):
    bench = cfg["benchmark"]
    model_cfg = _model_config(cfg)
    train_cfg = _train_config(cfg)
    horizon = model_cfg.horizon
    fitted = []
    for method in bench["methods"]:
        if method == "naive_up":
            fitted.append(baselines.NaiveUpForecaster(horizon=horizon))
        elif method == "persistence":
            fitted.append(baselines.PersistenceForecaster(horizon=horizon))
        elif method == "ar":
            series = np.vstack([train.changes, val.changes])
            fitted.append(baselines.ARForecaster.fit(
                series, horizon=horizon,
                max_order=min(bench["ar_max_order"], model_cfg.k),
                assets=train.assets))
        elif method in VIDEO_METHODS:
            kwargs = {}
            if method in ("video_full", "video_shuffled"):
                kwargs["arrangement"] = _arrangement(cfg)
            fitted.append(VIDEO_METHODS[method](
                train, model_cfg, train_cfg, seed, val_panel=val, **kwargs))
        else:
            raise UsageError(f"unknown benchmark method {method!r}")
    return fitted


def cmd_benchmark(cfg: dict, seed: int, args) -> int:
    out = _out_dir(args, "benchmark")
    bench = cfg["benchmark"]
    train, val, test = resolve_panels(cfg, seed)
    model_cfg = _model_config(cfg)
    windows = make_windows(test, k=model_cfg.k, horizon=model_cfg.horizon)
    forecasters = _build_forecasters(cfg, seed, train, val)
    result = evaluation.benchmark(forecasters, windows, lambdas=bench["lambdas"],
                                  zero_policy=bench["zero_policy"])
    (out / "benchmark.csv").write_text(result.to_csv())
    (out / "per_asset.csv").write_text(result.per_asset_csv())
    (out / "benchmark.txt").write_text(result.to_text())
    write_manifest(out, "benchmark", cfg, seed)
    print(result.to_text())
    print(f"benchmark: results written to {out}")
    return 1 if result.failures else 0


# -- entry point ---------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse errors through the 0/1/2 exit scheme
        raise UsageError(message)


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "render": cmd_render,
    "train": cmd_train,
    "benchmark": cmd_benchmark,
}


def build_parser() -> _Parser:
    parser = _Parser(prog="framecast", description=__doc__)
    parser.add_argument("--version", action="version", version=f"framecast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="YAML config path")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", type=str, default=None,
                       help=f"output root (default ${OUT_ENV_VAR} or ./framecast_out)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else int(cfg["seed"])
        return COMMANDS[args.command](cfg, seed, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary maps everything to exit 2
        log.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

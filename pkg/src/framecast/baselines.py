"""Comparison forecasters behind one shared contract.

Every forecaster exposes ``name`` and ``forecast(conditioning [k, assets]) ->
[horizon, assets]`` (finite values, deterministic under a fixed seed); batched
``forecast_many`` is available where it saves real time. Video-based methods
compose a layout, the frame renderer and the latent residual predictor; the
numeric baselines work on the raw change vectors.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import imaging
from .manifest import config_hash
from .model import ModelConfig, TrainConfig, TrainedModel, train_model
from .panels import ChangePanel, make_windows

log = logging.getLogger(__name__)

AR_RSS_FLOOR = 1e-12  # relative floor keeps AIC finite on perfectly fit series


def _derived_seed(seed: int, asset: str) -> int:
    # stable per-asset stream: unaffected by the other assets in the panel
    return (seed * 1_000_003 + zlib.crc32(asset.encode())) % (2 ** 31)


class NaiveUpForecaster:
    """Constant optimist: predicts a +1 change everywhere."""

    def __init__(self, horizon: int = 10):
        self.name = "naive_up"
        self.horizon = horizon

    def forecast(self, conditioning: np.ndarray) -> np.ndarray:
        conditioning = np.atleast_2d(conditioning)
        return np.ones((self.horizon, conditioning.shape[1]))


class PersistenceForecaster:
    """Repeats the last observed change across the horizon."""

    def __init__(self, horizon: int = 10):
        self.name = "persistence"
        self.horizon = horizon

    def forecast(self, conditioning: np.ndarray) -> np.ndarray:
        conditioning = np.atleast_2d(conditioning)
        return np.tile(conditioning[-1], (self.horizon, 1))


@dataclass
class _ARCoefficients:
    intercept: float
    coefs: np.ndarray  # lag 1 first
    order: int
    fallback: bool = False


class ARForecaster:
    """Per-asset autoregression fit by least squares with AIC order selection.

    For each asset, AR(p) models for p = 1..max_order are fit on a common sample
    (rows max_order..T-1, so AIC values are comparable) and scored with
    AIC = n ln(RSS/n) + 2(p+1); the smallest-AIC order wins, ties going to the
    smaller p. Degenerate fits fall back to persistence and are flagged.
    """

    def __init__(self, horizon: int = 10, max_order: int = 10):
        self.name = "ar"
        self.horizon = horizon
        self.max_order = max_order
        self.models: list[_ARCoefficients] = []
        self.assets: tuple[str, ...] = ()

    @classmethod
    def fit(cls, train_changes: np.ndarray, horizon: int = 10,
            max_order: int = 10, assets: tuple[str, ...] = ()) -> "ARForecaster":
        x = np.asarray(train_changes, dtype=float)
        if x.ndim != 2:
            raise ValueError("training changes must be [time, assets]")
        t = x.shape[0]
        if t <= max_order + 10:
            raise ValueError(f"need more than max_order+10={max_order + 10} rows, got {t}")
        fc = cls(horizon=horizon, max_order=max_order)
        fc.assets = assets or tuple(f"A{i + 1}" for i in range(x.shape[1]))
        for i in range(x.shape[1]):
            fc.models.append(fc._fit_series(x[:, i]))
            if fc.models[-1].fallback:
                log.warning("asset %s: degenerate AR fit, falling back to persistence",
                            fc.assets[i])
        return fc

    def _fit_series(self, series: np.ndarray) -> _ARCoefficients:
        t = len(series)
        y = series[self.max_order:]
        n = len(y)
        floor = AR_RSS_FLOOR * max(1.0, float(np.sum(y ** 2)))
        best: _ARCoefficients | None = None
        best_aic = np.inf
        for p in range(1, self.max_order + 1):
            cols = [np.ones(n)] + [series[self.max_order - j:t - j] for j in range(1, p + 1)]
            design = np.column_stack(cols)
            beta, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
            if not np.all(np.isfinite(beta)):
                continue
            rss = float(np.sum((y - design @ beta) ** 2))
            aic = n * np.log(max(rss, floor) / n) + 2 * (p + 1)
            if aic < best_aic:
                best_aic = aic
                best = _ARCoefficients(intercept=float(beta[0]), coefs=beta[1:], order=p)
        if best is None:
            return _ARCoefficients(intercept=0.0, coefs=np.zeros(1), order=1, fallback=True)
        return best

    def forecast(self, conditioning: np.ndarray) -> np.ndarray:
        conditioning = np.atleast_2d(np.asarray(conditioning, dtype=float))
        k, a = conditioning.shape
        if a != len(self.models):
            raise ValueError(f"{a} assets in conditioning, model has {len(self.models)}")
        out = np.empty((self.horizon, a))
        for i, m in enumerate(self.models):
            history = list(conditioning[:, i])
            if m.fallback:
                out[:, i] = history[-1]
                continue
            if m.order > k:
                raise ValueError(
                    f"asset {i}: selected order {m.order} exceeds conditioning length {k}")
            for step in range(self.horizon):
                recent = history[-m.order:][::-1]  # lag 1 first
                value = m.intercept + float(np.dot(m.coefs, recent))
                history.append(value)
                out[step, i] = value
        return out

    def selected_orders(self) -> list[int]:
        return [m.order for m in self.models]

    def fallback_assets(self) -> list[str]:
        return [a for a, m in zip(self.assets, self.models) if m.fallback]


class VideoForecaster:
    """Render conditioning changes as frames, predict future frames, decode back.

    ``neutralized`` columns (assets whose scatter pixel was overwritten) have no
    decodable prediction; they forecast the neutral value 0 and are flagged.
    """

    def __init__(self, name: str, layout: imaging.Layout, model: TrainedModel,
                 seed: int, neutralized: tuple[str, ...] = ()):
        self.name = name
        self.layout = layout
        self.model = model
        self.seed = seed
        self.neutralized = tuple(neutralized)
        self._neutral_idx = [layout.assets.index(a) for a in self.neutralized]

    @property
    def horizon(self) -> int:
        return self.model.config.horizon

    def forecast_many(self, conditioning: np.ndarray, mode: str = "mean",
                      n_samples: int = 30) -> np.ndarray:
        conditioning = np.asarray(conditioning, dtype=float)
        if conditioning.ndim == 2:
            conditioning = conditioning[None]
        n, k, a = conditioning.shape
        if k != self.model.config.k:
            raise ValueError(f"conditioning length {k} != k={self.model.config.k}")
        h, w = self.layout.image_size
        frames = imaging.render_sequence(conditioning.reshape(n * k, a), self.layout)
        cond = torch.as_tensor(frames.reshape(n, k, h, w) / imaging.PIXEL_MAX,
                               dtype=torch.float32)
        predicted = self.model.predict(cond, mode=mode, n_samples=n_samples,
                                       seed=self.seed)
        predicted = predicted.numpy() * imaging.PIXEL_MAX
        horizon = predicted.shape[1]
        changes = imaging.decode_sequence(predicted.reshape(n * horizon, h, w), self.layout)
        changes = changes.reshape(n, horizon, a)
        if self._neutral_idx:
            changes[:, :, self._neutral_idx] = 0.0
        return changes

    def forecast(self, conditioning: np.ndarray) -> np.ndarray:
        return self.forecast_many(np.asarray(conditioning)[None])[0]

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        imaging.save_layout(self.layout, directory / "layout.json")
        self.model.save(directory / "checkpoint.pt")
        meta = {
            "method": self.name,
            "seed": self.seed,
            "neutralized": list(self.neutralized),
            "config_hash": config_hash({
                "model": self.model.config.__dict__,
                "train": self.model.train_config.__dict__,
            }),
        }
        (directory / "forecaster.json").write_text(json.dumps(meta, indent=2) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> "VideoForecaster":
        directory = Path(directory)
        meta = json.loads((directory / "forecaster.json").read_text())
        return cls(
            name=meta["method"],
            layout=imaging.load_layout(directory / "layout.json"),
            model=TrainedModel.load(directory / "checkpoint.pt"),
            seed=meta["seed"],
            neutralized=tuple(meta.get("neutralized", ())),
        )


class IndependentVideoForecaster:
    """One single-tile video model per asset; forecasts are concatenated."""

    def __init__(self, per_asset: list[VideoForecaster]):
        if not per_asset:
            raise ValueError("need at least one per-asset forecaster")
        self.name = "video_ind"
        self.per_asset = per_asset

    @property
    def horizon(self) -> int:
        return self.per_asset[0].horizon

    def forecast_many(self, conditioning: np.ndarray) -> np.ndarray:
        conditioning = np.asarray(conditioning, dtype=float)
        if conditioning.ndim == 2:
            conditioning = conditioning[None]
        cols = [fc.forecast_many(conditioning[:, :, [i]])
                for i, fc in enumerate(self.per_asset)]
        return np.concatenate(cols, axis=2)

    def forecast(self, conditioning: np.ndarray) -> np.ndarray:
        return self.forecast_many(np.asarray(conditioning)[None])[0]


def _render_windows(panel: ChangePanel, layout: imaging.Layout,
                    config: ModelConfig) -> np.ndarray | None:
    """Panel -> [N, k+horizon, H, W] pixel sequences in [0,1], or None if too short."""
    total = config.k + config.horizon
    if len(panel) < total:
        return None
    win = make_windows(panel, k=config.k, horizon=config.horizon)
    blocks = win.full_blocks()  # [N, T, A]
    n, t, a = blocks.shape
    frames = imaging.render_sequence(blocks.reshape(n * t, a), layout)
    h, w = layout.image_size
    return frames.reshape(n, t, h, w) / imaging.PIXEL_MAX


def fit_video_forecaster(
    name: str,
    train_panel: ChangePanel,
    layout: imaging.Layout,
    config: ModelConfig,
    train_config: TrainConfig,
    seed: int,
    val_panel: ChangePanel | None = None,
    neutralized: tuple[str, ...] = (),
) -> VideoForecaster:
    """Shared fitting path for every video-based method."""
    train_seqs = _render_windows(train_panel, layout, config)
    if train_seqs is None:
        raise ValueError("training panel too short for k+horizon windows")
    val_seqs = None if val_panel is None else _render_windows(val_panel, layout, config)
    model = train_model(train_seqs, config, train_config, seed, val_seqs=val_seqs)
    return VideoForecaster(name=name, layout=layout, model=model, seed=seed,
                           neutralized=neutralized)


def fit_video_full(
    train_panel: ChangePanel,
    config: ModelConfig,
    train_config: TrainConfig,
    seed: int,
    val_panel: ChangePanel | None = None,
    arrangement: dict[str, tuple[int, int]] | None = None,
) -> VideoForecaster:
    """Joint model over the curated grid layout (correlated assets adjacent)."""
    layout = imaging.build_grid_layout(train_panel.assets, arrangement=arrangement,
                                       image_size=config.image_size)
    return fit_video_forecaster("video_full", train_panel, layout, config,
                                train_config, seed, val_panel)


def fit_video_ind(
    train_panel: ChangePanel,
    config: ModelConfig,
    train_config: TrainConfig,
    seed: int,
    val_panel: ChangePanel | None = None,
) -> IndependentVideoForecaster:
    """One independently trained single-tile model per asset.

    Per-asset seeds derive from (seed, asset name), so dropping an asset leaves
    every other asset's model bit-identical.
    """
    per_asset = []
    for i, asset in enumerate(train_panel.assets):
        sub_train = ChangePanel(dates=train_panel.dates, assets=(asset,),
                                changes=train_panel.changes[:, [i]], lag=train_panel.lag)
        sub_val = None
        if val_panel is not None:
            sub_val = ChangePanel(dates=val_panel.dates, assets=(asset,),
                                  changes=val_panel.changes[:, [i]], lag=val_panel.lag)
        layout = imaging.build_grid_layout((asset,), grid_shape=(1, 1),
                                           image_size=config.image_size)
        per_asset.append(fit_video_forecaster(
            f"video_ind[{asset}]", sub_train, layout, config, train_config,
            _derived_seed(seed, asset), sub_val))
    return IndependentVideoForecaster(per_asset)


def fit_video_shuffled(
    train_panel: ChangePanel,
    config: ModelConfig,
    train_config: TrainConfig,
    seed: int,
    val_panel: ChangePanel | None = None,
    arrangement: dict[str, tuple[int, int]] | None = None,
) -> VideoForecaster:
    """Joint model over an adversarially shuffled grid: correlated assets far apart."""
    base = imaging.build_grid_layout(train_panel.assets, arrangement=arrangement,
                                     image_size=config.image_size)
    correlations = np.corrcoef(train_panel.changes, rowvar=False)
    layout = imaging.shuffle_layout(base, seed, correlations)
    fc = fit_video_forecaster("video_shuffled", train_panel, layout, config,
                              train_config, seed, val_panel)
    return fc


def fit_video_scatter(
    train_panel: ChangePanel,
    config: ModelConfig,
    train_config: TrainConfig,
    seed: int,
    val_panel: ChangePanel | None = None,
) -> VideoForecaster:
    """Joint model over the one-pixel-per-asset projection layout.

    Assets that lost a pixel conflict cannot be decoded; they forecast 0 and are
    flagged on the forecaster.
    """
    layout = imaging.scatter_layout_from_projection(train_panel, config.image_size)
    return fit_video_forecaster("video_scatter", train_panel, layout, config,
                                train_config, seed, val_panel,
                                neutralized=layout.overwritten)


def fit_vector(
    train_panel: ChangePanel,
    config: ModelConfig,
    train_config: TrainConfig,
    seed: int,
    val_panel: ChangePanel | None = None,
) -> VideoForecaster:
    """Same network on raster-repeated change vectors: no curated 2D adjacency."""
    layout = imaging.build_tiled_vector_layout(train_panel.assets, config.image_size)
    fc = fit_video_forecaster("vector", train_panel, layout, config,
                              train_config, seed, val_panel)
    return fc

"""Exponentially-weighted sign-accuracy metric and the method benchmark table.

The metric scores a forecast by whether predicted and realized changes share a
sign, weighting horizon step k by w_k = exp(-lambda * k) (k = 0 is the first
future step). Per-asset scores are normalized to [0, 1]; a method's headline
number is the mean +/- std across assets.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

ZERO_IS_UP = "zero_is_up"
ZERO_IS_MISS = "zero_is_miss"

DEFAULT_LAMBDAS = (0.5, 10.0)

# Published accuracies for the original 9-asset U.S. market study (mean +/- std
# across assets), attached to benchmark output as reference annotations only;
# they are not reproduction targets at desk scale.
REFERENCE_ACCURACY: dict[str, dict[float, tuple[float, float]]] = {
    "video_full": {0.5: (0.65, 0.03), 10.0: (0.76, 0.05)},
    "video_ind": {0.5: (0.61, 0.04), 10.0: (0.69, 0.08)},
    "video_shuffled": {0.5: (0.61, 0.04), 10.0: (0.69, 0.05)},
    "video_scatter": {0.5: (0.60, 0.06), 10.0: (0.66, 0.05)},
    "vector": {0.5: (0.61, 0.05), 10.0: (0.65, 0.04)},
    "ar": {0.5: (0.59, 0.06), 10.0: (0.65, 0.04)},
}


@dataclass(frozen=True)
class MetricConfig:
    """Decay rate and zero-sign policy for the accuracy metric."""

    lam: float = 0.5
    zero_policy: str = ZERO_IS_UP

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.zero_policy not in (ZERO_IS_UP, ZERO_IS_MISS):
            raise ValueError(f"unknown zero policy {self.zero_policy!r}")


@dataclass(frozen=True)
class ForecastSet:
    """Aligned predictions and truths for one method: [samples, horizon, assets]."""

    method: str
    predictions: np.ndarray
    truths: np.ndarray
    assets: tuple[str, ...] = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        preds = np.asarray(self.predictions, dtype=float)
        truths = np.asarray(self.truths, dtype=float)
        object.__setattr__(self, "predictions", preds)
        object.__setattr__(self, "truths", truths)
        if preds.ndim != 3:
            raise ValueError("predictions must be [samples, horizon, assets]")
        if preds.shape != truths.shape:
            raise ValueError(f"prediction shape {preds.shape} != truth shape {truths.shape}")
        if preds.shape[0] == 0:
            raise ValueError("empty forecast set")
        if self.assets and len(self.assets) != preds.shape[2]:
            raise ValueError("asset names do not match forecast width")

    @property
    def horizon(self) -> int:
        return self.predictions.shape[1]


def decay_weights(lam: float, horizon: int) -> np.ndarray:
    """Horizon weights w_k = exp(-lambda * k), k = 0 being the first future step."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if horizon < 1:
        raise ValueError("horizon must be positive")
    return np.exp(-lam * np.arange(horizon, dtype=float))


def sign_match(delta, delta_hat, zero_policy: str = ZERO_IS_UP):
    """1 where prediction and truth share an effective sign, else 0.

    Under ``zero_is_up`` an exact zero counts as positive on both sides; under
    ``zero_is_miss`` any exact zero can never score.
    """
    delta = np.asarray(delta, dtype=float)
    delta_hat = np.asarray(delta_hat, dtype=float)
    if zero_policy == ZERO_IS_UP:
        out = (delta >= 0) == (delta_hat >= 0)
    elif zero_policy == ZERO_IS_MISS:
        out = delta * delta_hat > 0
    else:
        raise ValueError(f"unknown zero policy {zero_policy!r}")
    return out.astype(float)


def weighted_sign_accuracy(
    fs: ForecastSet,
    cfg: MetricConfig,
) -> tuple[np.ndarray, float, float]:
    """Per-asset accuracies plus their mean and std across assets.

    For each sample and asset the horizon steps are combined as
    sum_k w_k * match_k / sum_k w_k, then averaged over samples, so every
    accuracy lies in [0, 1] regardless of lambda.
    """
    w = decay_weights(cfg.lam, fs.horizon)
    w = w / w.sum()
    matches = sign_match(fs.truths, fs.predictions, cfg.zero_policy)
    # 1 - sum(w * misses) keeps the perfect-score boundary exact in floats
    misses = ((1.0 - matches) * w[None, :, None]).sum(axis=1)
    per_sample = np.clip(1.0 - misses, 0.0, 1.0)
    per_asset = per_sample.mean(axis=0)
    return per_asset, float(per_asset.mean()), float(per_asset.std())


@dataclass
class BenchmarkResult:
    """Accuracy table over methods x lambdas, with per-asset breakdown."""

    methods: list[str]
    lambdas: list[float]
    assets: tuple[str, ...]
    # method -> lam -> (per_asset, mean, std)
    scores: dict[str, dict[float, tuple[np.ndarray, float, float]]]
    failures: dict[str, str] = field(default_factory=dict)

    def cell(self, method: str, lam: float) -> tuple[float, float]:
        _, mean, std = self.scores[method][lam]
        return mean, std

    def to_csv(self) -> str:
        """Summary table: one row per method, one mean/std column pair per lambda."""
        buf = io.StringIO()
        cols = ["method"]
        for lam in self.lambdas:
            cols += [f"acc_mean_lam_{lam:g}", f"acc_std_lam_{lam:g}"]
        buf.write(",".join(cols) + "\n")
        for m in self.methods:
            row = [m]
            for lam in self.lambdas:
                mean, std = self.cell(m, lam)
                row += [f"{mean:.6f}", f"{std:.6f}"]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def per_asset_rows(self) -> list[tuple[str, str, float, float]]:
        """(asset, method, lambda, accuracy) tuples for external plotting."""
        rows = []
        for m in self.methods:
            for lam in self.lambdas:
                per_asset, _, _ = self.scores[m][lam]
                for a, acc in zip(self.assets, per_asset):
                    rows.append((a, m, lam, float(acc)))
        return rows

    def per_asset_csv(self) -> str:
        buf = io.StringIO()
        buf.write("asset,method,lambda,accuracy\n")
        for a, m, lam, acc in self.per_asset_rows():
            buf.write(f"{a},{m},{lam:g},{acc:.6f}\n")
        return buf.getvalue()

    def to_text(self) -> str:
        """Human-readable report with published reference values annotated."""
        lines = ["sign-accuracy benchmark (mean +/- std across assets)", ""]
        header = f"{'method':<16}" + "".join(f"  lambda={lam:<10g}" for lam in self.lambdas)
        lines.append(header)
        for m in self.methods:
            row = f"{m:<16}"
            for lam in self.lambdas:
                mean, std = self.cell(m, lam)
                row += f"  {mean:.3f}+/-{std:.3f}"
            lines.append(row)
            ref = REFERENCE_ACCURACY.get(m)
            if ref:
                refs = []
                for lam in self.lambdas:
                    if lam in ref:
                        rm, rs = ref[lam]
                        refs.append(f"lambda={lam:g}: {rm:.2f}+/-{rs:.2f}")
                if refs:
                    lines.append(f"{'':<16}  reference ({m}): " + ", ".join(refs))
        if self.failures:
            lines.append("")
            lines.append("failures:")
            for m, msg in sorted(self.failures.items()):
                lines.append(f"  {m}: {msg}")
        return "\n".join(lines) + "\n"


def benchmark(
    forecasters,
    windows,
    lambdas=DEFAULT_LAMBDAS,
    zero_policy: str = ZERO_IS_UP,
) -> BenchmarkResult:
    """Run each forecaster over the test windows and score it at each lambda.

    ``forecasters`` expose ``.name`` and ``forecast(conditioning [k, assets]) ->
    [horizon, assets]``; a forecaster raising on any window is reported in
    ``failures`` rather than silently skipped.
    """
    lambdas = [float(l) for l in lambdas]
    result = BenchmarkResult(
        methods=[], lambdas=lambdas, assets=windows.assets, scores={},
    )
    for fc in forecasters:
        result.methods.append(fc.name)
        try:
            if hasattr(fc, "forecast_many"):
                preds = np.asarray(fc.forecast_many(windows.conditioning))
            else:
                preds = np.stack([fc.forecast(c) for c in windows.conditioning])
        except Exception as exc:  # noqa: BLE001 - failures must be reported per method
            log.error("forecaster %s failed: %s", fc.name, exc)
            result.failures[fc.name] = str(exc)
            result.scores[fc.name] = {
                lam: (np.full(len(windows.assets), np.nan), float("nan"), float("nan"))
                for lam in lambdas
            }
            continue
        fs = ForecastSet(method=fc.name, predictions=preds, truths=windows.target,
                         assets=windows.assets)
        result.scores[fc.name] = {
            lam: weighted_sign_accuracy(fs, MetricConfig(lam=lam, zero_policy=zero_policy))
            for lam in lambdas
        }
    return result

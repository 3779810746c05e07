"""Close-price and percentage-change panels: loading, differencing, splitting, windowing.

A panel is an immutable (dates, assets, values) triple. Prices enter from CSV,
get converted to lagged relative percentage changes, split chronologically into
train/validation/test spans, and finally cut into (conditioning, target) windows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

DATE_COLUMN = "date"

DEFAULT_LAG = 5
DEFAULT_TRAIN_VAL_END = "2018-12-31"
DEFAULT_TEST_START = "2019-01-01"
DEFAULT_VAL_FRACTION = 0.05


@dataclass(frozen=True)
class PricePanel:
    """Close prices on a [time x asset] grid, strictly positive, dates increasing."""

    dates: pd.DatetimeIndex
    assets: tuple[str, ...]
    closes: np.ndarray
    dropped_rows: int = 0

    def __post_init__(self):
        closes = np.asarray(self.closes, dtype=float)
        object.__setattr__(self, "closes", closes)
        object.__setattr__(self, "assets", tuple(self.assets))
        if closes.ndim != 2 or closes.shape != (len(self.dates), len(self.assets)):
            raise ValueError(
                f"closes shape {closes.shape} does not match "
                f"{len(self.dates)} dates x {len(self.assets)} assets"
            )
        if len(self.dates) > 1 and not self.dates.is_monotonic_increasing:
            raise ValueError("dates must be strictly increasing")
        if self.dates.has_duplicates:
            raise ValueError("duplicate dates in panel")
        if not np.all(np.isfinite(closes)) or np.any(closes <= 0):
            raise ValueError("close prices must be finite and strictly positive")

    def __len__(self) -> int:
        return len(self.dates)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.closes, columns=list(self.assets))
        df.insert(0, DATE_COLUMN, self.dates)
        return df


@dataclass(frozen=True)
class ChangePanel:
    """Relative percentage changes over ``lag`` rows, [time x asset], percent units."""

    dates: pd.DatetimeIndex
    assets: tuple[str, ...]
    changes: np.ndarray
    lag: int = DEFAULT_LAG

    def __post_init__(self):
        changes = np.asarray(self.changes, dtype=float)
        object.__setattr__(self, "changes", changes)
        object.__setattr__(self, "assets", tuple(self.assets))
        if changes.ndim != 2 or changes.shape != (len(self.dates), len(self.assets)):
            raise ValueError(
                f"changes shape {changes.shape} does not match "
                f"{len(self.dates)} dates x {len(self.assets)} assets"
            )
        if len(self.dates) > 1 and not self.dates.is_monotonic_increasing:
            raise ValueError("dates must be strictly increasing")
        if self.dates.has_duplicates:
            raise ValueError("duplicate dates in panel")
        if not np.all(np.isfinite(changes)):
            raise ValueError("changes must be finite")
        if self.lag < 1:
            raise ValueError("lag must be a positive integer")

    def __len__(self) -> int:
        return len(self.dates)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.changes, columns=list(self.assets))
        df.insert(0, DATE_COLUMN, self.dates)
        return df

    def to_csv(self, path: str | Path) -> None:
        self.to_frame().to_csv(path, index=False, date_format="%Y-%m-%d")


@dataclass(frozen=True)
class WindowedDataset:
    """Contiguous (conditioning, target) samples cut from one change panel.

    ``conditioning`` is [n, k, assets], ``target`` is [n, horizon, assets]; the two
    blocks of a sample are adjacent in time. ``anchor_dates[i]`` is the date of the
    first conditioning row of sample i.
    """

    conditioning: np.ndarray
    target: np.ndarray
    anchor_dates: pd.DatetimeIndex
    assets: tuple[str, ...]
    k: int
    horizon: int

    def __post_init__(self):
        object.__setattr__(self, "assets", tuple(self.assets))
        n = self.conditioning.shape[0]
        a = len(self.assets)
        if self.conditioning.shape != (n, self.k, a):
            raise ValueError("conditioning block shape mismatch")
        if self.target.shape != (n, self.horizon, a):
            raise ValueError("target block shape mismatch")
        if len(self.anchor_dates) != n:
            raise ValueError("anchor dates length mismatch")

    def __len__(self) -> int:
        return self.conditioning.shape[0]

    def full_blocks(self) -> np.ndarray:
        """Conditioning and target concatenated along time: [n, k+horizon, assets]."""
        return np.concatenate([self.conditioning, self.target], axis=1)


def load_close_prices(
    source: str | Path,
    asset_columns: list[str] | tuple[str, ...],
    min_rows: int | None = None,
) -> PricePanel:
    """Load a close-price panel from a delimited file.

    The file must have a header with an ISO-8601 ``date`` column and one numeric
    column per requested asset. Rows with any missing or unparsable value in the
    requested columns are dropped; the drop count is logged and recorded on the
    returned panel.
    """
    source = Path(source)
    if not source.exists():
        raise FileNotFoundError(f"price file not found: {source}")
    if not asset_columns:
        raise ValueError("asset_columns must be non-empty")
    df = pd.read_csv(source)
    if DATE_COLUMN not in df.columns:
        raise ValueError(f"missing required column {DATE_COLUMN!r} in {source}")
    missing = [c for c in asset_columns if c not in df.columns]
    if missing:
        raise ValueError(f"requested asset columns absent from {source}: {missing}")

    df = df[[DATE_COLUMN, *asset_columns]].copy()
    df[DATE_COLUMN] = pd.to_datetime(df[DATE_COLUMN], errors="coerce")
    for col in asset_columns:
        df[col] = pd.to_numeric(df[col], errors="coerce")
    n_raw = len(df)
    df = df.dropna()
    n_dropped = n_raw - len(df)
    if n_dropped:
        log.info("dropped %d of %d rows with missing/unparsable values", n_dropped, n_raw)
    df = df.sort_values(DATE_COLUMN)

    if min_rows is not None and len(df) < min_rows:
        raise ValueError(f"only {len(df)} usable rows in {source}, need at least {min_rows}")
    if len(df) == 0:
        raise ValueError(f"no usable rows in {source}")

    return PricePanel(
        dates=pd.DatetimeIndex(df[DATE_COLUMN]),
        assets=tuple(asset_columns),
        closes=df[list(asset_columns)].to_numpy(dtype=float),
        dropped_rows=n_dropped,
    )


def read_change_panel(path: str | Path, lag: int = DEFAULT_LAG) -> ChangePanel:
    """Read a change panel written by :meth:`ChangePanel.to_csv` (same format as input prices)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"change panel not found: {path}")
    df = pd.read_csv(path)
    if DATE_COLUMN not in df.columns:
        raise ValueError(f"missing required column {DATE_COLUMN!r} in {path}")
    assets = tuple(c for c in df.columns if c != DATE_COLUMN)
    return ChangePanel(
        dates=pd.DatetimeIndex(pd.to_datetime(df[DATE_COLUMN])),
        assets=assets,
        changes=df[list(assets)].to_numpy(dtype=float),
        lag=lag,
    )


def compute_relative_change(panel: PricePanel, lag: int = DEFAULT_LAG) -> ChangePanel:
    """Percentage change of each close against the close ``lag`` rows earlier.

    Row t of the result is 100 * (close[t] - close[t-lag]) / close[t-lag] and is
    dated at the later row, so the output has len(panel) - lag rows.
    """
    if lag < 1:
        raise ValueError("lag must be a positive integer")
    if len(panel) <= lag:
        raise ValueError(f"panel has {len(panel)} rows, need more than lag={lag}")
    past = panel.closes[:-lag]
    now = panel.closes[lag:]
    changes = 100.0 * (now - past) / past
    return ChangePanel(
        dates=panel.dates[lag:],
        assets=panel.assets,
        changes=changes,
        lag=lag,
    )


def split_by_date(
    panel: ChangePanel,
    train_val_end: str | pd.Timestamp = DEFAULT_TRAIN_VAL_END,
    test_start: str | pd.Timestamp = DEFAULT_TEST_START,
    val_fraction: float = DEFAULT_VAL_FRACTION,
) -> tuple[ChangePanel, ChangePanel, ChangePanel]:
    """Chronological train/validation/test split of a change panel.

    Rows dated on or before ``train_val_end`` form the pre-test span, of which the
    trailing ``val_fraction`` becomes validation; rows on or after ``test_start``
    form the test span. Validation is a trailing slice, never a random one, so
    temporal ordering is preserved.
    """
    train_val_end = pd.Timestamp(train_val_end)
    test_start = pd.Timestamp(test_start)
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    if test_start <= train_val_end:
        raise ValueError("test_start must come after train_val_end")

    pre_mask = panel.dates <= train_val_end
    test_mask = panel.dates >= test_start
    n_pre = int(pre_mask.sum())
    n_val = int(round(val_fraction * n_pre))
    n_train = n_pre - n_val

    def _slice(mask_idx: np.ndarray) -> ChangePanel:
        return ChangePanel(
            dates=panel.dates[mask_idx],
            assets=panel.assets,
            changes=panel.changes[mask_idx],
            lag=panel.lag,
        )

    pre_idx = np.flatnonzero(pre_mask)
    train = _slice(pre_idx[:n_train])
    val = _slice(pre_idx[n_train:])
    test = _slice(np.flatnonzero(test_mask))
    for name, part in (("train", train), ("validation", val), ("test", test)):
        if len(part) == 0:
            raise ValueError(f"{name} split is empty")
    return train, val, test


def make_windows(
    panel: ChangePanel,
    k: int = 5,
    horizon: int = 10,
    stride: int = 1,
) -> WindowedDataset:
    """Cut a change panel into overlapping (k conditioning, horizon target) samples."""
    if k < 1 or horizon < 1 or stride < 1:
        raise ValueError("k, horizon and stride must be positive integers")
    total = k + horizon
    if len(panel) < total:
        raise ValueError(f"panel has {len(panel)} rows, need at least k+horizon={total}")
    anchors = np.arange(0, len(panel) - total + 1, stride)
    idx = anchors[:, None] + np.arange(total)[None, :]
    blocks = panel.changes[idx]
    return WindowedDataset(
        conditioning=blocks[:, :k],
        target=blocks[:, k:],
        anchor_dates=panel.dates[anchors],
        assets=panel.assets,
        k=k,
        horizon=horizon,
    )

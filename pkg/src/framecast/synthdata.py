"""Synthetic coupled change panels with known ground-truth dynamics.

A first-order vector autoregression x_t = drift + A x_{t-1} + noise provides
controllable cross-asset couplings, so claims about joint versus per-asset
modeling can be tested against a process whose optimal predictor is known in
closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .panels import ChangePanel

BURN_IN = 100


@dataclass(frozen=True)
class VarProcessSpec:
    """Parameters of a stationary VAR(1) process in percent-change units."""

    coupling: np.ndarray
    noise_std: float
    length: int
    drift: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        coupling = np.asarray(self.coupling, dtype=float)
        object.__setattr__(self, "coupling", coupling)
        if coupling.ndim != 2 or coupling.shape[0] != coupling.shape[1]:
            raise ValueError("coupling must be a square matrix")
        radius = float(np.abs(np.linalg.eigvals(coupling)).max())
        if radius >= 1.0:
            raise ValueError(f"spectral radius {radius:.3f} >= 1: process not stationary")
        if self.noise_std <= 0:
            raise ValueError("noise_std must be positive")
        if self.length < 1:
            raise ValueError("length must be positive")
        drift = (np.zeros(coupling.shape[0]) if self.drift is None
                 else np.asarray(self.drift, dtype=float))
        if drift.shape != (coupling.shape[0],):
            raise ValueError("drift length must match coupling size")
        object.__setattr__(self, "drift", drift)

    @property
    def n_assets(self) -> int:
        return self.coupling.shape[0]


def generate_var_panel(
    spec: VarProcessSpec,
    assets: tuple[str, ...] | None = None,
    start_date: str = "2015-01-01",
) -> ChangePanel:
    """Simulate the VAR(1) and return it as a change panel on business dates.

    The first 100 steps are discarded as burn-in; everything is a deterministic
    function of the spec's seed.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_assets
    if assets is None:
        assets = tuple(f"A{i + 1}" for i in range(n))
    if len(assets) != n:
        raise ValueError("asset names must match coupling size")
    noise = rng.normal(0.0, spec.noise_std, size=(BURN_IN + spec.length, n))
    out = np.empty((spec.length, n))
    x = np.zeros(n)
    for t in range(BURN_IN + spec.length):
        x = spec.drift + spec.coupling @ x + noise[t]
        if t >= BURN_IN:
            out[t - BURN_IN] = x
    dates = pd.bdate_range(start_date, periods=spec.length)
    return ChangePanel(dates=dates, assets=assets, changes=out, lag=1)


def up_fraction(panel: ChangePanel) -> np.ndarray:
    """Per-asset fraction of strictly positive changes."""
    return (panel.changes > 0).mean(axis=0)


def swap_pair_coupling(strength: float = 0.72) -> np.ndarray:
    """9-asset coupling where prediction requires the partner asset's history.

    Assets form cross-driven pairs (each one's next change is driven by the
    other's current change): (0,1), (2,3), (4,5) positively coupled, (6,7)
    anti-coupled, and asset 8 follows asset 0. A model watching one asset alone
    sees only the weaker two-step echo (strength squared), while a joint model
    can use the partner directly, so the optimal joint/marginal sign accuracies
    are 1/2 + arcsin(strength)/pi versus 1/2 + arcsin(strength^2)/pi.
    """
    if not 0.0 < strength < 1.0:
        raise ValueError("strength must lie in (0, 1)")
    a = np.zeros((9, 9))
    for i, j in ((0, 1), (2, 3), (4, 5)):
        a[i, j] = strength
        a[j, i] = strength
    a[6, 7] = -strength
    a[7, 6] = -strength
    a[8, 0] = strength
    return a


def coupled_market_spec(
    length: int = 800,
    strength: float = 0.72,
    noise_std: float = 1.0,
    seed: int = 0,
) -> VarProcessSpec:
    """Default coupled 9-asset spec used by the demo pipeline and tests."""
    return VarProcessSpec(coupling=swap_pair_coupling(strength),
                          noise_std=noise_std, length=length, seed=seed)


def demo_market_panel(
    length: int = 800,
    strength: float = 0.72,
    noise_std: float = 1.0,
    seed: int = 0,
    duplicate_noise: float = 0.005,
    outlier_scale: float = 3.0,
) -> ChangePanel:
    """Coupled 9-asset panel shaped like the real market panel.

    Two post-processing touches mirror structure present in real asset panels:
    asset 9 is replaced by a near-copy of asset 1 (index funds tracking the same
    market are nearly identical series), and asset 4 is scaled up (one asset with
    much larger swings than the rest). Both are sign-preserving linear maps, so
    the process stays a stationary VAR and predictability is unchanged, but a
    2D projection of the assets now produces the pixel-conflict phenomenon that
    scatter layouts must cope with.
    """
    spec = coupled_market_spec(length=length, strength=strength,
                               noise_std=noise_std, seed=seed)
    panel = generate_var_panel(spec)
    rng = np.random.default_rng(spec.seed + 104729)
    changes = panel.changes.copy()
    changes[:, 8] = changes[:, 0] + rng.normal(
        0.0, duplicate_noise * changes[:, 0].std(), size=len(panel))
    changes[:, 3] = changes[:, 3] * outlier_scale
    return ChangePanel(dates=panel.dates, assets=panel.assets,
                       changes=changes, lag=panel.lag)


def demo_grid_arrangement(assets: tuple[str, ...]) -> dict[str, tuple[int, int]]:
    """3x3 arrangement placing each coupled pair of the demo panel adjacently."""
    if len(assets) != 9:
        raise ValueError("demo arrangement is defined for 9 assets")
    order = [0, 1, 8, 2, 3, 6, 4, 5, 7]  # pairs (0,1), (2,3), (4,5) side by side; (6,7) stacked
    return {assets[a]: divmod(i, 3) for i, a in enumerate(order)}

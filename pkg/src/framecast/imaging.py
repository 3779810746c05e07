"""Change-vector <-> grayscale-frame conversion under configurable spatial layouts.

Four layout kinds are supported: ``grid_tiles`` (each asset fills one tile of a
grid heatmap), ``single_tile`` (one asset fills the whole frame), ``scatter_pixels``
(each asset is a single pixel placed by projecting its training series to 2D), and
``tiled_vector`` (the raw change vector repeated in raster order across the frame).

Frames are continuous-valued [H x W] arrays in [0, 255]; quantization to 8 bits
happens only at image-file boundaries.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.special import expit, logit

from .panels import ChangePanel

log = logging.getLogger(__name__)

GRID_TILES = "grid_tiles"
SINGLE_TILE = "single_tile"
SCATTER_PIXELS = "scatter_pixels"
TILED_VECTOR = "tiled_vector"
LAYOUT_KINDS = (GRID_TILES, SINGLE_TILE, SCATTER_PIXELS, TILED_VECTOR)

PIXEL_MAX = 255.0
NEUTRAL_PIXEL = 127.5  # sigmoid_pixel(0); background for unassigned regions
PIXEL_CLAMP = 0.5  # epsilon for inverting pixel values at the extremes

DEFAULT_IMAGE_SIZE = (64, 64)

# Grid placement for the 9-asset U.S. market panel: equity indices together
# (SPY/DIA), bond funds together (TLT/AGG), fuel-sensitive pair together
# (DAL/USO).  Only those adjacencies are load-bearing; the rest is convention
# and can be overridden via the ``arrangement`` argument.
DEFAULT_MARKET_ARRANGEMENT: dict[str, tuple[int, int]] = {
    "SPY": (0, 0), "DIA": (0, 1), "VNQ": (0, 2),
    "TLT": (1, 0), "AGG": (1, 1), "GLD": (1, 2),
    "DAL": (2, 0), "USO": (2, 1), "TSLA": (2, 2),
}


def sigmoid_pixel(delta):
    """Map percentage change(s) to pixel value(s): p = 255 / (1 + exp(-delta)).

    Monotone increasing; delta=0 maps to the neutral gray 127.5, gains brighten,
    losses darken.
    """
    delta = np.asarray(delta, dtype=float)
    if not np.all(np.isfinite(delta)):
        raise ValueError("percentage changes must be finite")
    out = PIXEL_MAX * expit(delta)
    return float(out) if out.ndim == 0 else out


def pixel_to_change(p):
    """Invert :func:`sigmoid_pixel`: delta = ln(p / (255 - p)).

    Pixel values are clamped to [0.5, 254.5] first, capping recovered changes at
    about +/-6.23; clamp events are counted and logged.
    """
    p = np.asarray(p, dtype=float)
    clamped = np.count_nonzero((p < PIXEL_CLAMP) | (p > PIXEL_MAX - PIXEL_CLAMP))
    if clamped:
        log.debug("clamped %d pixel value(s) to [%g, %g] before inversion",
                  clamped, PIXEL_CLAMP, PIXEL_MAX - PIXEL_CLAMP)
    p = np.clip(p, PIXEL_CLAMP, PIXEL_MAX - PIXEL_CLAMP)
    out = logit(p / PIXEL_MAX)
    return float(out) if out.ndim == 0 else out


def grid_bands(size: int, cells: int) -> list[tuple[int, int]]:
    """Split ``size`` pixels into ``cells`` contiguous bands, earlier bands taking
    the remainder (64 over 3 -> 22/21/21)."""
    if cells < 1 or size < cells:
        raise ValueError(f"cannot split {size} pixels into {cells} bands")
    base, rem = divmod(size, cells)
    sizes = [base + 1] * rem + [base] * (cells - rem)
    edges = np.concatenate([[0], np.cumsum(sizes)])
    return [(int(edges[i]), int(edges[i + 1])) for i in range(cells)]


@dataclass(frozen=True)
class Layout:
    """Assignment of each asset to a region of the image plane.

    ``cells`` maps asset -> (row, col) tile for grid kinds, (row, col) pixel for
    scatter, and raster position for tiled_vector. ``overwritten`` lists assets
    that lost a scatter pixel conflict (a later asset claimed the same pixel).
    """

    kind: str
    assets: tuple[str, ...]
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE
    grid_shape: tuple[int, int] | None = None
    cells: dict = field(default_factory=dict)
    overwritten: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        object.__setattr__(self, "overwritten", tuple(self.overwritten))
        if self.kind not in LAYOUT_KINDS:
            raise ValueError(f"unknown layout kind {self.kind!r}")
        if not self.assets:
            raise ValueError("layout needs at least one asset")
        if set(self.cells) != set(self.assets):
            raise ValueError("cells must map exactly the layout's assets")
        if self.kind in (GRID_TILES, SINGLE_TILE):
            if self.grid_shape is None:
                raise ValueError("grid layouts require grid_shape")
            object.__setattr__(self, "grid_shape", tuple(int(v) for v in self.grid_shape))
            seen = set()
            rows, cols = self.grid_shape
            for asset, (r, c) in self.cells.items():
                if not (0 <= r < rows and 0 <= c < cols):
                    raise ValueError(f"cell {(r, c)} of {asset!r} outside grid {self.grid_shape}")
                if (r, c) in seen:
                    raise ValueError(f"duplicate cell assignment at {(r, c)}")
                seen.add((r, c))

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    def regions(self) -> dict[str, np.ndarray]:
        """Flat pixel indices of each asset's region (row-major raster order)."""
        h, w = self.image_size
        out: dict[str, np.ndarray] = {}
        if self.kind in (GRID_TILES, SINGLE_TILE):
            rb = grid_bands(h, self.grid_shape[0])
            cb = grid_bands(w, self.grid_shape[1])
            for asset in self.assets:
                r, c = self.cells[asset]
                rr = np.arange(rb[r][0], rb[r][1])
                cc = np.arange(cb[c][0], cb[c][1])
                out[asset] = (rr[:, None] * w + cc[None, :]).ravel()
        elif self.kind == SCATTER_PIXELS:
            for asset in self.assets:
                r, c = self.cells[asset]
                out[asset] = np.array([r * w + c])
        else:  # tiled_vector: asset at raster position i owns pixels i, i+A, i+2A, ...
            n = self.n_assets
            for asset in self.assets:
                out[asset] = np.arange(self.cells[asset], h * w, n)
        return out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "assets": list(self.assets),
            "image_size": list(self.image_size),
            "grid_shape": list(self.grid_shape) if self.grid_shape else None,
            "cells": {a: (list(c) if isinstance(c, tuple) else int(c))
                      for a, c in self.cells.items()},
            "overwritten": list(self.overwritten),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Layout":
        cells = {a: (tuple(c) if isinstance(c, list) else int(c))
                 for a, c in d["cells"].items()}
        return cls(
            kind=d["kind"],
            assets=tuple(d["assets"]),
            image_size=tuple(d["image_size"]),
            grid_shape=tuple(d["grid_shape"]) if d.get("grid_shape") else None,
            cells=cells,
            overwritten=tuple(d.get("overwritten", ())),
        )


def save_layout(layout: Layout, path: str | Path) -> None:
    Path(path).write_text(json.dumps(layout.to_dict(), indent=2) + "\n")


def load_layout(path: str | Path) -> Layout:
    return Layout.from_dict(json.loads(Path(path).read_text()))


def build_grid_layout(
    assets: list[str] | tuple[str, ...],
    arrangement: dict[str, tuple[int, int]] | None = None,
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
    grid_shape: tuple[int, int] | None = None,
) -> Layout:
    """Tile-heatmap layout: each asset owns one tile of a near-square grid.

    Without an explicit ``arrangement``, the 9-asset market panel gets the default
    adjacency-preserving placement and anything else is placed in raster order.
    """
    assets = tuple(assets)
    if arrangement is None:
        if set(assets) == set(DEFAULT_MARKET_ARRANGEMENT):
            arrangement = {a: DEFAULT_MARKET_ARRANGEMENT[a] for a in assets}
        else:
            if grid_shape is None:
                rows = int(np.ceil(np.sqrt(len(assets))))
                cols = int(np.ceil(len(assets) / rows))
                grid_shape = (rows, cols)
            arrangement = {a: divmod(i, grid_shape[1]) for i, a in enumerate(assets)}
    cells = {a: tuple(arrangement[a]) for a in assets}
    if len(set(cells.values())) != len(cells):
        raise ValueError("two assets assigned to the same grid cell")
    if grid_shape is None:
        grid_shape = (
            max(r for r, _ in cells.values()) + 1,
            max(c for _, c in cells.values()) + 1,
        )
    kind = SINGLE_TILE if grid_shape == (1, 1) else GRID_TILES
    return Layout(kind=kind, assets=assets, image_size=image_size,
                  grid_shape=grid_shape, cells=cells)


def build_tiled_vector_layout(
    assets: list[str] | tuple[str, ...],
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
) -> Layout:
    """Vector baseline layout: the change vector repeated in raster order, so no
    curated 2D grouping survives."""
    assets = tuple(assets)
    return Layout(kind=TILED_VECTOR, assets=assets, image_size=image_size,
                  cells={a: i for i, a in enumerate(assets)})


def shuffle_layout(
    layout: Layout,
    seed: int,
    correlations: np.ndarray,
    n_candidates: int = 512,
) -> Layout:
    """Adversarial tile shuffle: place strongly correlated assets far apart.

    Samples seeded candidate permutations of the tile assignment and keeps the one
    maximizing sum_{i<j} |corr_ij| * distance(tile_i, tile_j). Deterministic per
    seed; the input assignment itself is excluded so the result always differs
    when an alternative exists.
    """
    if layout.kind not in (GRID_TILES, SINGLE_TILE):
        raise ValueError("shuffle_layout requires a grid layout")
    a = layout.n_assets
    correlations = np.asarray(correlations, dtype=float)
    if correlations.shape != (a, a):
        raise ValueError(f"correlation matrix must be {a}x{a}")

    positions = np.array([layout.cells[asset] for asset in layout.assets], dtype=float)
    weights = np.abs(correlations)
    iu = np.triu_indices(a, k=1)

    def score(perm: np.ndarray) -> float:
        pos = positions[perm]
        d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        return float((weights[iu] * d[iu]).sum())

    rng = np.random.default_rng(seed)
    identity = np.arange(a)
    best_perm, best_score = None, -np.inf
    for _ in range(n_candidates):
        perm = rng.permutation(a)
        if np.array_equal(perm, identity) and a > 1:
            continue
        s = score(perm)
        if s > best_score:
            best_perm, best_score = perm, s
    if best_perm is None:
        return layout
    # perm[i] is the index of the position asset i moves to
    new_cells = {asset: tuple(int(v) for v in positions[best_perm[i]])
                 for i, asset in enumerate(layout.assets)}
    return replace(layout, cells=new_cells)


def scatter_layout_from_projection(
    train_changes: ChangePanel,
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
) -> Layout:
    """One pixel per asset, placed by projecting asset series to 2D.

    Each asset's training change series is a point in time-dimensional space; the
    point cloud is centered, projected onto its two principal components, min-max
    scaled to pixel coordinates and rounded. When two assets round to the same
    pixel the later one (ingestion order) wins and the earlier is recorded in
    ``overwritten``.
    """
    if len(train_changes.assets) < 2:
        raise ValueError("scatter layout needs at least 2 assets")
    if len(train_changes) < 3:
        raise ValueError("scatter layout needs at least 3 training rows")
    h, w = image_size
    x = train_changes.changes.T.astype(float)  # [assets, time]
    centered = x - x.mean(axis=0, keepdims=True)
    u, s, _ = np.linalg.svd(centered, full_matrices=False)
    coords = u[:, :2] * s[:2]
    # fix the SVD sign ambiguity: largest-magnitude coefficient positive
    for j in range(coords.shape[1]):
        pivot = np.argmax(np.abs(u[:, j]))
        if u[pivot, j] < 0:
            coords[:, j] = -coords[:, j]

    scale = np.ptp(coords, axis=0)
    degenerate = scale < 1e-12 * max(1.0, float(np.abs(coords).max(initial=1.0)))
    cols = np.full(len(x), (w - 1) // 2) if degenerate[0] else np.rint(
        (coords[:, 0] - coords[:, 0].min()) / scale[0] * (w - 1)).astype(int)
    rows = np.full(len(x), (h - 1) // 2) if (coords.shape[1] < 2 or degenerate[1]) else np.rint(
        (coords[:, 1] - coords[:, 1].min()) / scale[1] * (h - 1)).astype(int)

    cells: dict[str, tuple[int, int]] = {}
    claimed: dict[tuple[int, int], str] = {}
    overwritten: list[str] = []
    for asset, r, c in zip(train_changes.assets, rows, cols):
        pixel = (int(r), int(c))
        if pixel in claimed:
            overwritten.append(claimed[pixel])
            log.warning("scatter pixel conflict at %s: %r overwrites %r",
                        pixel, asset, claimed[pixel])
        claimed[pixel] = asset
        cells[asset] = pixel
    if degenerate.all():
        log.warning("degenerate projection: all assets share one pixel")
    return Layout(kind=SCATTER_PIXELS, assets=train_changes.assets,
                  image_size=image_size, cells=cells,
                  overwritten=tuple(overwritten))


def render_sequence(changes: np.ndarray, layout: Layout) -> np.ndarray:
    """Render a [T x assets] change block into frames [T, H, W] in [0, 255]."""
    changes = np.atleast_2d(np.asarray(changes, dtype=float))
    t, a = changes.shape
    if a != layout.n_assets:
        raise ValueError(f"{a} change columns for a {layout.n_assets}-asset layout")
    h, w = layout.image_size
    pix = sigmoid_pixel(changes)
    flat = np.full((t, h * w), NEUTRAL_PIXEL)
    regions = layout.regions()
    for i, asset in enumerate(layout.assets):
        flat[:, regions[asset]] = pix[:, i][:, None]
    return flat.reshape(t, h, w)


def render_frame(changes: np.ndarray, layout: Layout) -> np.ndarray:
    """Render one change vector [assets] into a single frame [H, W]."""
    return render_sequence(np.asarray(changes, dtype=float)[None, :], layout)[0]


def decode_sequence(frames: np.ndarray, layout: Layout) -> np.ndarray:
    """Invert :func:`render_sequence`: average each asset's region, then invert
    the pixel map. Returns changes [T x assets]."""
    frames = np.asarray(frames, dtype=float)
    if frames.ndim == 2:
        frames = frames[None]
    t = frames.shape[0]
    h, w = layout.image_size
    if frames.shape[1:] != (h, w):
        raise ValueError(f"frame shape {frames.shape[1:]} does not match layout {layout.image_size}")
    flat = frames.reshape(t, h * w)
    regions = layout.regions()
    means = np.empty((t, layout.n_assets))
    for i, asset in enumerate(layout.assets):
        means[:, i] = flat[:, regions[asset]].mean(axis=1)
    return pixel_to_change(means)


def decode_frame(frame: np.ndarray, layout: Layout) -> np.ndarray:
    """Decode one frame [H, W] back to a change vector [assets]."""
    return decode_sequence(np.asarray(frame, dtype=float)[None], layout)[0]


def quantize_frame(frame: np.ndarray) -> np.ndarray:
    """Round a continuous frame to 8-bit levels (uint8)."""
    return np.clip(np.rint(np.asarray(frame, dtype=float)), 0, 255).astype(np.uint8)


def write_frame_png(frame: np.ndarray, path: str | Path) -> None:
    """Write a frame as an 8-bit grayscale PNG (the only place quantization happens)."""
    Image.fromarray(quantize_frame(frame), mode="L").save(Path(path), format="PNG")


def read_frame_png(path: str | Path) -> np.ndarray:
    """Read an 8-bit grayscale PNG back into a float frame in [0, 255]."""
    with Image.open(Path(path)) as img:
        return np.asarray(img.convert("L"), dtype=float)

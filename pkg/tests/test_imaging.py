import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from framecast import imaging
from framecast.imaging import (
    Layout,
    build_grid_layout,
    build_tiled_vector_layout,
    decode_frame,
    decode_sequence,
    grid_bands,
    load_layout,
    pixel_to_change,
    quantize_frame,
    read_frame_png,
    render_frame,
    render_sequence,
    save_layout,
    scatter_layout_from_projection,
    shuffle_layout,
    sigmoid_pixel,
    write_frame_png,
)
from framecast.panels import ChangePanel


def quantized_roundtrip_error(deltas):
    """Brute-force oracle: |logit(round(255*S(delta))/255) - delta| per grid point."""
    q = np.rint(sigmoid_pixel(deltas))
    return np.abs(pixel_to_change(q) - deltas)


DELTA_GRID = np.round(np.arange(-50, 51) * 0.1, 10)  # -5.0 .. 5.0 in 0.1 steps

# frozen outputs of the oracle above, computed before the build
MAX_ERR_8BIT_ABS3 = 0.027411
MAX_ERR_8BIT_ABS5 = 0.169183


class TestPixelMap:
    def test_three_percent_maps_to_243(self):
        assert sigmoid_pixel(3.0) == pytest.approx(242.906, abs=0.01)
        assert round(sigmoid_pixel(3.0)) == 243

    def test_midpoint(self):
        assert sigmoid_pixel(0.0) == 127.5

    def test_minus_three(self):
        # 255*S(-3) evaluated numerically; equals 255 - sigmoid_pixel(3) by symmetry
        assert sigmoid_pixel(-3.0) == pytest.approx(12.0936, abs=0.01)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            sigmoid_pixel(np.nan)
        with pytest.raises(ValueError):
            sigmoid_pixel(np.inf)

    @given(st.floats(min_value=-50, max_value=50))
    @settings(max_examples=100, deadline=None)
    def test_symmetry(self, delta):
        assert sigmoid_pixel(delta) + sigmoid_pixel(-delta) == pytest.approx(255.0, abs=1e-9)

    @given(st.floats(min_value=-30, max_value=30).filter(
        lambda d: d == 0 or abs(d) > 1e-12))
    @settings(max_examples=100, deadline=None)
    def test_sign_correspondence(self, delta):
        p = sigmoid_pixel(delta)
        assert (p > 127.5) == (delta > 0)

    def test_monotone(self):
        grid = np.linspace(-10, 10, 400)
        assert np.all(np.diff(sigmoid_pixel(grid)) > 0)


class TestPixelInverse:
    def test_midpoint(self):
        assert pixel_to_change(127.5) == pytest.approx(0.0, abs=1e-12)

    def test_243_gives_about_three(self):
        assert pixel_to_change(243.0) == pytest.approx(np.log(243 / 12), abs=1e-12)
        assert pixel_to_change(243.0) == pytest.approx(3.008, abs=1e-3)

    def test_saturated_pixel_clamped(self):
        assert pixel_to_change(255.0) == pytest.approx(np.log(254.5 / 0.5), abs=1e-12)
        assert pixel_to_change(255.0) == pytest.approx(6.2324, abs=1e-3)
        assert pixel_to_change(0.0) == pytest.approx(-np.log(254.5 / 0.5), abs=1e-12)

    @given(st.floats(min_value=-5.5, max_value=5.5))
    @settings(max_examples=100, deadline=None)
    def test_exact_inverse_inside_open_interval(self, delta):
        assert pixel_to_change(sigmoid_pixel(delta)) == pytest.approx(delta, abs=1e-9)


class TestQuantizationOracle:
    def test_continuous_roundtrip_on_grid(self):
        err = np.abs(pixel_to_change(sigmoid_pixel(DELTA_GRID)) - DELTA_GRID)
        assert err.max() < 1e-9

    def test_8bit_bound_within_3(self):
        err = quantized_roundtrip_error(DELTA_GRID[np.abs(DELTA_GRID) <= 3.0])
        assert err.max() == pytest.approx(MAX_ERR_8BIT_ABS3, abs=1e-5)
        assert err.max() <= 0.05

    def test_8bit_bound_within_5(self):
        err = quantized_roundtrip_error(DELTA_GRID)
        assert err.max() == pytest.approx(MAX_ERR_8BIT_ABS5, abs=1e-5)
        assert float(DELTA_GRID[err.argmax()]) in (-4.6, 4.6)

    def test_8bit_sign_preserved_from_002(self):
        grid = np.concatenate([np.linspace(0.02, 5, 500), -np.linspace(0.02, 5, 500)])
        q = np.rint(sigmoid_pixel(grid))
        back = pixel_to_change(q)
        assert np.all(np.sign(back) == np.sign(grid))


def grid9(image_size=(64, 64)):
    return build_grid_layout([f"A{i}" for i in range(9)], image_size=image_size)


class TestRenderDecode:
    def test_neutral_frame(self):
        frame = render_frame(np.zeros(9), grid9())
        assert frame.shape == (64, 64)
        np.testing.assert_allclose(frame, 127.5)

    def test_single_hot_tile(self):
        layout = grid9()
        deltas = np.zeros(9)
        deltas[0] = 3.0
        frame = render_frame(deltas, layout)
        # asset A0 sits at tile (0,0): rows 0..21, cols 0..21 for 64/3 bands
        np.testing.assert_allclose(frame[:22, :22], sigmoid_pixel(3.0))
        np.testing.assert_allclose(frame[:22, 22:], 127.5)
        np.testing.assert_allclose(frame[22:], 127.5)

    def test_band_partition_64_over_3(self):
        assert grid_bands(64, 3) == [(0, 22), (22, 43), (43, 64)]

    def test_tiled_vector_raster_repetition(self):
        assets = [f"A{i}" for i in range(9)]
        layout = build_tiled_vector_layout(assets, image_size=(64, 64))
        deltas = np.linspace(-2, 2, 9)
        flat = render_frame(deltas, layout).ravel()
        expected = sigmoid_pixel(deltas)[np.arange(64 * 64) % 9]
        np.testing.assert_allclose(flat, expected)

    def test_roundtrip_grid_continuous(self):
        layout = grid9()
        deltas = np.linspace(-4, 4, 9)
        decoded = decode_frame(render_frame(deltas, layout), layout)
        np.testing.assert_allclose(decoded, deltas, atol=1e-9)

    def test_uniform_neutral_decodes_to_zero(self):
        layout = grid9()
        decoded = decode_frame(np.full((64, 64), 127.5), layout)
        np.testing.assert_allclose(decoded, 0.0, atol=1e-12)

    def test_roundtrip_8bit_within_frozen_bounds(self):
        layout = grid9()
        rng = np.random.default_rng(3)
        deltas = rng.uniform(-3, 3, size=(20, 9))
        frames = render_sequence(deltas, layout)
        decoded = decode_sequence(quantize_frame(frames[0])[None].astype(float), layout)
        for t in range(20):
            decoded = decode_frame(quantize_frame(frames[t]).astype(float), layout)
            assert np.abs(decoded - deltas[t]).max() <= 0.05

    def test_roundtrip_tiled_vector(self):
        layout = build_tiled_vector_layout([f"A{i}" for i in range(9)])
        deltas = np.linspace(-3, 3, 9)
        decoded = decode_frame(render_frame(deltas, layout), layout)
        np.testing.assert_allclose(decoded, deltas, atol=1e-9)

    def test_roundtrip_scatter(self):
        panel = ChangePanel(
            dates=pd.bdate_range("2020-01-02", periods=50),
            assets=("A", "B", "C"),
            changes=np.random.default_rng(0).normal(size=(50, 3)),
            lag=1,
        )
        layout = scatter_layout_from_projection(panel, image_size=(32, 32))
        deltas = np.array([1.5, -0.5, 0.25])
        decoded = decode_frame(render_frame(deltas, layout), layout)
        np.testing.assert_allclose(decoded, deltas, atol=1e-9)

    def test_monotone_per_pixel_and_region_isolation(self):
        layout = grid9((32, 32))
        base = np.linspace(-2, 2, 9)
        bumped = base.copy()
        bumped[4] += 0.7
        f0, f1 = render_frame(base, layout), render_frame(bumped, layout)
        region = layout.regions()[layout.assets[4]]
        flat0, flat1 = f0.ravel(), f1.ravel()
        assert np.all(flat1[region] > flat0[region])
        others = np.setdiff1d(np.arange(32 * 32), region)
        np.testing.assert_array_equal(flat0[others], flat1[others])

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="layout"):
            render_frame(np.zeros(5), grid9())

    def test_sequence_shapes(self):
        layout = grid9((16, 16))
        frames = render_sequence(np.zeros((7, 9)), layout)
        assert frames.shape == (7, 16, 16)
        back = decode_sequence(frames, layout)
        assert back.shape == (7, 9)


class TestGridLayout:
    def test_default_market_adjacencies(self):
        assets = ("DAL", "SPY", "VNQ", "TSLA", "DIA", "GLD", "USO", "TLT", "AGG")
        layout = build_grid_layout(assets)

        def adjacent(a, b):
            (r1, c1), (r2, c2) = layout.cells[a], layout.cells[b]
            return max(abs(r1 - r2), abs(c1 - c2)) == 1

        assert adjacent("SPY", "DIA")
        assert adjacent("TLT", "AGG")
        assert adjacent("DAL", "USO")

    def test_single_asset_single_tile(self):
        layout = build_grid_layout(["X"], grid_shape=(1, 1))
        assert layout.kind == "single_tile"
        frame = render_frame(np.array([3.0]), layout)
        np.testing.assert_allclose(frame, sigmoid_pixel(3.0))

    def test_duplicate_cell_rejected(self):
        with pytest.raises(ValueError, match="same grid cell|duplicate"):
            build_grid_layout(["A", "B"], arrangement={"A": (0, 0), "B": (0, 0)})

    def test_cell_outside_grid_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            Layout(kind="grid_tiles", assets=("A",), grid_shape=(1, 1),
                   cells={"A": (2, 0)})


class TestShuffleLayout:
    def test_reproducible_per_seed(self):
        layout = grid9()
        corr = np.eye(9)
        a = shuffle_layout(layout, seed=5, correlations=corr)
        b = shuffle_layout(layout, seed=5, correlations=corr)
        assert a.cells == b.cells

    def test_different_from_input(self):
        layout = grid9()
        shuffled = shuffle_layout(layout, seed=1, correlations=np.eye(9))
        assert shuffled.cells != layout.cells

    def test_correlated_pair_separated(self):
        # exhaustively-verified objective behavior: a perfectly correlated pair
        # must land in non-adjacent tiles of the 3x3 grid
        layout = grid9()
        corr = np.eye(9)
        corr[0, 1] = corr[1, 0] = 1.0
        shuffled = shuffle_layout(layout, seed=7, correlations=corr)
        (r1, c1), (r2, c2) = shuffled.cells["A0"], shuffled.cells["A1"]
        assert max(abs(r1 - r2), abs(c1 - c2)) >= 2

    def test_requires_grid(self):
        layout = build_tiled_vector_layout(["A", "B"])
        with pytest.raises(ValueError, match="grid"):
            shuffle_layout(layout, 0, np.eye(2))


class TestScatterLayout:
    def make_panel(self, changes, assets=None):
        changes = np.asarray(changes, dtype=float)
        assets = assets or tuple(f"A{i}" for i in range(changes.shape[1]))
        return ChangePanel(dates=pd.bdate_range("2020-01-02", periods=len(changes)),
                           assets=assets, changes=changes, lag=1)

    def test_two_distinct_assets_two_pixels(self):
        rng = np.random.default_rng(1)
        panel = self.make_panel(rng.normal(size=(30, 2)))
        layout = scatter_layout_from_projection(panel, image_size=(16, 16))
        assert layout.cells["A0"] != layout.cells["A1"]
        assert layout.overwritten == ()

    def test_near_duplicate_assets_conflict(self):
        rng = np.random.default_rng(2)
        base = rng.normal(size=30)
        changes = np.column_stack([
            base,
            base + rng.normal(0, 1e-4, 30),  # near-copy of asset 0
            rng.normal(size=30) * 3,
            rng.normal(size=30),
        ])
        panel = self.make_panel(changes)
        layout = scatter_layout_from_projection(panel, image_size=(64, 64))
        assert "A0" in layout.overwritten  # later near-copy A1 overwrites A0
        assert layout.cells["A0"] == layout.cells["A1"]

    def test_collinear_series_give_collinear_pixels(self):
        v = np.random.default_rng(3).normal(size=40)
        changes = np.column_stack([1.0 * v, 2.0 * v, 3.0 * v])
        panel = self.make_panel(changes)
        layout = scatter_layout_from_projection(panel, image_size=(32, 32))
        pts = np.array([layout.cells[a] for a in panel.assets], dtype=float)
        cross = ((pts[1][0] - pts[0][0]) * (pts[2][1] - pts[0][1])
                 - (pts[1][1] - pts[0][1]) * (pts[2][0] - pts[0][0]))
        assert abs(cross) <= 1.0  # collinear up to pixel rounding

    def test_degenerate_all_identical(self):
        v = np.ones((10, 3))
        layout = scatter_layout_from_projection(self.make_panel(v), image_size=(8, 8))
        assert len(set(layout.cells.values())) == 1
        assert len(layout.overwritten) == 2

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        panel = self.make_panel(rng.normal(size=(25, 5)))
        a = scatter_layout_from_projection(panel)
        b = scatter_layout_from_projection(panel)
        assert a.cells == b.cells

    def test_background_not_decoded(self):
        rng = np.random.default_rng(5)
        panel = self.make_panel(rng.normal(size=(30, 2)))
        layout = scatter_layout_from_projection(panel, image_size=(16, 16))
        deltas = np.array([2.0, -2.0])
        frame = render_frame(deltas, layout)
        # corrupt every background pixel; decoding must not change
        flat = frame.ravel().copy()
        owned = np.concatenate(list(layout.regions().values()))
        background = np.setdiff1d(np.arange(flat.size), owned)
        flat[background] = 255.0
        np.testing.assert_allclose(decode_frame(flat.reshape(16, 16), layout),
                                   deltas, atol=1e-9)


class TestSerialization:
    def test_layout_json_roundtrip(self, tmp_path):
        for layout in (grid9(), build_tiled_vector_layout(["A", "B", "C"])):
            path = tmp_path / f"{layout.kind}.json"
            save_layout(layout, path)
            back = load_layout(path)
            assert back == layout

    def test_png_roundtrip(self, tmp_path):
        layout = grid9((32, 32))
        frame = render_frame(np.linspace(-3, 3, 9), layout)
        path = tmp_path / "frame.png"
        write_frame_png(frame, path)
        back = read_frame_png(path)
        np.testing.assert_array_equal(back, quantize_frame(frame).astype(float))

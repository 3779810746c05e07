import numpy as np
import pytest

from framecast.synthdata import (
    VarProcessSpec,
    coupled_market_spec,
    demo_grid_arrangement,
    demo_market_panel,
    generate_var_panel,
    swap_pair_coupling,
    up_fraction,
)


def lag1_autocorr(x):
    x = x - x.mean()
    return float((x[1:] * x[:-1]).sum() / (x * x).sum())


class TestGenerateVarPanel:
    def test_deterministic_per_seed(self):
        spec = VarProcessSpec(coupling=np.diag([0.5, 0.3]), noise_std=1.0,
                              length=200, seed=11)
        a = generate_var_panel(spec)
        b = generate_var_panel(spec)
        np.testing.assert_array_equal(a.changes, b.changes)
        c = generate_var_panel(VarProcessSpec(coupling=np.diag([0.5, 0.3]),
                                              noise_std=1.0, length=200, seed=12))
        assert not np.array_equal(a.changes, c.changes)

    def test_zero_coupling_is_white_noise(self):
        spec = VarProcessSpec(coupling=np.zeros((3, 3)), noise_std=1.0,
                              length=4000, seed=0)
        panel = generate_var_panel(spec)
        bound = 3.0 / np.sqrt(spec.length)
        for i in range(3):
            assert abs(lag1_autocorr(panel.changes[:, i])) < bound

    def test_diagonal_ar1_autocorrelation(self):
        spec = VarProcessSpec(coupling=np.diag([0.9, 0.9]), noise_std=0.1,
                              length=6000, seed=1)
        panel = generate_var_panel(spec)
        for i in range(2):
            assert lag1_autocorr(panel.changes[:, i]) == pytest.approx(0.9, abs=0.05)

    def test_anti_coupled_pair_negative_cross_correlation(self):
        coupling = np.zeros((2, 2))
        coupling[0, 1] = -0.8
        spec = VarProcessSpec(coupling=coupling, noise_std=1.0, length=6000, seed=2)
        panel = generate_var_panel(spec)
        x0, x1 = panel.changes[:, 0], panel.changes[:, 1]
        lagged = np.corrcoef(x0[1:], x1[:-1])[0, 1]  # x0 follows -0.8 * x1
        assert lagged < -0.5

    def test_nonstationary_rejected(self):
        with pytest.raises(ValueError, match="spectral radius"):
            VarProcessSpec(coupling=np.diag([1.01]), noise_std=1.0, length=10)

    def test_stationary_mean_matches_theory(self):
        # for diagonal coupling, stationary mean is drift / (1 - a_ii)
        spec = VarProcessSpec(coupling=np.diag([0.5, 0.8]), noise_std=0.5,
                              length=20000, drift=np.array([0.2, 0.1]), seed=3)
        panel = generate_var_panel(spec)
        np.testing.assert_allclose(panel.changes.mean(axis=0),
                                   [0.2 / 0.5, 0.1 / 0.2], atol=0.08)

    def test_validation_errors(self):
        with pytest.raises(ValueError, match="noise_std"):
            VarProcessSpec(coupling=np.zeros((2, 2)), noise_std=0.0, length=10)
        with pytest.raises(ValueError, match="square"):
            VarProcessSpec(coupling=np.zeros((2, 3)), noise_std=1.0, length=10)
        with pytest.raises(ValueError, match="drift"):
            VarProcessSpec(coupling=np.zeros((2, 2)), noise_std=1.0, length=10,
                           drift=np.zeros(3))


class TestUpFraction:
    def test_all_positive(self):
        spec = VarProcessSpec(coupling=np.zeros((2, 2)), noise_std=0.1,
                              length=500, drift=np.array([5.0, 5.0]), seed=4)
        panel = generate_var_panel(spec)
        np.testing.assert_array_equal(up_fraction(panel), [1.0, 1.0])

    def test_symmetric_noise_near_half(self):
        spec = VarProcessSpec(coupling=np.zeros((3, 3)), noise_std=1.0,
                              length=8000, seed=5)
        panel = generate_var_panel(spec)
        bound = 3.0 / (2.0 * np.sqrt(spec.length))
        assert np.all(np.abs(up_fraction(panel) - 0.5) < bound)


class TestCoupledMarket:
    def test_swap_coupling_stationary(self):
        a = swap_pair_coupling(0.72)
        assert np.abs(np.linalg.eigvals(a)).max() == pytest.approx(0.72, abs=1e-12)

    def test_oracle_sign_accuracy_matches_closed_form(self):
        # optimal one-step predictor A x_t; sign accuracy 1/2 + arcsin(a)/pi
        strength = 0.72
        spec = coupled_market_spec(length=20000, strength=strength, seed=6)
        panel = generate_var_panel(spec)
        x = panel.changes
        pred = x[:-1] @ spec.coupling.T
        acc = (((pred >= 0) == (x[1:] >= 0))).mean()
        assert acc == pytest.approx(0.5 + np.arcsin(strength) / np.pi, abs=0.01)

    def test_marginal_predictor_is_weaker(self):
        # own-history optimum is the two-step echo a^2 x_{t-2}
        strength = 0.72
        spec = coupled_market_spec(length=20000, strength=strength, seed=7)
        x = generate_var_panel(spec).changes
        pred = (strength ** 2) * x[:-2, 0]
        acc = ((pred >= 0) == (x[2:, 0] >= 0)).mean()
        assert acc == pytest.approx(0.5 + np.arcsin(strength ** 2) / np.pi, abs=0.015)

    def test_demo_panel_near_duplicate_pair(self):
        panel = demo_market_panel(length=600, seed=8)
        corr = np.corrcoef(panel.changes[:, 0], panel.changes[:, 8])[0, 1]
        assert corr > 0.999

    def test_demo_panel_outlier_scale(self):
        panel = demo_market_panel(length=600, seed=9)
        stds = panel.changes.std(axis=0)
        assert stds[3] > 2.0 * np.median(np.delete(stds, 3))

    def test_demo_panel_deterministic(self):
        a = demo_market_panel(length=300, seed=10)
        b = demo_market_panel(length=300, seed=10)
        np.testing.assert_array_equal(a.changes, b.changes)

    def test_demo_arrangement_pairs_adjacent(self):
        panel = demo_market_panel(length=300, seed=0)
        cells = demo_grid_arrangement(panel.assets)

        def adjacent(i, j):
            (r1, c1), (r2, c2) = cells[panel.assets[i]], cells[panel.assets[j]]
            return max(abs(r1 - r2), abs(c1 - c2)) == 1

        assert adjacent(0, 1) and adjacent(2, 3) and adjacent(4, 5) and adjacent(6, 7)

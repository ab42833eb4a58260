"""Core model: grids, reshape ordering, log-domain split, profiles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plcmimo import (
    DB_LOG_SCALE,
    ChannelSet,
    DegenerateChannelError,
    DimensionError,
    MimoGrid,
    ModelParameters,
    ParameterError,
    ReshapedVector,
    combine_cfr_db,
    decimate_grid,
    default_grid,
    mode_mu_vector,
    mode_sigma_vector,
    mu_profile,
    reshape,
    scheme_grid,
    sigma_profile,
    split_cfr_db,
    unreshape,
    wrap_phase,
)


def test_db_log_scale_constant():
    assert DB_LOG_SCALE == pytest.approx(8.685889638, abs=5e-10)


class TestGrid:
    def test_default_grid(self):
        g = default_grid()
        assert g.n_tx == 2 and g.n_rx == 3 and g.n_freq == 1588
        assert g.size == 2 * 3 * 1588 == 9528
        f = g.frequencies
        assert f[0] == 1.8e6
        assert f[1] - f[0] == 62.5e3
        assert f[-1] == pytest.approx(1.8e6 + 1587 * 62.5e3)

    def test_combo_order_is_tx_major(self):
        g = default_grid()
        labels = [str(c) for c in g.combos]
        assert labels == ["PN->P", "PN->N", "PN->CM", "PE->P", "PE->N", "PE->CM"]
        assert [c.is_cm for c in g.combos] == [False, False, True, False, False, True]

    def test_combo_index(self):
        g = default_grid()
        assert g.combo_index("PN", "P") == 0
        assert g.combo_index("PE", "CM") == 5
        with pytest.raises(ParameterError):
            g.combo_index("PN", "X")

    def test_schemes(self):
        assert scheme_grid("siso").n_combos == 1
        assert scheme_grid("2x2").n_combos == 4
        assert scheme_grid("2x3").n_combos == 6
        assert all(not c.is_cm for c in scheme_grid("2x2").combos)
        with pytest.raises(ParameterError):
            scheme_grid("4x4")

    def test_validation(self):
        with pytest.raises(ParameterError):
            MimoGrid(("PN",), ("P",), 1, 1.8e6, 62.5e3)
        with pytest.raises(ParameterError):
            MimoGrid(("PN", "PN"), ("P",), 4, 1.8e6, 62.5e3)
        with pytest.raises(ParameterError):
            MimoGrid(("PN",), ("P",), 4, -1.0, 62.5e3)

    def test_decimation(self):
        g = decimate_grid(default_grid(), 4)
        assert g.n_freq == 397
        assert g.f_step_hz == 250e3
        assert g.f_start_hz == 1.8e6
        with pytest.raises(ParameterError):
            decimate_grid(default_grid(), 1000)


class TestReshape:
    def test_known_coordinate(self):
        # tx index 2, rx index 3, freq index 10 (all 1-based) must land at
        # 1-based position (2-1)*3*1588 + (3-1)*1588 + 10 = 7950.
        g = default_grid()
        arr = np.zeros((3, 2, 1588))
        arr[2, 1, 9] = 1.0
        v = reshape(arr, g)
        assert v[7950 - 1] == 1.0
        assert v.sum() == 1.0

    def test_block_layout(self):
        # each mode combination occupies one contiguous frequency block
        g = MimoGrid(("PN", "PE"), ("P", "N", "CM"), 4, 1.8e6, 62.5e3)
        arr = np.empty((3, 2, 4))
        for j in range(3):
            for i in range(2):
                arr[j, i] = 10 * (i * 3 + j) + np.arange(4)
        v = reshape(arr, g)
        for k in range(6):
            np.testing.assert_array_equal(v[4 * k : 4 * (k + 1)], 10 * k + np.arange(4))

    def test_round_trip(self):
        g = MimoGrid(("PN", "PE"), ("P", "CM"), 7, 2e6, 1e5)
        rng = np.random.default_rng(7)
        arr = rng.normal(size=(2, 2, 7)) + 1j * rng.normal(size=(2, 2, 7))
        np.testing.assert_array_equal(unreshape(reshape(arr, g), g), arr)

    def test_shape_check(self):
        g = default_grid()
        with pytest.raises(DimensionError):
            reshape(np.zeros((2, 3, 1588)), g)
        with pytest.raises(DimensionError):
            unreshape(np.zeros(5), g)

    @given(
        n_tx=st.integers(1, 2),
        n_rx=st.integers(1, 3),
        n_freq=st.integers(2, 12),
        seed=st.integers(0, 2**32 - 1),
    )
    @settings(max_examples=40, deadline=None)
    def test_bijection_property(self, n_tx, n_rx, n_freq, seed):
        g = MimoGrid(
            tuple(["PN", "PE"][:n_tx]),
            tuple(["P", "N", "CM"][:n_rx]),
            n_freq,
            1.8e6,
            62.5e3,
        )
        arr = np.random.default_rng(seed).normal(size=(n_rx, n_tx, n_freq))
        back = unreshape(reshape(arr, g), g)
        np.testing.assert_array_equal(back, arr)


class TestSplitCombine:
    def test_split_values(self):
        H = np.array([10.0, 1j, -1.0])
        a, p = split_cfr_db(H)
        np.testing.assert_allclose(a, [20.0, 0.0, 0.0], atol=1e-12)
        # phase of -1 wraps to the open end of the interval: -pi, not +pi
        np.testing.assert_allclose(p, [0.0, np.pi / 2, -np.pi], atol=1e-12)

    def test_zero_rejected(self):
        with pytest.raises(DegenerateChannelError):
            split_cfr_db(np.array([1.0, 0.0]))

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        H = rng.normal(size=50) + 1j * rng.normal(size=50)
        a, p = split_cfr_db(H)
        np.testing.assert_allclose(combine_cfr_db(a, p), H, rtol=1e-12)


class TestWrap:
    def test_examples(self):
        assert wrap_phase(-7.5) == pytest.approx(-1.2168146928204138, abs=1e-12)
        assert wrap_phase(0.0) == 0.0
        # +pi maps to -pi (half-open interval)
        assert wrap_phase(np.pi) == pytest.approx(-np.pi)
        assert wrap_phase(-np.pi) == pytest.approx(-np.pi)

    @given(st.floats(-1e3, 1e3))
    @settings(max_examples=200, deadline=None)
    def test_range_and_equivalence(self, x):
        w = float(wrap_phase(x))
        assert -np.pi <= w < np.pi
        # same point on the unit circle
        assert abs(np.exp(1j * w) - np.exp(1j * x)) < 1e-9


class TestProfiles:
    def test_mu_line(self):
        p = ModelParameters()
        assert mu_profile(50e6, p) == pytest.approx(-51.674, abs=1e-9)
        assert mu_profile(100e6, p) == pytest.approx(-60.908, abs=1e-9)
        assert mu_profile(0.0, p) == pytest.approx(-42.44)

    def test_sigma_lines(self):
        p = ModelParameters()
        assert sigma_profile(50e6, False, p) == pytest.approx(16.453, abs=1e-9)
        assert sigma_profile(50e6, True, p) == pytest.approx(11.03, abs=1e-9)

    def test_sigma_must_stay_positive(self):
        p = ModelParameters(sigma_slope_db_per_ghz_nocm=-400.0)
        with pytest.raises(ParameterError):
            sigma_profile(100e6, False, p)

    def test_mode_vectors(self):
        g = MimoGrid(("PN",), ("P", "CM"), 3, 50e6, 1e6)
        p = ModelParameters()
        sig = mode_sigma_vector(g, p)
        assert sig.shape == (6,)
        assert sig[0] == pytest.approx(16.453, abs=1e-9)  # P block at 50 MHz
        assert sig[3] == pytest.approx(11.03, abs=1e-9)  # CM block at 50 MHz
        mu = mode_mu_vector(g, p)
        assert mu[0] == mu[3] == pytest.approx(-51.674, abs=1e-9)

    def test_parameter_validation(self):
        with pytest.raises(ParameterError):
            ModelParameters(gev_scale_rad_per_hz=0.0)
        with pytest.raises(ParameterError):
            ModelParameters(sigma_intercept_db_cm=-1.0)


class TestChannelSet:
    def test_shape_check(self):
        g = scheme_grid("siso")
        with pytest.raises(DimensionError):
            ChannelSet(g, np.zeros((2, 1, 1, 10), dtype=complex))

    def test_reshaped_matrices(self):
        g = MimoGrid(("PN", "PE"), ("P", "N", "CM"), 4, 1.8e6, 62.5e3)
        rng = np.random.default_rng(11)
        resp = rng.normal(size=(5, 3, 2, 4)) + 1j * rng.normal(size=(5, 3, 2, 4))
        cs = ChannelSet(g, resp)
        a_mat = cs.reshaped_amplitudes_db()
        assert a_mat.shape == (5, 24)
        a3, _ = split_cfr_db(resp[2])
        np.testing.assert_allclose(a_mat[2], reshape(a3, g), rtol=1e-12)

    def test_rx_subset(self):
        g = scheme_grid("2x3")
        resp = np.ones((2, 3, 2, 1588), dtype=complex)
        resp[:, 2] = 5.0  # CM rows
        cs = ChannelSet(g, resp).subset_rx(("P", "N"))
        assert cs.grid.rx_modes == ("P", "N")
        assert cs.responses.shape == (2, 2, 2, 1588)
        assert np.all(cs.responses == 1.0)


def test_reshaped_vector_checks_length():
    g = scheme_grid("siso")
    ReshapedVector(np.zeros(g.size), g, kind="amplitude_db")
    with pytest.raises(DimensionError):
        ReshapedVector(np.zeros(3), g)

import numpy as np
import pytest

from plcmimo import (
    ChannelSet,
    InsufficientDataError,
    MimoGrid,
    ModelParameters,
    UndefinedStatisticError,
    wrap_phase,
)
from plcmimo.characterization import (
    antidiag_average,
    characterize,
    empirical_combo_correlation,
    empirical_cross_fraction,
    estimate_profiles,
    extract_phase_slopes,
    fit_exponential_tail,
    fit_gev,
    fit_power,
    robust_linear_fit,
)
from plcmimo.covariance import lag_correlation, toeplitz_block
from plcmimo.generator import GeneratorConfig, generate


def small_grid(n_freq=32, rx=("P", "N", "CM"), f_step=62.5e3):
    return MimoGrid(("PN", "PE"), rx, n_freq, 1.8e6, f_step)


# ------------------------------------------------------------ line fits


def test_robust_fit_recovers_noiseless_line():
    x = np.linspace(0.0018, 0.101, 200)
    y = -42.44 - 184.68 * x
    slope, intercept, diag = robust_linear_fit(x, y)
    assert slope == pytest.approx(-184.68, abs=1e-9)
    assert intercept == pytest.approx(-42.44, abs=1e-9)
    assert diag.converged


def test_robust_fit_shrugs_off_outliers():
    rng = np.random.default_rng(8)
    x = np.linspace(0, 1, 120)
    y = 2.0 + 3.0 * x + rng.normal(scale=0.01, size=x.size)
    y[::10] += 25.0  # 12 wild points
    slope, intercept, _ = robust_linear_fit(x, y)
    ols = np.polyfit(x, y, 1)
    assert abs(slope - 3.0) / 3.0 <= 0.01
    assert abs(ols[0] - 3.0) / 3.0 >= 0.05


def test_robust_fit_needs_two_points():
    with pytest.raises(Exception):
        robust_linear_fit(np.array([1.0]), np.array([2.0]))


# ----------------------------------------------------------- profiles


def test_estimate_profiles_matches_manual():
    grid = small_grid(n_freq=8)
    rng = np.random.default_rng(1)
    resp = rng.normal(size=(5, 3, 2, 8)) + 1j * rng.normal(size=(5, 3, 2, 8))
    cs = ChannelSet(grid, resp)
    est = estimate_profiles(cs)
    a_db = 20 * np.log10(np.abs(resp))
    manual_mean = a_db.transpose(0, 2, 1, 3).reshape(5, 6, 8).mean(axis=0)
    np.testing.assert_allclose(est.mean_db, manual_mean, rtol=1e-12)
    assert est.std_db.shape == (6, 8)


def test_estimate_profiles_needs_two():
    grid = small_grid(n_freq=4)
    resp = np.ones((1, 3, 2, 4), dtype=complex)
    with pytest.raises(InsufficientDataError):
        estimate_profiles(ChannelSet(grid, resp))


# ------------------------------------------------- anti-diagonal average


def test_antidiag_two_by_two_example():
    out = antidiag_average(np.array([[1.0, 0.4], [0.6, 1.0]]))
    np.testing.assert_allclose(out, [1.0, 0.5])


def test_antidiag_inverts_toeplitz():
    profile = np.array([1.0, 0.8, 0.5, 0.2, 0.05])
    block = toeplitz_block(profile)
    np.testing.assert_allclose(antidiag_average(block), profile, rtol=0, atol=0)


def test_antidiag_rejects_rectangles():
    with pytest.raises(Exception):
        antidiag_average(np.ones((2, 3)))


def test_empirical_correlation_zero_variance_named():
    grid = small_grid(n_freq=4)
    rng = np.random.default_rng(2)
    a = rng.normal(size=(6, grid.size))
    a[:, 5] = 3.0  # second combo, frequency index 1
    with pytest.raises(UndefinedStatisticError, match="frequency index 1"):
        empirical_combo_correlation(a, grid, 1)


def test_empirical_correlation_basic_shape():
    grid = small_grid(n_freq=4)
    rng = np.random.default_rng(3)
    a = rng.normal(size=(50, grid.size))
    r = empirical_combo_correlation(a, grid, 0)
    assert r.shape == (4, 4)
    np.testing.assert_allclose(np.diag(r), 1.0, atol=1e-12)
    np.testing.assert_allclose(r, r.T, atol=1e-12)


# ------------------------------------------------------------- lag fits


def test_fit_power_recovers_generating_coefficients():
    params = ModelParameters()
    lags = 62.5e3 * np.arange(1600)
    vals = lag_correlation(lags, is_cm=False, params=params)
    a, b, c, diag = fit_power(lags, vals)
    assert a == pytest.approx(params.lag_a_nocm, rel=1e-6)
    assert b == pytest.approx(params.lag_b_nocm, rel=1e-6)
    assert c == pytest.approx(params.lag_c_nocm, rel=1e-6)
    assert diag.converged


def test_fit_power_excludes_saturated_region():
    # the clamp at 1 hides the decay below ~1.9 MHz; those samples are
    # saturated and must not poison the fit
    params = ModelParameters()
    lags = 62.5e3 * np.arange(1600)
    vals = lag_correlation(lags, is_cm=False, params=params)
    assert vals[1] == 1.0  # the clamp really is active
    a, b, c, _ = fit_power(lags, vals)
    assert b == pytest.approx(params.lag_b_nocm, rel=1e-6)


def test_fit_power_needs_enough_samples():
    with pytest.raises(InsufficientDataError):
        fit_power(np.array([0.0, 50e6]), np.array([1.0, 0.5]))


def test_fit_exponential_tail_round_trip():
    params = ModelParameters()
    lags = 62.5e3 * np.arange(1600)  # up to 99.94 MHz
    vals = lag_correlation(lags, is_cm=True, params=params)
    pa, pb, pc, _ = fit_power(lags, vals)
    a, b, c, diag = fit_exponential_tail(lags, vals, (pa, pb, pc))
    assert a == pytest.approx(params.lag_exp_a_cm, rel=1e-3)
    assert b == pytest.approx(params.lag_exp_b_cm, rel=1e-3)
    assert c == pytest.approx(params.lag_exp_c_cm, rel=1e-3)
    assert diag.notes == ""  # correction at the knee is within 0.01


def test_fit_exponential_tail_needs_tail():
    with pytest.raises(InsufficientDataError):
        fit_exponential_tail(
            62.5e3 * np.arange(100), np.ones(100), (1.0, -1.0, 0.0)
        )


# --------------------------------------------------------- phase slopes


def make_phase_set(grid, slopes):
    """Unit-amplitude responses with exact per-realization phase slopes."""
    n = len(slopes)
    f = grid.frequencies
    resp = np.empty((n, grid.n_rx, grid.n_tx, grid.n_freq), dtype=complex)
    for i, s in enumerate(slopes):
        resp[i] = np.exp(1j * wrap_phase(-s * f))[None, None, :]
    return ChannelSet(grid, resp)


def test_extract_phase_slopes_exact():
    grid = small_grid(n_freq=64)
    truth = [1.133e-6, 2.5e-6, 0.4e-6]
    cs = make_phase_set(grid, truth)
    slopes = extract_phase_slopes(cs)
    assert slopes.shape == (3, 6)
    for i, s in enumerate(truth):
        np.testing.assert_allclose(slopes[i], s, rtol=1e-9)


def test_extract_phase_slopes_across_wrap_jumps():
    # increments of ~2.5 rad per step force many wrap jumps
    grid = small_grid(n_freq=32)
    s = 4e-5
    cs = make_phase_set(grid, [s])
    assert extract_phase_slopes(cs)[0, 0] == pytest.approx(s, rel=1e-9)


def test_extract_phase_slopes_robust_path():
    grid = small_grid(n_freq=16)
    cs = make_phase_set(grid, [1e-6])
    plain = extract_phase_slopes(cs)
    robust = extract_phase_slopes(cs, robust=True)
    np.testing.assert_allclose(robust, plain, rtol=1e-6)


# ------------------------------------------------------------------ GEV


def test_fit_gev_monte_carlo():
    from scipy.stats import genextreme

    params = ModelParameters()
    rng = np.random.default_rng(17)
    x = genextreme.rvs(
        -params.gev_shape,
        loc=params.gev_location_rad_per_hz,
        scale=params.gev_scale_rad_per_hz,
        size=40000,
        random_state=rng,
    )
    shape, loc, scale, diag = fit_gev(x)
    assert diag.converged
    assert shape == pytest.approx(params.gev_shape, abs=0.02)
    assert loc == pytest.approx(params.gev_location_rad_per_hz, rel=0.03)
    assert scale == pytest.approx(params.gev_scale_rad_per_hz, rel=0.03)


def test_fit_gev_needs_fifty_samples():
    with pytest.raises(InsufficientDataError):
        fit_gev(np.ones(49))


def test_fit_gev_degenerate_sample_flagged():
    shape, loc, scale, diag = fit_gev(np.full(60, 2.0))
    assert loc == 2.0
    assert np.isnan(scale)
    assert not diag.converged


# ------------------------------------------------------- cross coupling


def test_cross_fraction_small_on_generated_set():
    grid = small_grid(n_freq=16)
    cs = generate(GeneratorConfig(n_realizations=400, seed=51), grid=grid)
    assert empirical_cross_fraction(cs) <= 0.003


# ------------------------------------------------------- full round trip


def round_trip_set(n=500, seed=77):
    # 250 kHz step: the lag range spans the 40 MHz knee while the
    # per-step phase increment stays below pi for every slope the GEV
    # law can produce (a coarser grid would alias the largest slopes)
    grid = small_grid(n_freq=400, f_step=250e3)
    return generate(GeneratorConfig(n_realizations=n, seed=seed), grid=grid)


def test_characterize_round_trip():
    cs = round_trip_set()
    params, diag = characterize(cs)
    truth = ModelParameters()
    # sampling noise of the profile fits at n=500 on this small grid is
    # sizable (slope sd ~7 dB/GHz across seeds); bounds sit near 3 sigma
    assert params.mu_intercept_db == pytest.approx(truth.mu_intercept_db, abs=1.5)
    assert params.mu_slope_db_per_ghz == pytest.approx(truth.mu_slope_db_per_ghz, abs=22.0)
    assert params.sigma_intercept_db_nocm == pytest.approx(
        truth.sigma_intercept_db_nocm, rel=0.08
    )
    assert params.sigma_intercept_db_cm == pytest.approx(truth.sigma_intercept_db_cm, rel=0.08)
    # the eigenvalue repair of the assembled covariance moves the
    # realized correlations slightly off the generating power law, so
    # compare fitted and generating curves rather than raw coefficients;
    # coarse grids exaggerate the effect
    lags = np.arange(2, 41) * 1e6
    fitted = np.clip(params.lag_a_nocm * lags**params.lag_b_nocm + params.lag_c_nocm, 0, 1)
    generating = lag_correlation(lags, is_cm=False, params=truth)
    assert np.max(np.abs(fitted - generating)) <= 0.12
    assert params.gev_location_rad_per_hz == pytest.approx(
        truth.gev_location_rad_per_hz, rel=0.05
    )
    assert params.gev_scale_rad_per_hz == pytest.approx(truth.gev_scale_rad_per_hz, rel=0.10)
    assert diag.mu.converged
    assert diag.gev.converged


def test_characterize_without_cm_ports_copies_fits():
    grid = small_grid(n_freq=400, rx=("P", "N"), f_step=250e3)
    cs = generate(GeneratorConfig(n_realizations=60, seed=78), grid=grid)
    params, diag = characterize(cs)
    assert params.lag_a_cm == params.lag_a_nocm
    assert params.sigma_intercept_db_cm == params.sigma_intercept_db_nocm
    assert params.lag_exp_a_cm == 0.0
    assert any("common-mode" in note for note in diag.notes)


def test_characterize_needs_two_realizations():
    cs = generate(GeneratorConfig(n_realizations=1, seed=79), grid=small_grid(n_freq=8))
    with pytest.raises(InsufficientDataError):
        characterize(cs)


def test_characterize_needs_enough_slope_samples():
    grid = MimoGrid(("PN",), ("P",), 16, 1.8e6, 62.5e3)
    cs = generate(GeneratorConfig(n_realizations=20, seed=80), grid=grid)
    with pytest.raises(InsufficientDataError):
        characterize(cs)

import itertools

import numpy as np
import pytest

from plcmimo import DimensionError, MimoGrid, ParameterError
from plcmimo.capacity import (
    CapacityResult,
    NoiseModel,
    PsdMask,
    capacity_ccdf,
    capacity_one,
    capacity_set,
    water_fill,
)
from plcmimo.generator import GeneratorConfig, generate


def small_grid(n_freq=16, rx=("P", "N", "CM"), tx=("PN", "PE")):
    return MimoGrid(tx, rx, n_freq, 1.8e6, 62.5e3)


# ------------------------------------------------------------ water fill


def grid_search_rate(gains, budget, steps):
    """Exhaustive simplex search for max sum log2(1 + p g)."""
    g = [x for x in gains if x > 0]
    k = len(g)
    if k == 0:
        return 0.0
    if k == 1:
        return np.log2(1 + budget * g[0])
    best = 0.0
    ticks = np.linspace(0, budget, steps + 1)
    for split in itertools.product(ticks, repeat=k - 1):
        used = sum(split)
        if used > budget:
            continue
        p = list(split) + [budget - used]
        rate = sum(np.log2(1 + pi * gi) for pi, gi in zip(p, g))
        best = max(best, rate)
    return best


def test_water_fill_budget_conserved():
    p = water_fill(np.array([4.0, 1.0, 0.25]), 2.0)
    assert p.sum() == pytest.approx(2.0, rel=1e-12)
    assert np.all(p >= 0)


def test_water_fill_single_mode_takes_all():
    p = water_fill(np.array([3.0]), 1.5)
    assert p[0] == pytest.approx(1.5)


def test_water_fill_zero_gains():
    p = water_fill(np.zeros(3), 2.0)
    assert np.all(p == 0)


def test_water_fill_weak_mode_starved():
    # with a tight budget the weakest mode gets nothing
    p = water_fill(np.array([10.0, 0.01]), 0.5)
    assert p[1] == 0.0
    assert p[0] == pytest.approx(0.5)


def test_water_fill_matches_grid_search_two_modes():
    g = np.array([4.0, 1.0])
    budget = 2.0
    p = water_fill(g, budget)
    rate = np.log2(1 + p * g).sum()
    ref = grid_search_rate(g, budget, 4000)
    assert rate >= ref - 1e-12
    assert abs(rate - ref) / ref <= 1e-4


def test_water_fill_matches_grid_search_three_modes():
    g = np.array([4.0, 1.0, 0.25])
    budget = 3.0
    p = water_fill(g, budget)
    rate = np.log2(1 + p * g).sum()
    ref = grid_search_rate(g, budget, 300)
    assert rate >= ref - 1e-12
    assert abs(rate - ref) / ref <= 1e-4


def test_water_fill_order_invariance():
    g = np.array([0.25, 4.0, 1.0])
    p = water_fill(g, 2.0)
    g2 = np.array([4.0, 1.0, 0.25])
    p2 = water_fill(g2, 2.0)
    assert p[1] == pytest.approx(p2[0])
    assert p[2] == pytest.approx(p2[1])
    assert p[0] == pytest.approx(p2[2])


def test_water_fill_rejects_negative_budget():
    with pytest.raises(ParameterError):
        water_fill(np.array([1.0]), -1.0)


# ------------------------------------------------------------ noise model


def test_noise_parametric_default():
    noise = NoiseModel()
    # a*exp(b*f) + c with the default coefficients
    f = np.array([0.0, 50e6])
    expected = 35.0 * np.exp(-1.5e-7 * f) - 140.0
    np.testing.assert_allclose(noise.psd_dbm_hz(f), expected, rtol=1e-12)


def test_noise_tabulated_interpolates():
    noise = NoiseModel(psd_coeffs=None, psd_table=((0.0, 100e6), (-110.0, -130.0)))
    assert noise.psd_dbm_hz(np.array([50e6]))[0] == pytest.approx(-120.0)


def test_noise_needs_exactly_one_source():
    with pytest.raises(ParameterError):
        NoiseModel(psd_coeffs=None, psd_table=None)
    with pytest.raises(ParameterError):
        NoiseModel(psd_coeffs=(1, 0, -100), psd_table=((0, 1), (-1, -1)))


def test_noise_rejects_non_hermitian_correlation():
    r = np.array([[1.0, 0.5], [0.2, 1.0]])
    with pytest.raises(ParameterError):
        NoiseModel(rx_correlation=r)


def test_noise_rejects_bad_diagonal():
    r = np.array([[2.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ParameterError):
        NoiseModel(rx_correlation=r)


def test_noise_singular_correlation_rejected_at_use():
    r = np.array([[1.0, 1.0], [1.0, 1.0]])
    noise = NoiseModel(rx_correlation=r)
    with pytest.raises(ParameterError, match="singular"):
        noise.whitener(2)


def test_noise_whitener_matches_eigh():
    r = np.array([[1.0, 0.3], [0.3, 1.0]])
    w = NoiseModel(rx_correlation=r).whitener(2)
    np.testing.assert_allclose(w @ r @ w.conj().T, np.eye(2), atol=1e-12)


def test_noise_whitener_shape_mismatch():
    noise = NoiseModel(rx_correlation=np.eye(2))
    with pytest.raises(DimensionError):
        noise.whitener(3)


# -------------------------------------------------------------- psd mask


def test_mask_default_levels():
    mask = PsdMask()
    f = np.array([1.8e6, 29.9999e6, 30e6, 100e6])
    np.testing.assert_allclose(mask.level_dbm_hz(f), [-55, -55, -85, -85])


def test_mask_below_coverage_rejected():
    mask = PsdMask(((10e6, -55.0),))
    with pytest.raises(ParameterError):
        mask.level_dbm_hz(np.array([1.8e6]))


def test_mask_breakpoints_must_increase():
    with pytest.raises(ParameterError):
        PsdMask(((0.0, -55.0), (0.0, -85.0)))


def test_mask_shifted():
    mask = PsdMask().shifted(3.0)
    assert mask.level_dbm_hz(np.array([1.8e6]))[0] == pytest.approx(-52.0)


# -------------------------------------------------------------- capacity


def test_capacity_siso_closed_form():
    grid = small_grid(n_freq=4, rx=("P",), tx=("PN",))
    rng = np.random.default_rng(0)
    h = rng.normal(size=(1, 1, 4)) + 1j * rng.normal(size=(1, 1, 4))
    noise = NoiseModel()
    mask = PsdMask()
    df = grid.f_step_hz
    n_mw = 10 ** (noise.psd_dbm_hz(grid.frequencies) / 10) * df
    p_mw = 10 ** (mask.level_dbm_hz(grid.frequencies) / 10) * df
    expected = df * np.log2(1 + p_mw * np.abs(h[0, 0]) ** 2 / n_mw).sum()
    assert capacity_one(h, grid, noise, mask) == pytest.approx(expected, rel=1e-12)


def test_capacity_zero_channel_is_zero():
    grid = small_grid(n_freq=4, rx=("P",), tx=("PN",))
    h = np.zeros((1, 1, 4), dtype=complex)
    assert capacity_one(h, grid, NoiseModel(), PsdMask()) == 0.0


def test_capacity_shape_mismatch():
    grid = small_grid(n_freq=4)
    with pytest.raises(DimensionError):
        capacity_one(np.zeros((2, 2, 4), dtype=complex), grid, NoiseModel(), PsdMask())


def test_capacity_mask_monotonicity():
    grid = small_grid(n_freq=8)
    cs = generate(GeneratorConfig(n_realizations=4, seed=31), grid=grid)
    base = capacity_set(cs)
    raised = capacity_set(cs, mask=PsdMask().shifted(3.0))
    assert np.all(raised >= base - 1e-9)
    assert np.all(raised > base)  # strictly better with a real channel


def test_capacity_whitening_invariance():
    # shifting noise PSD and mask by the same offset leaves capacity alone
    grid = small_grid(n_freq=8)
    cs = generate(GeneratorConfig(n_realizations=3, seed=32), grid=grid)
    base = capacity_set(cs, NoiseModel(), PsdMask())
    offset = 7.0
    shifted_noise = NoiseModel(psd_coeffs=(35.0, -1.5e-7, -140.0 + offset))
    shifted = capacity_set(cs, shifted_noise, PsdMask().shifted(offset))
    np.testing.assert_allclose(shifted, base, rtol=1e-9)


def test_capacity_port_deletion_monotone():
    grid = small_grid(n_freq=8)
    cs = generate(GeneratorConfig(n_realizations=4, seed=33), grid=grid)
    sub = cs.subset_rx(("P", "N"))
    full = capacity_set(cs)
    reduced = capacity_set(sub)
    assert np.all(reduced <= full + 1e-9)


def test_capacity_correlated_noise_matches_manual_whitening():
    grid = small_grid(n_freq=4, rx=("P", "N"))
    cs = generate(GeneratorConfig(n_realizations=2, seed=34), grid=grid)
    r = np.array([[1.0, 0.4], [0.4, 1.0]])
    noise = NoiseModel(rx_correlation=r)
    rates = capacity_set(cs, noise)
    assert np.all(rates > 0)
    # pre-whitening the responses by R^{-1/2} and running with white
    # noise must give the same numbers
    w = noise.whitener(2)
    pre = np.einsum("ij,njkf->nikf", w, cs.responses)
    from plcmimo import ChannelSet

    manual = capacity_set(ChannelSet(grid, pre), NoiseModel())
    np.testing.assert_allclose(rates, manual, rtol=1e-12)


# ----------------------------------------------------------------- ccdf


def test_ccdf_shape_and_endpoints():
    result = CapacityResult(np.array([3.0, 1.0, 2.0, 4.0]))
    rates = result.ccdf[:, 0]
    probs = result.ccdf[:, 1]
    np.testing.assert_allclose(rates, [1.0, 2.0, 3.0, 4.0])
    assert probs[0] == 1.0
    assert probs[-1] == pytest.approx(0.25)
    assert np.all(np.diff(probs) < 0)


def test_ccdf_empty_rejected():
    with pytest.raises(ParameterError):
        CapacityResult(np.array([]))


def test_capacity_ccdf_pipeline():
    grid = small_grid(n_freq=4)
    cs = generate(GeneratorConfig(n_realizations=5, seed=35), grid=grid)
    result = capacity_ccdf(cs)
    assert result.rates_bps.shape == (5,)
    assert result.ccdf.shape == (5, 2)

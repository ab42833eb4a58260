"""Estimation of model parameters from a set of channel realizations.

This is the reverse direction of the generator: given measured (or
synthesized) frequency responses, recover the straight-line amplitude
profiles, the per-class frequency-lag correlation fits, and the
generalized extreme value law of the per-realization phase slope.  All
line fits are robust (iteratively reweighted least squares with a
bisquare weight) so isolated outlier channels do not tilt the profiles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.special import gamma as gamma_fn
from scipy.stats import genextreme

from .errors import (
    DimensionError,
    InsufficientDataError,
    ParameterError,
    UndefinedStatisticError,
)
from .model import ChannelSet, MimoGrid, ModelParameters

BISQUARE_TUNING = 4.685
MAD_TO_SIGMA = 1.4826
SATURATION_LEVEL = 1.0 - 1e-6
POWER_FIT_MAX_LAG_HZ = 40e6


@dataclass
class FitDiagnostics:
    converged: bool
    iterations: int
    residual_norm: float
    notes: str = ""


@dataclass
class ProfileEstimate:
    """Per-combination amplitude statistics over realizations."""

    grid: MimoGrid
    mean_db: np.ndarray  # (n_combos, n_freq)
    std_db: np.ndarray  # (n_combos, n_freq), n-1 convention


def estimate_profiles(cs: ChannelSet) -> ProfileEstimate:
    if len(cs) < 2:
        raise InsufficientDataError("need at least 2 realizations for spreads")
    a_db, _ = cs.split_db()
    per_combo = a_db.transpose(0, 2, 1, 3).reshape(len(cs), cs.grid.n_combos, cs.grid.n_freq)
    return ProfileEstimate(
        grid=cs.grid,
        mean_db=per_combo.mean(axis=0),
        std_db=per_combo.std(axis=0, ddof=1),
    )


def _ols_line(x, y, w=None):
    if w is None:
        w = np.ones_like(x)
    sw = w.sum()
    xm = (w * x).sum() / sw
    ym = (w * y).sum() / sw
    sxx = (w * (x - xm) ** 2).sum()
    if sxx == 0:
        raise DimensionError("need at least two distinct x values")
    slope = (w * (x - xm) * (y - ym)).sum() / sxx
    return slope, ym - slope * xm


def robust_linear_fit(x, y):
    """Bisquare IRLS straight-line fit; returns (slope, intercept, diag).

    The residual scale is re-estimated each iteration as 1.4826 times
    the median absolute deviation about the median residual; iteration
    stops when no weight moves by more than 1e-8, or after 50 rounds.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise DimensionError("need matching 1D arrays with >= 2 points")
    slope, intercept = _ols_line(x, y)
    weights = np.ones_like(x)
    converged = False
    iterations = 0
    for iterations in range(1, 51):
        r = y - (intercept + slope * x)
        med = np.median(r)
        scale = MAD_TO_SIGMA * np.median(np.abs(r - med))
        if scale == 0:
            converged = True
            break
        u = r / (BISQUARE_TUNING * scale)
        new_weights = np.where(np.abs(u) < 1, (1 - u**2) ** 2, 0.0)
        if new_weights.sum() == 0:
            return slope, intercept, FitDiagnostics(
                False, iterations, float(np.linalg.norm(r)), "all points downweighted"
            )
        slope, intercept = _ols_line(x, y, new_weights)
        if np.max(np.abs(new_weights - weights)) < 1e-8:
            converged = True
            weights = new_weights
            break
        weights = new_weights
    r = y - (intercept + slope * x)
    return slope, intercept, FitDiagnostics(converged, iterations, float(np.linalg.norm(r)))


def empirical_combo_correlation(a_matrix: np.ndarray, grid: MimoGrid, combo: int) -> np.ndarray:
    """Correlation matrix of one combination's log-amplitude block.

    ``a_matrix`` is the (n_realizations, grid.size) reshaped matrix.
    A zero-variance coordinate makes the correlation undefined and is
    reported by name.
    """
    n_f = grid.n_freq
    block = a_matrix[:, combo * n_f : (combo + 1) * n_f]
    stds = block.std(axis=0)
    flat = np.flatnonzero(stds == 0)
    if flat.size:
        tx, rx = grid.combos[combo].tx, grid.combos[combo].rx
        raise UndefinedStatisticError(
            f"zero variance at combo {tx}->{rx}, frequency index {flat[0]}"
        )
    return np.corrcoef(block, rowvar=False)


def antidiag_average(block: np.ndarray) -> np.ndarray:
    """Average each anti-diagonal stripe pair of a square block.

    Entry d of the result pools every element whose row and column
    indices differ by d, on both sides of the main diagonal.  Applied to
    a Toeplitz matrix built from a lag profile this returns that profile
    exactly.
    """
    b = np.asarray(block)
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise DimensionError("need a square block")
    n = b.shape[0]
    out = np.empty(n)
    out[0] = b.diagonal().mean()
    for d in range(1, n):
        out[d] = (b.diagonal(d).sum() + b.diagonal(-d).sum()) / (2 * (n - d))
    return out


def _power_model(theta, lags):
    a, b, c = theta
    # optimizers probe wild exponents; let the resulting infs reach the
    # solver as bad residuals instead of warning
    with np.errstate(over="ignore"):
        return a * np.power(lags, b) + c


def fit_power(lags_hz: np.ndarray, values: np.ndarray):
    """Fit ``a * lag**b + c`` over lags in (0, 40 MHz].

    Saturated samples (correlation at or above 1 - 1e-6, where the model
    clamps) are excluded; they carry no information about the decay.
    Candidate starts are ranked by residual norm with ties broken by the
    smallest |b|.
    """
    lags_hz = np.asarray(lags_hz, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = (lags_hz > 0) & (lags_hz <= POWER_FIT_MAX_LAG_HZ) & (values < SATURATION_LEVEL)
    lags = lags_hz[keep]
    vals = values[keep]
    if lags.size < 4:
        raise InsufficientDataError("need at least 4 usable lag samples")

    starts = []
    floor = vals.min()
    lifted = vals - floor
    pos = lifted > 0
    if pos.sum() >= 2:
        b0, log_a0 = np.polyfit(np.log(lags[pos]), np.log(lifted[pos]), 1)
        starts.append((float(np.exp(log_a0)), float(b0), float(floor)))
    starts.append((1.0, -0.5, float(floor)))

    best = None
    for x0 in starts:
        try:
            sol = least_squares(
                lambda th: _power_model(th, lags) - vals,
                x0,
                method="lm",
                x_scale="jac",
                max_nfev=2000,
            )
        except (ValueError, FloatingPointError):
            continue
        if not np.all(np.isfinite(sol.x)):
            continue
        key = (round(float(sol.cost), 12), abs(sol.x[1]))
        if best is None or key < best[0]:
            best = (key, sol)
    if best is None:
        raise ParameterError("power-decay fit failed from every start")
    sol = best[1]
    diag = FitDiagnostics(bool(sol.success), int(sol.nfev), float(np.sqrt(2 * sol.cost)))
    a, b, c = (float(v) for v in sol.x)
    return a, b, c, diag


def _exp_model(theta, lags):
    a, b, c = theta
    return a * np.exp(b * lags) + c


def fit_exponential_tail(
    lags_hz: np.ndarray,
    values: np.ndarray,
    power_coeffs: tuple[float, float, float],
    knee_hz: float = POWER_FIT_MAX_LAG_HZ,
):
    """Fit ``a * exp(b*lag) + c`` to the residual beyond the knee.

    The residual (measured minus power fit) is shifted so it is zero at
    the last sample at or below the knee; a healthy fit stays within
    0.01 of zero when evaluated back at the knee.
    """
    lags_hz = np.asarray(lags_hz, dtype=float)
    values = np.asarray(values, dtype=float)
    pa, pb, pc = power_coeffs
    tail = lags_hz > knee_hz
    if tail.sum() < 4:
        raise InsufficientDataError("need at least 4 samples beyond the knee")
    head = (lags_hz > 0) & (lags_hz <= knee_hz)
    if not head.any():
        raise InsufficientDataError("no reference sample at or below the knee")
    ref_lag = lags_hz[head][-1]
    ref_val = values[head][-1]
    ref_residual = ref_val - _power_model((pa, pb, pc), ref_lag)
    lags = lags_hz[tail]
    resid = values[tail] - _power_model((pa, pb, pc), lags) - ref_residual

    with np.errstate(divide="ignore", invalid="ignore"):
        diffs = np.diff(resid)
        ratios = diffs[1:] / diffs[:-1]
    good = (ratios > 0) & np.isfinite(ratios)
    if good.any():
        step = float(np.median(np.diff(lags)))
        b0 = float(np.median(np.log(ratios[good]))) / step
    else:
        b0 = 1e-9
    basis = np.column_stack([np.exp(b0 * lags), np.ones_like(lags)])
    (a0, c0), *_ = np.linalg.lstsq(basis, resid, rcond=None)
    sol = least_squares(
        lambda th: _exp_model(th, lags) - resid,
        (float(a0), b0, float(c0)),
        method="lm",
        x_scale="jac",
        max_nfev=2000,
    )
    a, b, c = (float(v) for v in sol.x)
    at_knee = _exp_model((a, b, c), knee_hz)
    notes = ""
    if abs(at_knee) > 0.01:
        notes = f"correction at knee is {at_knee:.4f}, expected |.| <= 0.01"
    diag = FitDiagnostics(bool(sol.success), int(sol.nfev), float(np.sqrt(2 * sol.cost)), notes)
    return a, b, c, diag


def extract_phase_slopes(cs: ChannelSet, robust: bool = False) -> np.ndarray:
    """Least-squares phase slope per (realization, combination), rad/Hz.

    Wrapped phases are unwrapped along frequency first; the sign is
    flipped so a positive slope means increasing delay.
    """
    _, phases = cs.split_db()
    n = len(cs)
    grid = cs.grid
    flat = phases.transpose(0, 2, 1, 3).reshape(n, grid.n_combos, grid.n_freq)
    unwrapped = np.unwrap(flat, axis=-1)
    f = grid.frequencies
    if robust:
        out = np.empty((n, grid.n_combos))
        for i in range(n):
            for k in range(grid.n_combos):
                slope, _, _ = robust_linear_fit(f, unwrapped[i, k])
                out[i, k] = -slope
        return out
    fc = f - f.mean()
    denom = (fc**2).sum()
    centered = unwrapped - unwrapped.mean(axis=-1, keepdims=True)
    return -(centered @ fc) / denom


def empirical_cross_fraction(cs: ChannelSet, threshold: float = 0.2) -> float:
    """Fraction of |correlation| entries between log-amplitude and
    wrapped-phase coordinates that exceed the threshold."""
    a = cs.reshaped_amplitudes_db()
    p = cs.reshaped_phases()
    n = a.shape[0]
    if n < 2:
        raise InsufficientDataError("need at least 2 realizations")

    def standardize(x):
        mu = x.mean(axis=0)
        sd = x.std(axis=0, ddof=1)
        if np.any(sd == 0):
            raise UndefinedStatisticError("zero-variance coordinate")
        return (x - mu) / sd

    cross = standardize(a).T @ standardize(p) / (n - 1)
    return float((np.abs(cross) > threshold).mean())


def _pwm_gev_start(x: np.ndarray):
    """Probability-weighted-moment starting point (k, loc, scale) in the
    scipy sign convention (k = -shape)."""
    xs = np.sort(x)
    n = xs.size
    i = np.arange(n)
    b0 = xs.mean()
    b1 = (xs * i / (n - 1)).sum() / n
    b2 = (xs * i * (i - 1) / ((n - 1) * (n - 2))).sum() / n
    l1 = b0
    l2 = 2 * b1 - b0
    l3 = 6 * b2 - 6 * b1 + b0
    t3 = l3 / l2
    z = 2.0 / (3.0 + t3) - np.log(2) / np.log(3)
    k = 7.8590 * z + 2.9554 * z * z
    if abs(k) < 1e-6:
        scale = l2 / np.log(2)
        loc = l1 - scale * np.euler_gamma
        return 0.0, loc, scale
    g = gamma_fn(1 + k)
    scale = l2 * k / ((1 - 2.0 ** (-k)) * g)
    loc = l1 - scale * (1 - g) / k
    return float(k), float(loc), float(scale)


def fit_gev(samples: np.ndarray):
    """Maximum-likelihood generalized extreme value fit.

    Returns (shape, location, scale, diag) where a negative shape means
    a bounded upper tail.  Needs at least 50 samples; an all-equal
    sample is degenerate and flagged instead of fitted.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 50:
        raise InsufficientDataError(f"need >= 50 samples for a GEV fit, got {x.size}")
    if np.ptp(x) == 0:
        return 0.0, float(x[0]), float("nan"), FitDiagnostics(
            False, 0, 0.0, "all samples identical; scale undefined"
        )
    k0, loc0, scale0 = _pwm_gev_start(x)
    if not np.isfinite(scale0) or scale0 <= 0:
        k0, loc0, scale0 = 0.0, float(x.mean()), float(x.std())
    c, loc, scale = genextreme.fit(x, k0, loc=loc0, scale=scale0)
    nll = genextreme.nnlf((c, loc, scale), x)
    ok = bool(np.isfinite(nll) and scale > 0)
    diag = FitDiagnostics(ok, 0, float(nll), "" if ok else "likelihood not finite")
    return float(-c), float(loc), float(scale), diag


@dataclass
class CharacterizationDiagnostics:
    """Per-fit convergence records plus free-form notes."""

    mu: FitDiagnostics
    sigma_nocm: FitDiagnostics
    sigma_cm: FitDiagnostics | None
    power_nocm: FitDiagnostics
    power_cm: FitDiagnostics | None
    exp_cm: FitDiagnostics | None
    gev: FitDiagnostics
    notes: list[str] = field(default_factory=list)

    def as_text(self) -> str:
        lines = []
        for name in ("mu", "sigma_nocm", "sigma_cm", "power_nocm", "power_cm", "exp_cm", "gev"):
            d = getattr(self, name)
            if d is None:
                lines.append(f"{name}: skipped")
                continue
            state = "ok" if d.converged else "NOT CONVERGED"
            extra = f" ({d.notes})" if d.notes else ""
            lines.append(f"{name}: {state}, residual {d.residual_norm:.3e}{extra}")
        lines.extend(self.notes)
        return "\n".join(lines)


def characterize(cs: ChannelSet, robust_slopes: bool = False):
    """Estimate a full parameter set from realizations.

    Returns (ModelParameters, CharacterizationDiagnostics).  Without any
    common-mode receive port the CM profile and correlation slots are
    filled from the non-CM fits and noted.
    """
    if len(cs) < 2:
        raise InsufficientDataError("need at least 2 realizations to characterize")
    grid = cs.grid
    notes: list[str] = []
    profiles = estimate_profiles(cs)
    f_ghz = grid.frequencies / 1e9
    cm_mask = np.array([c.is_cm for c in grid.combos])

    mu_slope, mu_intercept, mu_diag = robust_linear_fit(f_ghz, profiles.mean_db.mean(axis=0))

    s_slope_nocm, s_int_nocm, s_diag_nocm = robust_linear_fit(
        f_ghz, profiles.std_db[~cm_mask].mean(axis=0)
    )
    if cm_mask.any():
        s_slope_cm, s_int_cm, s_diag_cm = robust_linear_fit(
            f_ghz, profiles.std_db[cm_mask].mean(axis=0)
        )
    else:
        s_slope_cm, s_int_cm, s_diag_cm = s_slope_nocm, s_int_nocm, None
        notes.append("no common-mode ports: CM spread profile copied from non-CM")

    a_matrix = cs.reshaped_amplitudes_db()
    lag_profiles = np.stack(
        [
            antidiag_average(empirical_combo_correlation(a_matrix, grid, k))
            for k in range(grid.n_combos)
        ]
    )
    lags = grid.f_step_hz * np.arange(grid.n_freq)
    pa_n, pb_n, pc_n, p_diag_nocm = fit_power(lags, lag_profiles[~cm_mask].mean(axis=0))
    if cm_mask.any():
        cm_profile = lag_profiles[cm_mask].mean(axis=0)
        pa_c, pb_c, pc_c, p_diag_cm = fit_power(lags, cm_profile)
        try:
            ea, eb, ec, e_diag = fit_exponential_tail(lags, cm_profile, (pa_c, pb_c, pc_c))
        except InsufficientDataError as err:
            ea, eb, ec, e_diag = 0.0, 0.0, 0.0, None
            notes.append(f"exponential tail skipped: {err}")
    else:
        pa_c, pb_c, pc_c, p_diag_cm = pa_n, pb_n, pc_n, None
        ea, eb, ec, e_diag = 0.0, 0.0, 0.0, None
        notes.append("no common-mode ports: CM correlation fits copied from non-CM")

    slopes = extract_phase_slopes(cs, robust=robust_slopes)
    shape, loc, scale, gev_diag = fit_gev(slopes.ravel())
    if not np.isfinite(scale):
        raise ParameterError("phase-slope sample is degenerate; cannot build parameters")

    params = ModelParameters(
        mu_slope_db_per_ghz=mu_slope,
        mu_intercept_db=mu_intercept,
        sigma_slope_db_per_ghz_nocm=s_slope_nocm,
        sigma_intercept_db_nocm=s_int_nocm,
        sigma_slope_db_per_ghz_cm=s_slope_cm,
        sigma_intercept_db_cm=s_int_cm,
        lag_a_nocm=pa_n,
        lag_b_nocm=pb_n,
        lag_c_nocm=pc_n,
        lag_a_cm=pa_c,
        lag_b_cm=pb_c,
        lag_c_cm=pc_c,
        lag_exp_a_cm=ea,
        lag_exp_b_cm=eb,
        lag_exp_c_cm=ec,
        gev_shape=shape,
        gev_location_rad_per_hz=loc,
        gev_scale_rad_per_hz=scale,
    )
    diagnostics = CharacterizationDiagnostics(
        mu=mu_diag,
        sigma_nocm=s_diag_nocm,
        sigma_cm=s_diag_cm,
        power_nocm=p_diag_nocm,
        power_cm=p_diag_cm,
        exp_cm=e_diag,
        gev=gev_diag,
        notes=notes,
    )
    return params, diagnostics

"""Per-realization channel metrics and their set-level summary.

Four metrics characterize a channel set: average channel gain (ACG),
RMS delay spread computed from the power-weighted delay profile of the
inverse-DFT impulse response, coherence bandwidth at a correlation level
(0.9 by default), and the per-frequency MIMO condition number averaged
over the band.  The summary pools means over realizations and modes,
while spreads are per-mode standard deviations averaged over modes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateChannelError, DimensionError, InsufficientDataError
from .model import ChannelSet, MimoGrid

def acg_db(cfr: np.ndarray) -> np.ndarray | float:
    """Average channel gain: 10*log10 of mean |H|^2 over the last axis."""
    cfr = np.asarray(cfr)
    if np.any(cfr == 0):
        raise DegenerateChannelError("channel entry is exactly zero")
    power = (cfr.real**2 + cfr.imag**2) if np.iscomplexobj(cfr) else cfr.astype(float) ** 2
    out = 10.0 * np.log10(power.mean(axis=-1))
    return out if out.ndim else float(out)


def delay_moments(cfr: np.ndarray, f_step_hz: float):
    """First moment and RMS spread of the power-weighted delay profile.

    The impulse response lives on a circular delay grid of n_freq taps
    spaced 1/(n_freq*f_step); moments are plain weighted sums, no
    windowing.
    """
    cfr = np.asarray(cfr)
    n = cfr.shape[-1]
    if n < 2:
        raise DimensionError("need at least 2 frequency samples")
    h = np.fft.ifft(cfr, axis=-1)
    p = h.real**2 + h.imag**2
    tau = np.arange(n) / (n * f_step_hz)
    total = p.sum(axis=-1)
    m1 = (p * tau).sum(axis=-1) / total
    m2 = (p * tau**2).sum(axis=-1) / total
    spread = np.sqrt(np.clip(m2 - m1**2, 0.0, None))
    return m1, spread


def rms_ds(cfr: np.ndarray, f_step_hz: float) -> np.ndarray | float:
    """RMS delay spread in seconds (see :func:`delay_moments`)."""
    _, spread = delay_moments(cfr, f_step_hz)
    return spread if np.ndim(spread) else float(spread)


def coherence_bw(cfr: np.ndarray, f_step_hz: float, level: float = 0.9) -> float:
    """Smallest lag (Hz) where the CFR autocorrelation magnitude drops
    below ``level`` times its zero-lag value.

    The autocorrelation at lag d sums H(f_n)*conj(H(f_n + d)) over the
    valid overlap and divides by the overlap count.  If the threshold is
    never crossed the full band extent (n_freq-1)*f_step is returned.
    The result is by construction an integer multiple of f_step.
    """
    h = np.asarray(cfr)
    if h.ndim != 1:
        raise DimensionError("one CFR at a time")
    n = h.shape[0]
    if n < 2:
        raise DimensionError("need at least 2 frequency samples")
    conj = h.conj()
    r0 = float((h * conj).real.mean())
    threshold = level * abs(r0)
    for lag in range(1, n):
        r = np.vdot(h[lag:], h[: n - lag]) / (n - lag)
        if abs(r) < threshold:
            return lag * f_step_hz
    return (n - 1) * f_step_hz


def condition_number_db(matrix: np.ndarray) -> float:
    """Largest-to-smallest singular value ratio in dB for one
    per-frequency channel matrix; inf when the matrix is rank-deficient."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or min(matrix.shape) < 2:
        raise DimensionError("condition number needs at least a 2x2 matrix")
    s = np.linalg.svd(matrix, compute_uv=False)
    if s[-1] == 0.0:
        return np.inf
    return float(20.0 * np.log10(s[0] / s[-1]))


def _kappa_per_realization(responses: np.ndarray):
    """(kappa_db per realization, count of infinite per-frequency values).

    ``responses`` is (n, n_rx, n_tx, n_freq); per-frequency condition
    numbers that come out infinite (rank-deficient matrices) are dropped
    from the frequency average and counted.
    """
    mats = responses.transpose(0, 3, 1, 2)
    s = np.linalg.svd(mats, compute_uv=False)
    with np.errstate(divide="ignore"):
        kappa_f = 20.0 * np.log10(s[..., 0] / s[..., -1])
    finite = np.isfinite(kappa_f)
    n_inf = int(kappa_f.size - finite.sum())
    counts = finite.sum(axis=1)
    sums = np.where(finite, kappa_f, 0.0).sum(axis=1)
    out = np.full(responses.shape[0], np.nan)
    ok = counts > 0
    out[ok] = sums[ok] / counts[ok]
    return out, n_inf


@dataclass
class MetricsTable:
    """Per-realization metric values, one column per mode combination.

    ``kappa_db`` is per realization (one value across the spatial
    matrix) and None when the scheme has fewer than 2x2 ports;
    ``capacity_bps`` is filled in by the capacity module when requested.
    """

    grid: MimoGrid
    acg_db: np.ndarray
    rms_ds_s: np.ndarray
    coherence_bw_hz: np.ndarray
    kappa_db: np.ndarray | None = None
    n_infinite_kappa: int = 0
    capacity_bps: np.ndarray | None = None

    @property
    def n_realizations(self) -> int:
        return self.acg_db.shape[0]


def compute_metrics(cs: ChannelSet) -> MetricsTable:
    """Evaluate all applicable metrics for every realization."""
    if len(cs) == 0:
        raise InsufficientDataError("empty channel set")
    grid = cs.grid
    n = len(cs)
    k = grid.n_combos
    flat = cs.responses.transpose(0, 2, 1, 3).reshape(n, k, grid.n_freq)
    acg = acg_db(flat)
    rms = rms_ds(flat, grid.f_step_hz)
    cb = np.empty((n, k))
    for r in range(n):
        for c in range(k):
            cb[r, c] = coherence_bw(flat[r, c], grid.f_step_hz)
    kappa = None
    n_inf = 0
    if min(grid.n_rx, grid.n_tx) >= 2:
        kappa, n_inf = _kappa_per_realization(cs.responses)
    return MetricsTable(grid, acg, rms, cb, kappa, n_inf)


@dataclass
class MetricsSummary:
    """Set-level means and spreads.

    Means pool all (realization, mode) values; spreads are standard
    deviations over realizations (n-1 convention) computed per mode and
    then averaged over modes.  With a single realization the spreads are
    reported as 0 and ``degenerate_std`` is set.
    """

    n_realizations: int
    n_modes: int
    acg_mean_db: float
    acg_std_db: float
    rms_ds_mean_s: float
    rms_ds_std_s: float
    cb_mean_hz: float
    cb_std_hz: float
    kappa_mean_db: float | None = None
    kappa_std_db: float | None = None
    n_infinite_kappa: int = 0
    capacity_mean_bps: float | None = None
    capacity_std_bps: float | None = None
    degenerate_std: bool = False


def _pool(values: np.ndarray):
    mean = float(values.mean())
    if values.shape[0] < 2:
        return mean, 0.0
    std = float(values.std(axis=0, ddof=1).mean())
    return mean, std


def summarize(table: MetricsTable) -> MetricsSummary:
    """Reduce a metric table to set-level means and spreads."""
    n = table.n_realizations
    acg_m, acg_s = _pool(table.acg_db)
    rms_m, rms_s = _pool(table.rms_ds_s)
    cb_m, cb_s = _pool(table.coherence_bw_hz)
    kappa_m = kappa_s = None
    if table.kappa_db is not None:
        valid = table.kappa_db[np.isfinite(table.kappa_db)]
        if valid.size:
            kappa_m, kappa_s = _pool(valid[:, None])
    cap_m = cap_s = None
    if table.capacity_bps is not None:
        cap_m, cap_s = _pool(np.asarray(table.capacity_bps, dtype=float)[:, None])
    return MetricsSummary(
        n_realizations=n,
        n_modes=table.acg_db.shape[1],
        acg_mean_db=acg_m,
        acg_std_db=acg_s,
        rms_ds_mean_s=rms_m,
        rms_ds_std_s=rms_s,
        cb_mean_hz=cb_m,
        cb_std_hz=cb_s,
        kappa_mean_db=kappa_m,
        kappa_std_db=kappa_s,
        n_infinite_kappa=table.n_infinite_kappa,
        capacity_mean_bps=cap_m,
        capacity_std_bps=cap_s,
        degenerate_std=(n < 2),
    )

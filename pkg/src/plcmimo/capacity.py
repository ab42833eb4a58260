"""Water-filling MIMO capacity under a transmit PSD mask and colored noise.

Per frequency bin the channel is whitened by the inverse square root of
the noise covariance (noise PSD times bin width times the receive
correlation), decomposed by SVD, and the bin's power budget (mask PSD
times bin width) is poured over the spatial eigenmodes.  Rates from all
bins add up; there is no water-filling across frequency, the mask fixes
each bin's budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError
from .model import ChannelSet, MimoGrid


@dataclass(frozen=True)
class NoiseModel:
    """Receiver noise: a PSD over frequency plus a spatial correlation.

    The PSD (dBm/Hz) is either parametric, ``a*exp(b*f) + c`` with f in
    Hz, or tabulated with linear interpolation between sample points.
    ``rx_correlation`` must be Hermitian with unit diagonal and strictly
    positive definite; None means spatially white noise.
    """

    psd_coeffs: tuple[float, float, float] | None = (35.0, -1.5e-7, -140.0)
    psd_table: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    rx_correlation: np.ndarray | None = None

    def __post_init__(self):
        if (self.psd_coeffs is None) == (self.psd_table is None):
            raise ParameterError("need exactly one of psd_coeffs / psd_table")
        if self.psd_table is not None:
            freqs, levels = self.psd_table
            if len(freqs) != len(levels) or len(freqs) < 2:
                raise ParameterError("psd table needs >= 2 (freq, level) pairs")
            if np.any(np.diff(freqs) <= 0):
                raise ParameterError("psd table frequencies must increase")
        if self.rx_correlation is not None:
            r = np.asarray(self.rx_correlation)
            if r.ndim != 2 or r.shape[0] != r.shape[1]:
                raise ParameterError("rx_correlation must be square")
            if not np.allclose(r, r.conj().T, atol=1e-12):
                raise ParameterError("rx_correlation must be Hermitian")
            if not np.allclose(np.diag(r).real, 1.0, atol=1e-12):
                raise ParameterError("rx_correlation must have unit diagonal")

    def psd_dbm_hz(self, freqs_hz: np.ndarray) -> np.ndarray:
        f = np.asarray(freqs_hz, dtype=float)
        if self.psd_coeffs is not None:
            a, b, c = self.psd_coeffs
            return a * np.exp(b * f) + c
        table_f, table_l = self.psd_table
        return np.interp(f, table_f, table_l)

    def whitener(self, n_rx: int) -> np.ndarray | None:
        """Inverse square root of the receive correlation, or None for
        white noise.  A non-positive eigenvalue means the covariance is
        singular and the capacity is undefined."""
        if self.rx_correlation is None:
            return None
        r = np.asarray(self.rx_correlation)
        if r.shape[0] != n_rx:
            raise DimensionError(
                f"rx_correlation is {r.shape[0]}x{r.shape[0]}, channel has {n_rx} receive ports"
            )
        w, v = np.linalg.eigh(r)
        if w[0] <= 1e-12:
            raise ParameterError(
                f"noise covariance is singular (min eigenvalue {w[0]:.3e})"
            )
        return (v / np.sqrt(w)) @ v.conj().T


@dataclass(frozen=True)
class PsdMask:
    """Piecewise-constant transmit PSD limit in dBm/Hz.

    ``breakpoints`` are (start_freq_hz, level) pairs sorted by frequency;
    each level applies from its start frequency up to the next
    breakpoint.  The first breakpoint must not exceed the lowest carrier
    in use.
    """

    breakpoints: tuple[tuple[float, float], ...] = ((0.0, -55.0), (30e6, -85.0))

    def __post_init__(self):
        if not self.breakpoints:
            raise ParameterError("mask needs at least one breakpoint")
        starts = [b[0] for b in self.breakpoints]
        if any(e <= s for s, e in zip(starts, starts[1:])):
            raise ParameterError("mask breakpoints must have increasing frequencies")

    def level_dbm_hz(self, freqs_hz: np.ndarray) -> np.ndarray:
        f = np.asarray(freqs_hz, dtype=float)
        starts = np.array([b[0] for b in self.breakpoints])
        levels = np.array([b[1] for b in self.breakpoints])
        if np.any(f < starts[0]):
            raise ParameterError(
                f"mask starts at {starts[0]:.6g} Hz, band starts below that"
            )
        idx = np.searchsorted(starts, f, side="right") - 1
        return levels[idx]

    def shifted(self, offset_db: float) -> "PsdMask":
        return PsdMask(tuple((f, lvl + offset_db) for f, lvl in self.breakpoints))


def water_fill(gains: np.ndarray, budget: float) -> np.ndarray:
    """Optimal power split over parallel channels with the given gains.

    Solves max sum log2(1 + p_k g_k) s.t. sum p_k = budget, p_k >= 0 by
    the active-set water level: modes are used in decreasing gain order
    while the level 1/g stays below the water line.
    """
    g = np.asarray(gains, dtype=float)
    if budget < 0:
        raise ParameterError("power budget must be non-negative")
    p = np.zeros_like(g)
    order = np.argsort(g)[::-1]
    gs = g[order]
    positive = gs > 0
    gs = gs[positive]
    if gs.size == 0 or budget == 0:
        return p
    inv = 1.0 / gs
    cum = np.cumsum(inv)
    m_range = np.arange(1, gs.size + 1)
    levels = (budget + cum) / m_range
    feasible = levels > inv
    m = int(np.nonzero(feasible)[0][-1]) + 1
    level = (budget + cum[m - 1]) / m
    alloc = np.zeros_like(gs)
    alloc[:m] = level - inv[:m]
    p[order[: alloc.size]] = alloc
    return p


def _bin_rates(singulars: np.ndarray, budgets: np.ndarray) -> float:
    """Sum of bin rates in bit per channel use given per-bin singular
    values (descending) and per-bin power budgets."""
    total = 0.0
    for s, budget in zip(singulars, budgets):
        g = s * s
        p = water_fill(g, budget)
        total += float(np.log2(1.0 + p * g).sum())
    return total


def capacity_one(
    responses: np.ndarray,
    grid: MimoGrid,
    noise: NoiseModel,
    mask: PsdMask,
) -> float:
    """Capacity in bit/s of one realization (n_rx, n_tx, n_freq)."""
    resp = np.asarray(responses)
    if resp.shape != (grid.n_rx, grid.n_tx, grid.n_freq):
        raise DimensionError(
            f"responses shape {resp.shape} does not match grid "
            f"({grid.n_rx}, {grid.n_tx}, {grid.n_freq})"
        )
    df = grid.f_step_hz
    freqs = grid.frequencies
    noise_mw = 10.0 ** (noise.psd_dbm_hz(freqs) / 10.0) * df
    budgets = 10.0 ** (mask.level_dbm_hz(freqs) / 10.0) * df
    mats = resp.transpose(2, 0, 1)
    w_inv_sqrt = noise.whitener(grid.n_rx)
    if w_inv_sqrt is not None:
        mats = np.einsum("ij,fjk->fik", w_inv_sqrt, mats)
    whitened = mats / np.sqrt(noise_mw)[:, None, None]
    s = np.linalg.svd(whitened, compute_uv=False)
    return df * _bin_rates(s, budgets)


def capacity_set(
    cs: ChannelSet,
    noise: NoiseModel | None = None,
    mask: PsdMask | None = None,
) -> np.ndarray:
    """Per-realization capacities (bit/s) for a channel set."""
    noise = noise or NoiseModel()
    mask = mask or PsdMask()
    return np.array(
        [capacity_one(cs.responses[i], cs.grid, noise, mask) for i in range(len(cs))]
    )


@dataclass
class CapacityResult:
    """Per-realization rates plus their complementary CDF.

    ``ccdf`` holds (rate, probability) rows with rates ascending; the
    probability at the smallest rate is 1 and at the largest 1/n, and
    the column is non-increasing.
    """

    rates_bps: np.ndarray
    ccdf: np.ndarray = field(init=False)

    def __post_init__(self):
        rates = np.sort(np.asarray(self.rates_bps, dtype=float))
        n = rates.size
        if n == 0:
            raise ParameterError("no rates to summarize")
        probs = (n - np.arange(n)) / n
        self.ccdf = np.column_stack([rates, probs])


def capacity_ccdf(
    cs: ChannelSet,
    noise: NoiseModel | None = None,
    mask: PsdMask | None = None,
) -> CapacityResult:
    return CapacityResult(capacity_set(cs, noise, mask))

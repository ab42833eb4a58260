"""Core channel-model types: mode grids, parameters, and log-domain helpers.

A MIMO power-line channel is sampled on a rectangular grid of transmit
modes x receive modes x frequencies.  The channel frequency response (CFR)
is handled in the log domain as

    H_dB(f) = A_dB(f) + i * K * phi(f),      K = 20 * log10(e)

where ``A_dB = 20*log10|H|`` and ``phi`` is the wrapped phase in radians.
Amplitude statistics are linear-in-frequency profiles (dB vs GHz) with one
standard-deviation line for receive common mode and one for everything
else.  All 3D <-> 1D conversions use a fixed transmit-major ordering so
that covariance blocks line up with mode combinations.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from .errors import DegenerateChannelError, DimensionError, ParameterError

# dB per neper: converts radians of phase to the imaginary part of the
# log-domain response (20*log10(e)).
DB_LOG_SCALE = 20.0 / np.log(10.0)

TX_MODES = ("PN", "PE")
RX_MODES = ("P", "N", "CM")

# Common-mode label on the receive side; it selects the second spread line.
CM_LABEL = "CM"


@dataclass(frozen=True)
class ModeCombination:
    """One (transmit mode, receive mode) pair."""

    tx: str
    rx: str

    @property
    def is_cm(self) -> bool:
        """True when the receive side is the common mode."""
        return self.rx == CM_LABEL

    def __str__(self) -> str:
        return f"{self.tx}->{self.rx}"


@dataclass(frozen=True)
class MimoGrid:
    """Sampling grid: ordered mode lists plus a uniform frequency axis.

    Parameters
    ----------
    tx_modes, rx_modes : tuple of str
        Ordered mode labels.  Transmit labels come from ``TX_MODES``,
        receive labels from ``RX_MODES``.
    n_freq : int
        Number of frequency samples (at least 2).
    f_start_hz : float
        First frequency sample in Hz (positive).
    f_step_hz : float
        Uniform spacing in Hz (positive).
    """

    tx_modes: tuple[str, ...]
    rx_modes: tuple[str, ...]
    n_freq: int
    f_start_hz: float
    f_step_hz: float

    def __post_init__(self):
        if not self.tx_modes or not set(self.tx_modes) <= set(TX_MODES):
            raise ParameterError(f"transmit modes must be a subset of {TX_MODES}")
        if not self.rx_modes or not set(self.rx_modes) <= set(RX_MODES):
            raise ParameterError(f"receive modes must be a subset of {RX_MODES}")
        if len(set(self.tx_modes)) != len(self.tx_modes):
            raise ParameterError("duplicate transmit mode")
        if len(set(self.rx_modes)) != len(self.rx_modes):
            raise ParameterError("duplicate receive mode")
        if self.n_freq < 2:
            raise ParameterError("grid needs at least 2 frequency samples")
        if self.f_start_hz <= 0 or self.f_step_hz <= 0:
            raise ParameterError("frequency start and step must be positive")

    @property
    def n_tx(self) -> int:
        return len(self.tx_modes)

    @property
    def n_rx(self) -> int:
        return len(self.rx_modes)

    @property
    def n_combos(self) -> int:
        return self.n_tx * self.n_rx

    @property
    def size(self) -> int:
        """Length of the reshaped vector: n_tx * n_rx * n_freq."""
        return self.n_combos * self.n_freq

    @property
    def frequencies(self) -> np.ndarray:
        return self.f_start_hz + self.f_step_hz * np.arange(self.n_freq)

    @property
    def combos(self) -> tuple[ModeCombination, ...]:
        """Mode combinations in block order (transmit-major)."""
        return tuple(
            ModeCombination(tx, rx) for tx in self.tx_modes for rx in self.rx_modes
        )

    def combo_index(self, tx: str, rx: str) -> int:
        """0-based block index of combination (tx, rx)."""
        try:
            i = self.tx_modes.index(tx)
            j = self.rx_modes.index(rx)
        except ValueError as exc:
            raise ParameterError(f"mode combination {tx}->{rx} not on grid") from exc
        return i * self.n_rx + j


def default_grid() -> MimoGrid:
    """Full 2x3 grid: 1588 samples from 1.8 MHz in 62.5 kHz steps."""
    return MimoGrid(TX_MODES, RX_MODES, 1588, 1.8e6, 62.5e3)


def scheme_grid(scheme: str) -> MimoGrid:
    """Grid for a named port scheme: 'siso', '2x2', or '2x3'."""
    base = default_grid()
    key = scheme.lower()
    if key == "siso":
        return MimoGrid(("PN",), ("P",), base.n_freq, base.f_start_hz, base.f_step_hz)
    if key == "2x2":
        return MimoGrid(TX_MODES, ("P", "N"), base.n_freq, base.f_start_hz, base.f_step_hz)
    if key == "2x3":
        return base
    raise ParameterError(f"unknown scheme {scheme!r} (want siso, 2x2, or 2x3)")


def decimate_grid(grid: MimoGrid, factor: int) -> MimoGrid:
    """Keep every ``factor``-th frequency sample (starting at f_start).

    The step scales by ``factor``; the sample count floors.  The result
    must still hold at least 2 samples.
    """
    if factor < 1 or int(factor) != factor:
        raise ParameterError("decimation factor must be a positive integer")
    n = grid.n_freq // int(factor)
    if n < 2:
        raise ParameterError("decimation leaves fewer than 2 frequency samples")
    return MimoGrid(
        grid.tx_modes, grid.rx_modes, n, grid.f_start_hz, grid.f_step_hz * int(factor)
    )


@dataclass(frozen=True)
class ModelParameters:
    """Scalar parameters of the statistical channel model.

    Amplitude means and spreads are straight lines in frequency
    (dB versus GHz).  Frequency-lag correlation of the log-amplitude is a
    three-coefficient power decay ``a * lag**b + c`` per mode class, with
    an optional exponential correction ``a * exp(b*lag) + c`` for the
    common-mode class beyond 40 MHz lag.  The per-realization phase slope
    (radians per Hz) follows a generalized extreme value law.
    """

    mu_slope_db_per_ghz: float = -184.68
    mu_intercept_db: float = -42.44
    sigma_slope_db_per_ghz_nocm: float = 20.86
    sigma_intercept_db_nocm: float = 15.41
    sigma_slope_db_per_ghz_cm: float = 27.80
    sigma_intercept_db_cm: float = 9.64
    lag_a_nocm: float = 0.133e6
    lag_b_nocm: float = -0.906
    lag_c_nocm: float = 0.731
    lag_a_cm: float = 1.679e6
    lag_b_cm: float = -1.040
    lag_c_cm: float = 0.501
    lag_exp_a_cm: float = -0.022
    lag_exp_b_cm: float = 0.031e-6
    lag_exp_c_cm: float = 0.072
    gev_shape: float = -0.08
    gev_location_rad_per_hz: float = 1.133e-6
    gev_scale_rad_per_hz: float = 5.323e-7

    def __post_init__(self):
        if self.gev_scale_rad_per_hz <= 0:
            raise ParameterError("GEV scale must be positive")
        for name in ("sigma_intercept_db_nocm", "sigma_intercept_db_cm"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


def mu_profile(f_hz, params: ModelParameters):
    """Mean log-amplitude (dB) at frequency ``f_hz``; shared by all modes."""
    f_ghz = np.asarray(f_hz, dtype=float) / 1e9
    return params.mu_intercept_db + params.mu_slope_db_per_ghz * f_ghz


def sigma_profile(f_hz, is_cm: bool, params: ModelParameters):
    """Log-amplitude spread (dB) at ``f_hz`` for one mode class.

    ``is_cm`` selects the common-mode line; all other combinations share
    the second line.
    """
    f_ghz = np.asarray(f_hz, dtype=float) / 1e9
    if is_cm:
        sig = params.sigma_intercept_db_cm + params.sigma_slope_db_per_ghz_cm * f_ghz
    else:
        sig = params.sigma_intercept_db_nocm + params.sigma_slope_db_per_ghz_nocm * f_ghz
    if np.any(sig <= 0):
        raise ParameterError("sigma profile is not positive over the grid")
    return sig


def mode_sigma_vector(grid: MimoGrid, params: ModelParameters) -> np.ndarray:
    """Per-coordinate spread (dB) in reshaped order, length grid.size."""
    out = np.empty(grid.size)
    f = grid.frequencies
    for k, combo in enumerate(grid.combos):
        out[k * grid.n_freq : (k + 1) * grid.n_freq] = sigma_profile(
            f, combo.is_cm, params
        )
    return out


def mode_mu_vector(grid: MimoGrid, params: ModelParameters) -> np.ndarray:
    """Per-coordinate mean (dB) in reshaped order, length grid.size."""
    return np.tile(mu_profile(grid.frequencies, params), grid.n_combos)


def reshape(values: np.ndarray, grid: MimoGrid) -> np.ndarray:
    """Flatten a (n_rx, n_tx, n_freq) array to a vector in block order.

    Coordinate ``p`` (0-based) of the result holds entry
    ``values[j, i, n]`` with ``p = i*n_rx*n_freq + j*n_freq + n``:
    transmit index is the slowest axis, frequency the fastest, so each
    mode combination occupies one contiguous block of length n_freq.
    """
    values = np.asarray(values)
    if values.shape != (grid.n_rx, grid.n_tx, grid.n_freq):
        raise DimensionError(
            f"expected shape {(grid.n_rx, grid.n_tx, grid.n_freq)}, got {values.shape}"
        )
    return values.transpose(1, 0, 2).reshape(grid.size)


def unreshape(vec: np.ndarray, grid: MimoGrid) -> np.ndarray:
    """Inverse of :func:`reshape`: vector back to (n_rx, n_tx, n_freq)."""
    vec = np.asarray(vec)
    if vec.shape != (grid.size,):
        raise DimensionError(f"expected shape {(grid.size,)}, got {vec.shape}")
    return vec.reshape(grid.n_tx, grid.n_rx, grid.n_freq).transpose(1, 0, 2)


@dataclass(frozen=True)
class ReshapedVector:
    """A length-``grid.size`` vector tagged with its grid and meaning."""

    values: np.ndarray
    grid: MimoGrid
    kind: str = ""

    def __post_init__(self):
        if np.shape(self.values) != (self.grid.size,):
            raise DimensionError(
                f"vector length {np.shape(self.values)} does not match grid size "
                f"{self.grid.size}"
            )


def wrap_phase(phi):
    """Wrap angles to the half-open interval [-pi, pi)."""
    phi = np.asarray(phi, dtype=float)
    return np.mod(phi + np.pi, 2.0 * np.pi) - np.pi


def split_cfr_db(H: np.ndarray):
    """Split a complex CFR into (A_dB, phase) with phase in [-pi, pi).

    Raises DegenerateChannelError if any entry is exactly zero.
    """
    H = np.asarray(H)
    if np.any(H == 0):
        raise DegenerateChannelError("channel entry is exactly zero")
    a_db = 20.0 * np.log10(np.abs(H))
    phase = wrap_phase(np.angle(H))
    return a_db, phase


def combine_cfr_db(a_db: np.ndarray, phase: np.ndarray) -> np.ndarray:
    """Inverse of :func:`split_cfr_db`."""
    a_db = np.asarray(a_db, dtype=float)
    phase = np.asarray(phase, dtype=float)
    if a_db.shape != phase.shape:
        raise DimensionError("amplitude and phase shapes differ")
    return 10.0 ** (a_db / 20.0) * np.exp(1j * phase)


@dataclass
class ChannelSet:
    """A batch of channel realizations on a common grid.

    ``responses`` has shape (n_realizations, n_rx, n_tx, n_freq), complex.
    """

    grid: MimoGrid
    responses: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        self.responses = np.asarray(self.responses)
        expected = (self.grid.n_rx, self.grid.n_tx, self.grid.n_freq)
        if self.responses.ndim != 4 or self.responses.shape[1:] != expected:
            raise DimensionError(
                f"responses must be (n, {expected[0]}, {expected[1]}, {expected[2]}), "
                f"got {self.responses.shape}"
            )

    def __len__(self) -> int:
        return self.responses.shape[0]

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.responses)

    def split_db(self):
        """(A_dB, phase) arrays, each shaped like ``responses``."""
        return split_cfr_db(self.responses)

    def reshaped_amplitudes_db(self) -> np.ndarray:
        """Log-amplitudes as an (n_realizations, grid.size) matrix."""
        a_db, _ = self.split_db()
        n = len(self)
        return a_db.transpose(0, 2, 1, 3).reshape(n, self.grid.size)

    def reshaped_phases(self) -> np.ndarray:
        """Wrapped phases as an (n_realizations, grid.size) matrix."""
        _, ph = self.split_db()
        n = len(self)
        return ph.transpose(0, 2, 1, 3).reshape(n, self.grid.size)

    def subset_rx(self, rx_modes: tuple[str, ...]) -> "ChannelSet":
        """Restrict to the given receive modes (port deletion)."""
        idx = [self.grid.rx_modes.index(r) for r in rx_modes]
        sub = MimoGrid(
            self.grid.tx_modes,
            tuple(rx_modes),
            self.grid.n_freq,
            self.grid.f_start_hz,
            self.grid.f_step_hz,
        )
        return ChannelSet(sub, self.responses[:, idx, :, :], seed=self.seed)

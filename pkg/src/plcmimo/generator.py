"""Channel realization generator.

Synthetic path: reshaped log-amplitudes are correlated Gaussians
(A = S @ N + mu with S the covariance square root), and the phase of a
realization is a single random linear trend phi(f) = -s*f shared by all
mode combinations, with the slope s drawn from a generalized extreme
value law and the result wrapped to [-pi, pi).

Copula path (for empirically characterized targets): amplitudes use an
empirical covariance and mean; phases draw correlated Gaussians whose
correlation is the rank-adjusted target, then map through the normal CDF
to uniforms on [-pi, pi).

Randomness is counter-based: realization r consumes substreams
(seed, r, 0) for amplitudes and (seed, r, 1) for phases, so realization r
is the same no matter how many realizations are requested or how work is
distributed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import genextreme, norm

from .covariance import psd_sqrt, synthetic_sqrt
from .errors import DimensionError, ParameterError
from .model import (
    ChannelSet,
    MimoGrid,
    ModelParameters,
    decimate_grid,
    default_grid,
    mode_mu_vector,
    wrap_phase,
)

_AMP_STREAM = 0
_PHASE_STREAM = 1


@dataclass(frozen=True)
class GeneratorConfig:
    """How many realizations to draw and how.

    ``mode`` is "synthetic" (parametric model) or "copula" (empirical
    amplitude covariance + Gaussian-copula phases).  ``decimation``
    coarsens the frequency grid by an integer factor for quick runs.
    """

    n_realizations: int
    seed: int
    mode: str = "synthetic"
    cm_exponential: bool = True
    decimation: int = 1

    def __post_init__(self):
        if self.n_realizations < 1:
            raise ParameterError("need at least one realization")
        if self.seed < 0:
            raise ParameterError("seed must be non-negative")
        if self.mode not in ("synthetic", "copula"):
            raise ParameterError(f"unknown generator mode {self.mode!r}")
        if self.decimation < 1:
            raise ParameterError("decimation factor must be >= 1")


@dataclass
class EmpiricalMatrices:
    """Empirical targets driving the copula path.

    ``mu_amp`` and ``q_amp`` are the mean vector and covariance of the
    reshaped log-amplitudes; ``r_phase`` is the phase correlation matrix.
    """

    grid: MimoGrid
    mu_amp: np.ndarray
    q_amp: np.ndarray
    r_phase: np.ndarray

    def __post_init__(self):
        m = self.grid.size
        if self.mu_amp.shape != (m,):
            raise DimensionError("mu_amp length does not match grid")
        if self.q_amp.shape != (m, m) or self.r_phase.shape != (m, m):
            raise DimensionError("matrix shape does not match grid")


def _substream(seed: int, realization: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(realization, stream))
    )


def _standard_normal_block(seed: int, n: int, m: int, stream: int) -> np.ndarray:
    """(m, n) matrix whose column r comes from substream (seed, r, stream)."""
    out = np.empty((m, n))
    for r in range(n):
        out[:, r] = _substream(seed, r, stream).standard_normal(m)
    return out


def gen_amplitudes(s: np.ndarray, mu: np.ndarray, seed: int, n: int) -> np.ndarray:
    """Draw n reshaped log-amplitude vectors: rows of (S @ N + mu).T."""
    m = mu.shape[0]
    if s.shape != (m, m):
        raise DimensionError("square root and mean sizes differ")
    block = _standard_normal_block(seed, n, m, _AMP_STREAM)
    return (s @ block).T + mu[None, :]


def gen_phase_slopes(params: ModelParameters, seed: int, n: int) -> np.ndarray:
    """One GEV slope (rad/Hz) per realization via inverse-CDF sampling."""
    u = np.array([_substream(seed, r, _PHASE_STREAM).random() for r in range(n)])
    # scipy's shape parameter is the negative of the usual GEV shape
    return genextreme.ppf(
        u,
        c=-params.gev_shape,
        loc=params.gev_location_rad_per_hz,
        scale=params.gev_scale_rad_per_hz,
    )


def gen_phases(grid: MimoGrid, slopes: np.ndarray) -> np.ndarray:
    """Wrapped linear phase trends, (n, n_freq): phi = wrap(-s * f)."""
    slopes = np.asarray(slopes, dtype=float)
    return wrap_phase(-slopes[:, None] * grid.frequencies[None, :])


def _amplitudes_to_responses(
    amp_rows: np.ndarray, phases: np.ndarray, grid: MimoGrid
) -> np.ndarray:
    """Combine (n, size) amplitudes with per-realization phase curves.

    ``phases`` is (n, n_freq) when one curve is shared by all mode
    combinations, or (n, size) for per-coordinate phases.
    """
    n = amp_rows.shape[0]
    a3 = amp_rows.reshape(n, grid.n_tx, grid.n_rx, grid.n_freq).transpose(0, 2, 1, 3)
    if phases.shape == (n, grid.n_freq):
        ph3 = phases[:, None, None, :]
    else:
        ph3 = phases.reshape(n, grid.n_tx, grid.n_rx, grid.n_freq).transpose(0, 2, 1, 3)
    return 10.0 ** (a3 / 20.0) * np.exp(1j * ph3)


def generate(
    config: GeneratorConfig,
    params: ModelParameters | None = None,
    grid: MimoGrid | None = None,
    cache_dir=None,
    sqrt=None,
) -> ChannelSet:
    """Draw a synthetic channel set on the (possibly decimated) grid.

    ``sqrt`` may carry a precomputed (matrix, report) pair from
    :func:`plcmimo.covariance.synthetic_sqrt` for the decimated grid, so
    batch callers pay the decomposition once.
    """
    if config.mode != "synthetic":
        raise ParameterError("generate() handles the synthetic mode; "
                             "use generate_copula() for empirical targets")
    params = params or ModelParameters()
    grid = grid or default_grid()
    if config.decimation > 1:
        grid = decimate_grid(grid, config.decimation)
    if sqrt is None:
        sqrt = synthetic_sqrt(
            grid, params, cm_exponential=config.cm_exponential, cache_dir=cache_dir
        )
    s, _report = sqrt
    if s.shape != (grid.size, grid.size):
        raise DimensionError(
            f"square root is {s.shape}, grid needs ({grid.size}, {grid.size})"
        )
    mu = mode_mu_vector(grid, params)
    amps = gen_amplitudes(s, mu, config.seed, config.n_realizations)
    slopes = gen_phase_slopes(params, config.seed, config.n_realizations)
    phases = gen_phases(grid, slopes)
    responses = _amplitudes_to_responses(amps, phases, grid)
    return ChannelSet(grid, responses, seed=config.seed)


def generate_copula(
    config: GeneratorConfig,
    matrices: EmpiricalMatrices,
) -> ChannelSet:
    """Draw realizations against empirical amplitude/phase targets.

    Phases use a Gaussian copula: the target Pearson correlation of the
    wrapped phases is mapped to the latent normal correlation by
    rho_z = 2*sin(pi*rho/6), the matrix is PSD-repaired, and each latent
    row is normalized to unit variance before the CDF map so marginals
    are exactly uniform on [-pi, pi).
    """
    if config.mode != "copula":
        raise ParameterError("config.mode must be 'copula'")
    if config.decimation > 1:
        raise ParameterError("decimation applies to the parametric model; "
                             "supply matrices on the target grid instead")
    grid = matrices.grid
    m = grid.size
    n = config.n_realizations

    s_amp, _ = psd_sqrt(matrices.q_amp)
    amps = gen_amplitudes(s_amp, matrices.mu_amp, config.seed, n)

    rho = np.clip(np.asarray(matrices.r_phase, dtype=float), -1.0, 1.0)
    rho_z = 2.0 * np.sin(np.pi * rho / 6.0)
    rho_z = 0.5 * (rho_z + rho_z.T)
    np.fill_diagonal(rho_z, 1.0)
    s_z, _ = psd_sqrt(rho_z)
    row_norms = np.linalg.norm(s_z, axis=1)
    # a zero row (latent variance lost in repair) maps to the constant
    # phase 0; avoid dividing by zero for it
    row_norms = np.where(row_norms == 0, 1.0, row_norms)
    s_z = s_z / row_norms[:, None]

    z = s_z @ _standard_normal_block(config.seed, n, m, _PHASE_STREAM)
    phases = (2.0 * np.pi) * norm.cdf(z.T) - np.pi
    responses = _amplitudes_to_responses(amps, phases, grid)
    return ChannelSet(grid, responses, seed=config.seed)

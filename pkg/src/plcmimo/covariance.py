"""Block covariance synthesis for the reshaped log-amplitude vector.

The target correlation matrix R is built block-by-block on the mode-pair
grid: each diagonal block is a Toeplitz matrix generated by a per-class
frequency-lag profile (power decay, optionally corrected by an
exponential tail for the common-mode class), and every off-diagonal block
is reconstructed from the two diagonal blocks it couples:

    B_ij = (R_ii @ R_jj / n_freq + R_ii * R_jj) / 2      (* = Hadamard)

so only the diagonal blocks carry free parameters.  R is scaled to a
covariance Q by the per-coordinate spread vector, repaired to positive
semidefinite by eigenvalue clamping, and reduced to its symmetric square
root S used by the generator.

Because the reconstruction rule and the profiles depend on the mode
combination only through its class (common-mode receive or not), Q is
invariant under permuting combinations within a class.  ``psd_sqrt``
stays the generic dense routine; the class symmetry is exploited by an
internal solver that splits the eigenproblem into one mean-space problem
of size n_classes*n_freq plus one difference problem per class, which is
exact and much faster than the dense path on large grids.
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import eigh, toeplitz

from .errors import DimensionError, NumericalError, ParameterError
from .model import MimoGrid, ModelParameters, sigma_profile

_CACHE_MAGIC = b"PLCMSQT1"
_CACHE_VERSION = 1
# magic, version, M, param digest, grid digest, min eig, frob change, n clamped
_CACHE_HEADER = struct.Struct("<8sIQ32s32sddQ")


@dataclass(frozen=True)
class AntiDiagonalProfile:
    """Frequency-lag correlation profile for one mode class.

    ``values[d]`` is the model correlation at lag ``d * f_step_hz``;
    ``values[0]`` is 1 and everything is clamped to [0, 1].
    """

    values: np.ndarray
    f_step_hz: float
    is_cm: bool

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 1:
            raise DimensionError("profile must be a non-empty 1D array")
        if v[0] != 1.0:
            raise ParameterError("profile must start at 1 (zero lag)")
        if np.any(v < -1.0) or np.any(v > 1.0):
            raise ParameterError("profile values outside [-1, 1]")
        object.__setattr__(self, "values", v)

    @property
    def lags_hz(self) -> np.ndarray:
        return self.f_step_hz * np.arange(self.values.size)


@dataclass
class BlockCovariance:
    """A (correlation or covariance) matrix on the reshaped coordinate
    order, with block accessors per mode-combination pair."""

    matrix: np.ndarray
    grid: MimoGrid
    kind: str = "correlation"
    n_offdiag_above_one: int | None = None

    def __post_init__(self):
        m = self.grid.size
        if self.matrix.shape != (m, m):
            raise DimensionError(
                f"matrix shape {self.matrix.shape} does not match grid size {m}"
            )

    def block(self, i: int, j: int) -> np.ndarray:
        """View of block (i, j), 0-based combination indices."""
        n = self.grid.n_freq
        if not (0 <= i < self.grid.n_combos and 0 <= j < self.grid.n_combos):
            raise DimensionError("block index out of range")
        return self.matrix[i * n : (i + 1) * n, j * n : (j + 1) * n]


@dataclass(frozen=True)
class PsdRepairReport:
    """What eigenvalue clamping did to a symmetric matrix."""

    size: int
    min_eigenvalue: float
    n_clamped: int
    frobenius_change: float

    def summary(self) -> str:
        return (
            f"size={self.size} min_eig={self.min_eigenvalue:.3e} "
            f"clamped={self.n_clamped} rel_frobenius_change={self.frobenius_change:.3e}"
        )


def lag_correlation(lag_hz, is_cm: bool, params: ModelParameters, cm_exponential: bool = True):
    """Model correlation at the given lag(s) in Hz, clamped to [0, 1].

    Power decay ``a*lag**b + c`` per class; for the common-mode class an
    exponential correction ``a*exp(b*lag) + c`` is added beyond 40 MHz
    when ``cm_exponential`` is set.  Zero lag maps to 1.
    """
    lag = np.asarray(lag_hz, dtype=float)
    out = np.ones_like(lag)
    pos = lag > 0
    if is_cm:
        a, b, c = params.lag_a_cm, params.lag_b_cm, params.lag_c_cm
    else:
        a, b, c = params.lag_a_nocm, params.lag_b_nocm, params.lag_c_nocm
    r = a * lag[pos] ** b + c
    if is_cm and cm_exponential:
        ea, eb, ec = params.lag_exp_a_cm, params.lag_exp_b_cm, params.lag_exp_c_cm
        tail = lag[pos] > 40e6
        r[tail] += ea * np.exp(eb * lag[pos][tail]) + ec
    out[pos] = np.clip(r, 0.0, 1.0)
    return out if out.ndim else float(out)


def antidiag_profile(
    n_freq: int,
    f_step_hz: float,
    is_cm: bool,
    params: ModelParameters,
    cm_exponential: bool = True,
) -> AntiDiagonalProfile:
    """Lag profile for one class on a uniform grid (lags 0..n_freq-1)."""
    if n_freq < 2:
        raise DimensionError("need at least 2 frequency samples")
    lags = f_step_hz * np.arange(n_freq)
    vals = lag_correlation(lags, is_cm, params, cm_exponential)
    return AntiDiagonalProfile(vals, f_step_hz, is_cm)


def toeplitz_block(profile) -> np.ndarray:
    """Symmetric Toeplitz matrix generated by a lag profile."""
    values = profile.values if isinstance(profile, AntiDiagonalProfile) else np.asarray(profile, dtype=float)
    return toeplitz(values)


def offdiag_block(r_ii: np.ndarray, r_jj: np.ndarray) -> np.ndarray:
    """Reconstruct the block coupling two combinations from their
    diagonal blocks: matrix-product term (scaled by 1/n) averaged with
    the Hadamard product."""
    r_ii = np.asarray(r_ii, dtype=float)
    r_jj = np.asarray(r_jj, dtype=float)
    if r_ii.shape != r_jj.shape or r_ii.ndim != 2 or r_ii.shape[0] != r_ii.shape[1]:
        raise DimensionError("diagonal blocks must be square and same-shape")
    n = r_ii.shape[0]
    return 0.5 * (r_ii @ r_jj / n + r_ii * r_jj)


def class_profiles(grid: MimoGrid, params: ModelParameters, cm_exponential: bool = True):
    """Toeplitz diagonal block per mode class present on the grid.

    Returns an ordered dict-like mapping {is_cm: ndarray}.
    """
    out = {}
    for combo in grid.combos:
        if combo.is_cm not in out:
            prof = antidiag_profile(
                grid.n_freq, grid.f_step_hz, combo.is_cm, params, cm_exponential
            )
            out[combo.is_cm] = toeplitz_block(prof)
    return out

def assemble_R(
    grid: MimoGrid, params: ModelParameters, cm_exponential: bool = True
) -> BlockCovariance:
    """Full correlation matrix: Toeplitz diagonal blocks per class plus
    reconstructed off-diagonal blocks (upper triangle computed, lower
    mirrored by transposition)."""
    diag = class_profiles(grid, params, cm_exponential)
    n = grid.n_freq
    combos = grid.combos
    mat = np.empty((grid.size, grid.size))
    above = 0
    for k, ck in enumerate(combos):
        mat[k * n : (k + 1) * n, k * n : (k + 1) * n] = diag[ck.is_cm]
        for l in range(k + 1, len(combos)):
            blk = offdiag_block(diag[ck.is_cm], diag[combos[l].is_cm])
            mat[k * n : (k + 1) * n, l * n : (l + 1) * n] = blk
            mat[l * n : (l + 1) * n, k * n : (k + 1) * n] = blk.T
            above += int(np.count_nonzero(np.abs(blk) > 1.0)) * 2
    return BlockCovariance(mat, grid, kind="correlation", n_offdiag_above_one=above)


def scale_to_Q(r: BlockCovariance, sigma_vec: np.ndarray) -> BlockCovariance:
    """Correlation -> covariance via the per-coordinate spread vector."""
    sigma_vec = np.asarray(sigma_vec, dtype=float)
    if sigma_vec.shape != (r.grid.size,):
        raise DimensionError("sigma vector length does not match grid size")
    if np.any(sigma_vec <= 0):
        raise ParameterError("spreads must be positive")
    q = r.matrix * sigma_vec[None, :] * sigma_vec[:, None]
    return BlockCovariance(q, r.grid, kind="covariance")


def _eigh(a: np.ndarray):
    # 'evd' is fastest for full eigenvectors at moderate size but its
    # workspace grows like 2n^2; fall back to the default driver above
    # ~4000 to keep peak memory bounded.
    driver = "evd" if a.shape[0] <= 4000 else "evr"
    try:
        return eigh(a, driver=driver)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - rare
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc


def _sqrt_from_eigh(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    s = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return 0.5 * (s + s.T)


def psd_sqrt(q) -> tuple[np.ndarray, PsdRepairReport]:
    """Symmetric square root with PSD repair.

    Negative eigenvalues are clamped to zero; the report records the
    minimum eigenvalue found, how many were clamped, and the relative
    Frobenius-norm change the repair caused.
    """
    mat = q.matrix if isinstance(q, BlockCovariance) else np.asarray(q, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionError("need a square matrix")
    w, v = _eigh(mat)
    report = _report_from_spectrum(mat.shape[0], [(w, 1)])
    return _sqrt_from_eigh(w, v), report


def _report_from_spectrum(size: int, spectra) -> PsdRepairReport:
    """Repair report from eigenvalue sets with multiplicities."""
    min_eig = np.inf
    n_clamped = 0
    changed = 0.0
    total = 0.0
    for w, mult in spectra:
        min_eig = min(min_eig, float(w.min()))
        neg = w[w < 0]
        n_clamped += mult * neg.size
        changed += mult * float(np.sum(neg**2))
        total += mult * float(np.sum(w**2))
    frob = np.sqrt(changed / total) if total > 0 else 0.0
    return PsdRepairReport(size, float(min_eig), int(n_clamped), float(frob))


def _grid_classes(grid: MimoGrid):
    """Mode classes present on the grid, each with its member indices."""
    classes: dict[bool, list[int]] = {}
    for k, combo in enumerate(grid.combos):
        classes.setdefault(combo.is_cm, []).append(k)
    return classes


def structured_sqrt(
    grid: MimoGrid, params: ModelParameters, cm_exponential: bool = True
) -> tuple[np.ndarray, PsdRepairReport]:
    """Square root of the synthetic covariance via its class symmetry.

    Equivalent to ``psd_sqrt(scale_to_Q(assemble_R(...), ...))`` but the
    eigenproblem is split exactly: permuting same-class combinations
    leaves Q invariant, so the spectrum decomposes into a mean-space
    problem over class averages plus one difference problem per class
    with multiplicity (class size - 1).
    """
    diag = class_profiles(grid, params, cm_exponential)
    classes = _grid_classes(grid)
    keys = list(classes.keys())
    n = grid.n_freq
    f = grid.frequencies
    sig = {c: sigma_profile(f, c, params) for c in keys}

    # scaled within/between-class blocks
    d_blk = {c: diag[c] * np.outer(sig[c], sig[c]) for c in keys}
    f_blk = {
        c: offdiag_block(diag[c], diag[c]) * np.outer(sig[c], sig[c])
        for c in keys
        if len(classes[c]) > 1
    }
    g_blk = {}
    for a in range(len(keys)):
        for b in range(a + 1, len(keys)):
            ca, cb = keys[a], keys[b]
            g_blk[(ca, cb)] = offdiag_block(diag[ca], diag[cb]) * np.outer(
                sig[ca], sig[cb]
            )

    # mean-space problem: class averages coupled across classes
    k_cls = len(keys)
    mean = np.empty((k_cls * n, k_cls * n))
    for a, ca in enumerate(keys):
        m_a = len(classes[ca])
        blk = d_blk[ca] + (m_a - 1) * f_blk.get(ca, 0.0)
        mean[a * n : (a + 1) * n, a * n : (a + 1) * n] = blk
        for b in range(a + 1, len(keys)):
            cb = keys[b]
            m_b = len(classes[cb])
            cross = np.sqrt(m_a * m_b) * g_blk[(ca, cb)]
            mean[a * n : (a + 1) * n, b * n : (b + 1) * n] = cross
            mean[b * n : (b + 1) * n, a * n : (a + 1) * n] = cross.T

    w_mean, v_mean = _eigh(mean)
    spectra = [(w_mean, 1)]
    diff_sqrt = {}
    for c in keys:
        m_c = len(classes[c])
        if m_c < 2:
            continue
        w_d, v_d = _eigh(d_blk[c] - f_blk[c])
        spectra.append((w_d, m_c - 1))
        diff_sqrt[c] = _sqrt_from_eigh(w_d, v_d)
    report = _report_from_spectrum(grid.size, spectra)

    mean_sqrt = _sqrt_from_eigh(w_mean, v_mean)

    # expand back to combination blocks
    s = np.empty((grid.size, grid.size))
    cls_of = {k: c for c in keys for k in classes[c]}
    pos = {c: a for a, c in enumerate(keys)}
    for k in range(grid.n_combos):
        ck = cls_of[k]
        a = pos[ck]
        m_k = len(classes[ck])
        for l in range(grid.n_combos):
            cl = cls_of[l]
            b = pos[cl]
            m_l = len(classes[cl])
            blk = mean_sqrt[a * n : (a + 1) * n, b * n : (b + 1) * n] / np.sqrt(
                m_k * m_l
            )
            if ck == cl and m_k > 1:
                coef = (1.0 if k == l else 0.0) - 1.0 / m_k
                blk = blk + coef * diff_sqrt[ck]
            s[k * n : (k + 1) * n, l * n : (l + 1) * n] = blk
    return s, report


def _canonical_params_text(params: ModelParameters, cm_exponential: bool) -> str:
    lines = [
        f"{name}={float(getattr(params, name))!r}"
        for name in sorted(ModelParameters.field_names())
    ]
    lines.append(f"cm_exponential={bool(cm_exponential)}")
    return "\n".join(lines)


def _canonical_grid_text(grid: MimoGrid) -> str:
    return (
        f"tx={','.join(grid.tx_modes)};rx={','.join(grid.rx_modes)};"
        f"n={grid.n_freq};f0={grid.f_start_hz!r};df={grid.f_step_hz!r}"
    )


def sqrt_cache_key(grid: MimoGrid, params: ModelParameters, cm_exponential: bool):
    """(parameter digest, grid digest) identifying one square root."""
    p = hashlib.sha256(_canonical_params_text(params, cm_exponential).encode()).digest()
    g = hashlib.sha256(_canonical_grid_text(grid).encode()).digest()
    return p, g


def sqrt_cache_path(cache_dir, grid, params, cm_exponential: bool) -> Path:
    p, g = sqrt_cache_key(grid, params, cm_exponential)
    return Path(cache_dir) / f"sqrt_{p[:8].hex()}_{g[:8].hex()}_{grid.size}.bin"


def save_sqrt_cache(path, s: np.ndarray, report: PsdRepairReport, key) -> None:
    """Write the square root atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _CACHE_HEADER.pack(
        _CACHE_MAGIC,
        _CACHE_VERSION,
        s.shape[0],
        key[0],
        key[1],
        report.min_eigenvalue,
        report.frobenius_change,
        report.n_clamped,
    )
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            np.ascontiguousarray(s, dtype="<f8").tofile(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_sqrt_cache(path, key, size: int):
    """Load a cached square root; None on any mismatch or damage."""
    path = Path(path)
    if not path.is_file():
        return None
    try:
        with open(path, "rb") as fh:
            raw = fh.read(_CACHE_HEADER.size)
            if len(raw) != _CACHE_HEADER.size:
                return None
            magic, version, m, pdig, gdig, min_eig, frob, n_clamped = _CACHE_HEADER.unpack(raw)
            if (
                magic != _CACHE_MAGIC
                or version != _CACHE_VERSION
                or m != size
                or pdig != key[0]
                or gdig != key[1]
            ):
                return None
            s = np.fromfile(fh, dtype="<f8", count=m * m)
        if s.size != m * m:
            return None
        report = PsdRepairReport(size, min_eig, int(n_clamped), frob)
        return s.reshape(m, m), report
    except OSError:
        return None


def synthetic_sqrt(
    grid: MimoGrid,
    params: ModelParameters,
    *,
    cm_exponential: bool = True,
    cache_dir=None,
    method: str = "auto",
) -> tuple[np.ndarray, PsdRepairReport]:
    """Covariance square root for the synthetic model, with disk cache.

    ``method`` is "auto" (class-symmetry solver), "structured", or
    "dense" (assemble the full matrix and run :func:`psd_sqrt`; mainly a
    cross-check).  Cache entries are keyed by parameter and grid digests
    so stale files are recomputed, never trusted.
    """
    key = sqrt_cache_key(grid, params, cm_exponential)
    path = None
    if cache_dir is not None:
        path = sqrt_cache_path(cache_dir, grid, params, cm_exponential)
        cached = load_sqrt_cache(path, key, grid.size)
        if cached is not None:
            return cached
    if method not in ("auto", "structured", "dense"):
        raise ParameterError(f"unknown method {method!r}")
    if method == "dense":
        from .model import mode_sigma_vector

        q = scale_to_Q(assemble_R(grid, params, cm_exponential), mode_sigma_vector(grid, params))
        s, report = psd_sqrt(q)
    else:
        s, report = structured_sqrt(grid, params, cm_exponential)
    if path is not None:
        save_sqrt_cache(path, s, report, key)
    return s, report

"""File formats: channel CSV, flat key=value parameter files, noise and
mask tables, and the metric/CCDF output tables.

All writers go through a temp-file-plus-rename so a crashed command
never leaves a half-written file behind.  Floats are serialized with 17
significant digits, which round-trips IEEE doubles exactly.
"""

from __future__ import annotations

import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .capacity import NoiseModel, PsdMask
from .errors import FormatError, ParameterError
from .metrics import MetricsTable
from .model import ChannelSet, MimoGrid, ModelParameters

CHANNEL_HEADER = "realization_id,tx_mode,rx_mode,freq_hz,re,im"


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


@contextmanager
def atomic_write(path: str):
    """Yield a text handle on a temp file, renamed over ``path`` on
    success and removed on failure."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


# ------------------------------------------------------------ channel csv


def write_channel_file(path: str, cs: ChannelSet) -> None:
    """One row per (realization, tx, rx, frequency), tx-major blocks,
    frequencies ascending."""
    grid = cs.grid
    freqs = [fmt(f) for f in grid.frequencies]
    with atomic_write(path) as out:
        out.write(CHANNEL_HEADER + "\n")
        for i in range(len(cs)):
            for t, tx in enumerate(grid.tx_modes):
                for r, rx in enumerate(grid.rx_modes):
                    h = cs.responses[i, r, t]
                    prefix = f"{i},{tx},{rx},"
                    for n in range(grid.n_freq):
                        out.write(
                            f"{prefix}{freqs[n]},{fmt(h[n].real)},{fmt(h[n].imag)}\n"
                        )


def _parse_channel_rows(path: str):
    ids, txs, rxs = [], [], []
    freqs, res, ims = [], [], []
    with open(path, "r") as handle:
        header = handle.readline()
        if header.strip() != CHANNEL_HEADER:
            raise FormatError("missing or wrong header row", line=1)
        for lineno, line in enumerate(handle, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise FormatError(f"expected 6 columns, got {len(parts)}", line=lineno)
            try:
                ids.append(int(parts[0]))
                freqs.append(float(parts[3]))
                res.append(float(parts[4]))
                ims.append(float(parts[5]))
            except ValueError as exc:
                raise FormatError(str(exc), line=lineno) from exc
            txs.append(parts[1])
            rxs.append(parts[2])
    if not ids:
        raise FormatError("no data rows")
    return (
        np.array(ids),
        np.array(txs),
        np.array(rxs),
        np.array(freqs),
        np.array(res),
        np.array(ims),
    )


def read_channel_file(path: str) -> ChannelSet:
    """Parse and validate a channel file back into a ChannelSet.

    The grid (port lists and frequency axis) is inferred from the first
    realization block; every later block must repeat it exactly.  Any
    structural violation is reported with its 1-based line number.
    """
    ids, txs, rxs, freqs, res, ims = _parse_channel_rows(path)
    total = ids.size

    # frequency run length of the first (tx, rx) block
    first_key_change = np.nonzero((txs != txs[0]) | (rxs != rxs[0]) | (ids != ids[0]))[0]
    n_freq = int(first_key_change[0]) if first_key_change.size else total
    if n_freq < 2:
        raise FormatError("need at least 2 frequency samples per block", line=2)
    freqs0 = freqs[:n_freq]
    bad = np.nonzero(np.diff(freqs0) <= 0)[0]
    if bad.size:
        raise FormatError("frequencies must be strictly increasing", line=2 + int(bad[0]) + 1)

    if total % n_freq:
        raise FormatError("row count is not a whole number of frequency blocks",
                          line=1 + total)
    n_blocks = total // n_freq
    block_tx = txs[::n_freq]
    block_rx = rxs[::n_freq]

    # combination list from the first realization
    first_real = ids == ids[0]
    n_combos = int(first_real.sum()) // n_freq
    if n_combos == 0 or n_blocks % n_combos:
        raise FormatError("incomplete mode-combination block", line=1 + total)
    combo_tx = block_tx[:n_combos]
    combo_rx = block_rx[:n_combos]
    tx_modes = tuple(dict.fromkeys(combo_tx))
    rx_modes = tuple(dict.fromkeys(combo_rx))
    if len(tx_modes) * len(rx_modes) != n_combos:
        raise FormatError("mode combinations do not form a rectangle", line=2)
    expect_tx = np.repeat(np.array(tx_modes), len(rx_modes))
    expect_rx = np.tile(np.array(rx_modes), len(tx_modes))
    if not (np.array_equal(combo_tx, expect_tx) and np.array_equal(combo_rx, expect_rx)):
        raise FormatError("combinations must be grouped tx-major", line=2)

    n_real = n_blocks // n_combos
    mism = np.nonzero(
        (block_tx != np.tile(expect_tx, n_real)) | (block_rx != np.tile(expect_rx, n_real))
    )[0]
    if mism.size:
        raise FormatError("mode-combination order changed", line=2 + int(mism[0]) * n_freq)

    freq_grid = np.tile(freqs0, n_blocks)
    mism = np.nonzero(freqs != freq_grid)[0]
    if mism.size:
        raise FormatError("frequency axis differs between blocks", line=2 + int(mism[0]))

    per_real = ids.reshape(n_real, n_combos * n_freq)
    if np.any(per_real != per_real[:, :1]):
        flat = int(np.nonzero(per_real != per_real[:, :1])[0][0])
        raise FormatError("realization_id changed inside a block", line=2 + flat)
    real_ids = per_real[:, 0]
    bad = np.nonzero(np.diff(real_ids) <= 0)[0]
    if bad.size:
        raise FormatError("realization ids must be strictly increasing",
                          line=2 + (int(bad[0]) + 1) * n_combos * n_freq)

    try:
        grid = MimoGrid(
            tx_modes,
            rx_modes,
            n_freq,
            float(freqs0[0]),
            float((freqs0[-1] - freqs0[0]) / (n_freq - 1)),
        )
    except Exception as exc:
        raise FormatError(f"invalid grid: {exc}", line=2) from exc
    if not np.allclose(grid.frequencies, freqs0, rtol=1e-9, atol=0):
        raise FormatError("frequency axis is not uniformly spaced", line=2)

    values = (res + 1j * ims).reshape(n_real, len(tx_modes), len(rx_modes), n_freq)
    return ChannelSet(grid, values.transpose(0, 2, 1, 3).copy())


# -------------------------------------------------------- parameter file


@dataclass
class ParameterFileContent:
    params: ModelParameters
    grid: MimoGrid
    noise: NoiseModel | None = None
    mask: PsdMask | None = None


_GRID_KEYS = ("tx_modes", "rx_modes", "n_freq", "f_start_hz", "f_step_hz")
_OPTIONAL_KEYS = ("noise_psd_coeffs", "noise_psd_table", "mask_breakpoints")


def write_parameter_file(path: str, content: ParameterFileContent) -> None:
    grid = content.grid
    with atomic_write(path) as out:
        out.write("# channel model parameters\n")
        out.write(f"tx_modes = {','.join(grid.tx_modes)}\n")
        out.write(f"rx_modes = {','.join(grid.rx_modes)}\n")
        out.write(f"n_freq = {grid.n_freq}\n")
        out.write(f"f_start_hz = {fmt(grid.f_start_hz)}\n")
        out.write(f"f_step_hz = {fmt(grid.f_step_hz)}\n")
        for name in ModelParameters.field_names():
            out.write(f"{name} = {fmt(getattr(content.params, name))}\n")
        if content.noise is not None:
            if content.noise.psd_coeffs is not None:
                coeffs = ",".join(fmt(v) for v in content.noise.psd_coeffs)
                out.write(f"noise_psd_coeffs = {coeffs}\n")
            else:
                table_f, table_l = content.noise.psd_table
                pairs = ",".join(f"{fmt(f)}:{fmt(l)}" for f, l in zip(table_f, table_l))
                out.write(f"noise_psd_table = {pairs}\n")
        if content.mask is not None:
            pairs = ",".join(f"{fmt(f)}:{fmt(l)}" for f, l in content.mask.breakpoints)
            out.write(f"mask_breakpoints = {pairs}\n")


def _parse_key_values(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r") as handle:
        for lineno, line in enumerate(handle, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ParameterError(f"line {lineno}: expected key = value")
            key, value = text.split("=", 1)
            key = key.strip()
            if key in out:
                raise ParameterError(f"line {lineno}: duplicate key {key!r}")
            out[key] = value.strip()
    return out


def _parse_pairs(text: str, what: str):
    pairs = []
    for item in text.split(","):
        if ":" not in item:
            raise ParameterError(f"{what}: expected freq:level pairs, got {item!r}")
        f, l = item.split(":", 1)
        pairs.append((float(f), float(l)))
    return pairs


def read_parameter_file(path: str) -> ParameterFileContent:
    kv = _parse_key_values(path)
    known = set(_GRID_KEYS) | set(ModelParameters.field_names()) | set(_OPTIONAL_KEYS)
    unknown = sorted(set(kv) - known)
    if unknown:
        raise ParameterError(f"unknown keys: {', '.join(unknown)}")
    missing = sorted((set(_GRID_KEYS) | set(ModelParameters.field_names())) - set(kv))
    if missing:
        raise ParameterError(f"missing keys: {', '.join(missing)}")
    if "noise_psd_coeffs" in kv and "noise_psd_table" in kv:
        raise ParameterError("give noise_psd_coeffs or noise_psd_table, not both")
    try:
        grid = MimoGrid(
            tuple(kv["tx_modes"].split(",")),
            tuple(kv["rx_modes"].split(",")),
            int(kv["n_freq"]),
            float(kv["f_start_hz"]),
            float(kv["f_step_hz"]),
        )
        params = ModelParameters(
            **{name: float(kv[name]) for name in ModelParameters.field_names()}
        )
    except ParameterError:
        raise
    except (TypeError, ValueError) as exc:
        raise ParameterError(str(exc)) from exc
    noise = None
    if "noise_psd_coeffs" in kv:
        coeffs = [float(v) for v in kv["noise_psd_coeffs"].split(",")]
        if len(coeffs) != 3:
            raise ParameterError("noise_psd_coeffs needs exactly 3 values")
        noise = NoiseModel(psd_coeffs=tuple(coeffs))
    elif "noise_psd_table" in kv:
        pairs = _parse_pairs(kv["noise_psd_table"], "noise_psd_table")
        noise = NoiseModel(
            psd_coeffs=None,
            psd_table=(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs)),
        )
    mask = None
    if "mask_breakpoints" in kv:
        mask = PsdMask(tuple(_parse_pairs(kv["mask_breakpoints"], "mask_breakpoints")))
    return ParameterFileContent(params=params, grid=grid, noise=noise, mask=mask)


def read_noise_file(path: str) -> NoiseModel:
    """Standalone noise description: psd_coeffs or psd_table, plus an
    optional rx_correlation with ';'-separated rows."""
    kv = _parse_key_values(path)
    unknown = sorted(set(kv) - {"psd_coeffs", "psd_table", "rx_correlation"})
    if unknown:
        raise ParameterError(f"unknown keys: {', '.join(unknown)}")
    corr = None
    if "rx_correlation" in kv:
        rows = [
            [float(v) for v in row.split(",")] for row in kv["rx_correlation"].split(";")
        ]
        corr = np.array(rows)
    if "psd_coeffs" in kv:
        coeffs = [float(v) for v in kv["psd_coeffs"].split(",")]
        if len(coeffs) != 3:
            raise ParameterError("psd_coeffs needs exactly 3 values")
        return NoiseModel(psd_coeffs=tuple(coeffs), rx_correlation=corr)
    if "psd_table" in kv:
        pairs = _parse_pairs(kv["psd_table"], "psd_table")
        return NoiseModel(
            psd_coeffs=None,
            psd_table=(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs)),
            rx_correlation=corr,
        )
    raise ParameterError("noise file needs psd_coeffs or psd_table")


def read_mask_file(path: str) -> PsdMask:
    kv = _parse_key_values(path)
    unknown = sorted(set(kv) - {"breakpoints"})
    if unknown:
        raise ParameterError(f"unknown keys: {', '.join(unknown)}")
    if "breakpoints" not in kv:
        raise ParameterError("mask file needs breakpoints")
    return PsdMask(tuple(_parse_pairs(kv["breakpoints"], "breakpoints")))


# ----------------------------------------------------- empirical matrices


def write_copula_matrices(path: str, matrices) -> None:
    """Empirical generation targets as a compressed numpy archive (the
    matrices are far too large for text)."""
    grid = matrices.grid
    np.savez_compressed(
        path,
        tx_modes=np.array(grid.tx_modes),
        rx_modes=np.array(grid.rx_modes),
        n_freq=grid.n_freq,
        f_start_hz=grid.f_start_hz,
        f_step_hz=grid.f_step_hz,
        mu_amp=matrices.mu_amp,
        q_amp=matrices.q_amp,
        r_phase=matrices.r_phase,
    )


def read_copula_matrices(path: str):
    from .generator import EmpiricalMatrices

    try:
        data = np.load(path)
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read matrix archive: {exc}") from exc
    needed = {"tx_modes", "rx_modes", "n_freq", "f_start_hz", "f_step_hz",
              "mu_amp", "q_amp", "r_phase"}
    missing = sorted(needed - set(data.files))
    if missing:
        raise FormatError(f"matrix archive missing arrays: {', '.join(missing)}")
    grid = MimoGrid(
        tuple(str(t) for t in data["tx_modes"]),
        tuple(str(r) for r in data["rx_modes"]),
        int(data["n_freq"]),
        float(data["f_start_hz"]),
        float(data["f_step_hz"]),
    )
    return EmpiricalMatrices(
        grid=grid,
        mu_amp=np.asarray(data["mu_amp"], dtype=float),
        q_amp=np.asarray(data["q_amp"], dtype=float),
        r_phase=np.asarray(data["r_phase"], dtype=float),
    )


# --------------------------------------------------------- metric tables


def write_metrics_csv(path: str, table: MetricsTable) -> None:
    """Long-format table: one row per (realization, mode); the
    per-realization condition number repeats on each of its mode rows."""
    grid = table.grid
    with atomic_write(path) as out:
        out.write("realization_id,tx_mode,rx_mode,acg_db,rms_ds_s,coherence_bw_hz,kappa_db\n")
        for i in range(table.n_realizations):
            kappa = "" if table.kappa_db is None else fmt(table.kappa_db[i])
            for k, combo in enumerate(grid.combos):
                out.write(
                    f"{i},{combo.tx},{combo.rx},{fmt(table.acg_db[i, k])},"
                    f"{fmt(table.rms_ds_s[i, k])},{fmt(table.coherence_bw_hz[i, k])},"
                    f"{kappa}\n"
                )


def write_capacity_csv(path: str, rates_bps: np.ndarray) -> None:
    with atomic_write(path) as out:
        out.write("realization_id,capacity_bps\n")
        for i, rate in enumerate(rates_bps):
            out.write(f"{i},{fmt(rate)}\n")


def write_ccdf_csv(path: str, ccdf: np.ndarray) -> None:
    with atomic_write(path) as out:
        out.write("rate_bps,probability\n")
        for rate, prob in ccdf:
            out.write(f"{fmt(rate)},{fmt(prob)}\n")

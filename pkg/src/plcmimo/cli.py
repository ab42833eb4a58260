"""Command-line front end.

Subcommands: generate, characterize, validate, metrics, capacity.

Exit codes: 0 success, 2 usage or malformed input file, 3 parameter-file
error, 4 numerical failure, 5 insufficient realizations, 6 validation
metric failure (the report is still written).

Determinism: BLAS pools are pinned to one thread for the duration of a
command, and ``--threads`` only sizes this package's own pool over
realizations with results collected in input order, so outputs are
byte-identical for a fixed seed regardless of the thread count.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from threadpoolctl import threadpool_limits

from . import io as fileio
from .capacity import CapacityResult, NoiseModel, PsdMask, capacity_one
from .characterization import characterize
from .covariance import synthetic_sqrt
from .errors import (
    FormatError,
    InsufficientDataError,
    NumericalError,
    ParameterError,
    PlcMimoError,
)
from .generator import GeneratorConfig, generate, generate_copula
from .metrics import compute_metrics, summarize
from .model import MimoGrid, ModelParameters, decimate_grid, default_grid, scheme_grid
from .targets import TARGETS, build_report, parse_custom_target

EXIT_USAGE = 2
EXIT_PARAMS = 3
EXIT_NUMERICAL = 4
EXIT_INSUFFICIENT = 5
EXIT_VALIDATION = 6

PARAMS_ENV = "PLCMIMO_PARAMS"
CACHE_ENV = "PLCMIMO_CACHE"


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else Path.home() / ".cache" / "plcmimo"


def repair_summary(report) -> str:
    return (
        f"repair: size={report.size} min_eigenvalue={report.min_eigenvalue:.6g} "
        f"n_clamped={report.n_clamped} frobenius_change={report.frobenius_change:.6g}"
    )


def _load_param_content(args) -> fileio.ParameterFileContent:
    path = getattr(args, "params", None) or os.environ.get(PARAMS_ENV)
    if path:
        return fileio.read_parameter_file(path)
    return fileio.ParameterFileContent(params=ModelParameters(), grid=default_grid())


def _resolve_grid(args, content: fileio.ParameterFileContent) -> MimoGrid:
    """Port lists from --scheme, frequency axis from the parameter file."""
    base = content.grid
    scheme = getattr(args, "scheme", None)
    if scheme:
        ports = scheme_grid(scheme)
        base = MimoGrid(
            ports.tx_modes, ports.rx_modes, base.n_freq, base.f_start_hz, base.f_step_hz
        )
    decimate = getattr(args, "decimate", 1)
    if decimate > 1:
        base = decimate_grid(base, decimate)
    return base


def _scheme_name(grid: MimoGrid) -> str:
    if grid.n_tx == 1 and grid.n_rx == 1:
        return "siso"
    return f"{grid.n_tx}x{grid.n_rx}"


def _generate_set(args):
    """Shared by generate and validate: returns (ChannelSet, grid)."""
    content = _load_param_content(args)
    grid = _resolve_grid(args, content)
    config = GeneratorConfig(
        n_realizations=args.n,
        seed=args.seed,
        mode=args.mode,
        cm_exponential=not args.no_cm_exp,
    )
    if args.mode == "copula":
        if args.decimate > 1:
            raise ParameterError(
                "decimation applies to the parametric model; "
                "supply matrices on the target grid instead"
            )
        if not args.copula_matrices:
            raise ParameterError("copula mode needs --copula-matrices")
        matrices = fileio.read_copula_matrices(args.copula_matrices)
        return generate_copula(config, matrices), matrices.grid, content
    sqrt = synthetic_sqrt(
        grid,
        content.params,
        cm_exponential=config.cm_exponential,
        cache_dir=None if args.no_cache else default_cache_dir(),
    )
    try:
        cs = generate(config, content.params, grid, sqrt=sqrt)
    except NumericalError as exc:
        exc.repair_report = sqrt[1]
        raise
    return cs, grid, content


def _parallel_map(fn, items, threads: int) -> list:
    """Map preserving input order; threads only cap our own pool."""
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _noise_mask(args, content: fileio.ParameterFileContent | None):
    noise = mask = None
    if getattr(args, "noise", None):
        noise = fileio.read_noise_file(args.noise)
    elif content is not None and content.noise is not None:
        noise = content.noise
    if getattr(args, "mask", None):
        mask = fileio.read_mask_file(args.mask)
    elif content is not None and content.mask is not None:
        mask = content.mask
    return noise, mask


# ----------------------------------------------------------- subcommands


def cmd_generate(args) -> int:
    cs, grid, _ = _generate_set(args)
    fileio.write_channel_file(args.out, cs)
    print(
        f"wrote {args.out}: {len(cs)} realizations, {grid.n_combos} mode "
        f"combinations, {grid.n_freq} frequencies"
    )
    return 0


def cmd_characterize(args) -> int:
    cs = fileio.read_channel_file(args.inp)
    params, diagnostics = characterize(cs, robust_slopes=args.robust_slopes)
    fileio.write_parameter_file(
        args.out, fileio.ParameterFileContent(params=params, grid=cs.grid)
    )
    print(diagnostics.as_text())
    print(f"wrote {args.out}")
    return 0


def cmd_validate(args) -> int:
    if args.inp:
        cs = fileio.read_channel_file(args.inp)
        grid = cs.grid
        content = None
        seed = cs.seed if cs.seed is not None else "unknown"
        decimation = 1
    else:
        if args.n is None or args.seed is None:
            raise ParameterError("validate needs --in or both --n and --seed")
        cs, grid, content = _generate_set(args)
        seed = args.seed
        decimation = args.decimate

    if args.targets == "custom":
        if not args.target_file:
            raise ParameterError("--targets custom needs --target-file")
        target = parse_custom_target(fileio._parse_key_values(args.target_file))
    else:
        target = TARGETS[args.targets]

    table = compute_metrics(cs)
    noise, mask = _noise_mask(args, content)
    if noise is not None or mask is not None:
        noise = noise or NoiseModel()
        mask = mask or PsdMask()
        table.capacity_bps = np.array(
            _parallel_map(
                lambda i: capacity_one(cs.responses[i], grid, noise, mask),
                range(len(cs)),
                args.threads,
            )
        )
    report = build_report(
        summarize(table),
        target,
        environment={
            "seed": seed,
            "scheme": _scheme_name(grid),
            "n_freq": grid.n_freq,
            "decimation": decimation,
        },
        cb_informational=abs(grid.f_step_hz - 62.5e3) > 1e-9,
    )
    print(report.as_text())
    if args.report:
        with fileio.atomic_write(args.report) as out:
            out.write(report.as_key_values() + "\n")
    return 0 if report.overall_pass else EXIT_VALIDATION


def cmd_metrics(args) -> int:
    cs = fileio.read_channel_file(args.inp)
    table = compute_metrics(cs)
    fileio.write_metrics_csv(args.out, table)
    print(f"wrote {args.out}: {table.n_realizations} realizations")
    return 0


def cmd_capacity(args) -> int:
    cs = fileio.read_channel_file(args.inp)
    noise, mask = _noise_mask(args, None)
    noise = noise or NoiseModel()
    mask = mask or PsdMask()
    rates = np.array(
        _parallel_map(
            lambda i: capacity_one(cs.responses[i], cs.grid, noise, mask),
            range(len(cs)),
            args.threads,
        )
    )
    fileio.write_capacity_csv(args.out, rates)
    if args.ccdf_out:
        fileio.write_ccdf_csv(args.ccdf_out, CapacityResult(rates).ccdf)
    print(f"wrote {args.out}: {rates.size} realizations")
    return 0


# ---------------------------------------------------------------- parser


def _add_generation_flags(sub, require_n: bool):
    sub.add_argument("--params", help=f"parameter file (default: ${PARAMS_ENV} "
                     "or built-in model constants)")
    sub.add_argument("--scheme", choices=("siso", "2x2", "2x3"),
                     help="port scheme (default: parameter-file grid)")
    sub.add_argument("--n", type=int, required=require_n,
                     help="number of realizations")
    sub.add_argument("--seed", type=int, required=require_n, help="random seed")
    sub.add_argument("--decimate", type=int, default=1, metavar="K",
                     help="keep every K-th frequency sample")
    sub.add_argument("--mode", choices=("synthetic", "copula"), default="synthetic")
    sub.add_argument("--copula-matrices", metavar="NPZ",
                     help="empirical matrix archive for --mode copula")
    sub.add_argument("--no-cm-exp", action="store_true",
                     help="disable the common-mode exponential lag refinement")
    sub.add_argument("--no-cache", action="store_true",
                     help="skip the covariance square-root disk cache")


def _add_common_flags(sub):
    sub.add_argument("--threads", type=int, default=1,
                     help="cap for the package's own worker pool")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plcmimo",
        description="Statistical MIMO power-line channel toolkit",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("generate", help="draw channel realizations")
    _add_generation_flags(gen, require_n=True)
    _add_common_flags(gen)
    gen.add_argument("--out", required=True, help="output channel CSV")
    gen.set_defaults(func=cmd_generate)

    cha = commands.add_parser("characterize", help="fit model parameters to a set")
    cha.add_argument("--in", dest="inp", required=True, help="input channel CSV")
    cha.add_argument("--out", required=True, help="output parameter file")
    cha.add_argument("--robust-slopes", action="store_true",
                     help="robust (re-weighted) phase-slope regression")
    _add_common_flags(cha)
    cha.set_defaults(func=cmd_characterize)

    val = commands.add_parser("validate", help="compare metrics against targets")
    val.add_argument("--in", dest="inp", help="input channel CSV (or generate)")
    _add_generation_flags(val, require_n=False)
    _add_common_flags(val)
    val.add_argument("--targets", required=True,
                     choices=tuple(TARGETS) + ("custom",))
    val.add_argument("--target-file", help="key=value targets for --targets custom")
    val.add_argument("--noise", help="noise file; adds capacity rows")
    val.add_argument("--mask", help="mask file; adds capacity rows")
    val.add_argument("--report", help="also write the report as key=value text")
    val.set_defaults(func=cmd_validate)

    met = commands.add_parser("metrics", help="per-realization metric table")
    met.add_argument("--in", dest="inp", required=True, help="input channel CSV")
    met.add_argument("--out", required=True, help="output metrics CSV")
    _add_common_flags(met)
    met.set_defaults(func=cmd_metrics)

    cap = commands.add_parser("capacity", help="water-filling capacity and CCDF")
    cap.add_argument("--in", dest="inp", required=True, help="input channel CSV")
    cap.add_argument("--out", required=True, help="output capacity CSV")
    cap.add_argument("--ccdf-out", help="also write the CCDF table")
    cap.add_argument("--noise", help="noise description file")
    cap.add_argument("--mask", help="transmit PSD mask file")
    _add_common_flags(cap)
    cap.set_defaults(func=cmd_capacity)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        with threadpool_limits(limits=1):
            return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAMS
    except InsufficientDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except NumericalError as exc:
        report = getattr(exc, "repair_report", None)
        extra = f" ({repair_summary(report)})" if report is not None else ""
        print(f"error: numerical failure: {exc}{extra}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PlcMimoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

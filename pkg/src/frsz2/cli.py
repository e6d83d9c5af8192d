"""Command-line harness: solve, codec, bench, analyze, gen-convdiff.

Exit status: 0 success or converged, 2 solver did not converge, 1 usage or
input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import analyze as analyze_mod
from . import codec
from .basis import StorageFormat
from .sparsela import (
    CsrMatrix,
    MatrixMarketError,
    banded_row_factors,
    gen_convdiff,
    generate_problem,
    parse_matrix_market,
    scale_rows,
    write_matrix_market,
)
from .solver import GmresConfig, SolverBreakdown, gmres_solve

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2

log = logging.getLogger("frsz2")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for non-convergence
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


@dataclass
class RunRecord:
    matrix: str
    storage_format: str
    target_rrn: float
    converged: bool
    iterations: int
    restarts: int
    final_rrn: float
    wall_seconds: list[float] = field(default_factory=list)
    history: list[tuple[int, float, int]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)


# ---------------------------------------------------------------------------
# helpers


def _load_matrix(args) -> tuple[CsrMatrix, str]:
    if args.matrix:
        path = Path(args.matrix)
        with open(path, encoding="utf-8") as fh:
            a = parse_matrix_market(fh)
        name = path.stem
    else:
        nx = args.gen_convdiff
        ny = args.ny or nx
        a = gen_convdiff(nx, ny, args.peclet)
        name = f"convdiff_{nx}x{ny}_pe{args.peclet:g}"
        if args.row_bands:
            a = scale_rows(a, banded_row_factors(nx, ny, args.row_bands, args.row_span))
            name += f"_bands{args.row_bands}_span{args.row_span:g}"
    return a, name


def _read_raw(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) % 8:
        raise UsageError(f"{path}: size {len(data)} is not a multiple of 8 bytes")
    return np.frombuffer(data, dtype="<f8").astype(np.float64)


def _write_residuals(path: Path, history) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "rrn", "explicit"])
        for rec in history:
            w.writerow([rec.iteration, repr(float(rec.rrn)), int(rec.explicit)])


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args) -> int:
    fmt = StorageFormat.parse(args.format)
    a, name = _load_matrix(args)
    if a.n_rows != a.n_cols:
        raise UsageError(f"matrix {name} is not square ({a.n_rows}x{a.n_cols})")
    b, _ = generate_problem(a)
    cfg = GmresConfig(target_rrn=args.target_rrn, restart=args.restart,
                      max_total_iterations=args.max_iters, eta=args.eta, storage_format=fmt)
    walls = []
    result = None
    for _ in range(args.repeat):
        result = gmres_solve(a, b, None, cfg)
        walls.append(result.elapsed)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_residuals(out_dir / "residuals.csv", result.residual_history)
    record = RunRecord(
        name, fmt.name, args.target_rrn, result.converged, result.total_iterations,
        result.restarts, result.final_rrn, walls,
        [(r.iteration, r.rrn, int(r.explicit)) for r in result.residual_history],
    )
    if args.record:
        Path(args.record).write_text(record.to_json() + "\n", encoding="utf-8")
    status = "converged" if result.converged else "not-converged"
    print(
        f"matrix={name} n={a.n_rows} nnz={a.nnz} format={fmt.name} target_rrn={args.target_rrn:.3e} "
        f"status={status} iterations={result.total_iterations} restarts={result.restarts} "
        f"final_rrn={result.final_rrn:.6e} wall_mean={statistics.fmean(walls):.4f}s wall_min={min(walls):.4f}s"
    )
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_codec(args) -> int:
    if args.action == "compress":
        values = _read_raw(args.input)
        cv = codec.compress(values, codec.Frsz2Params(args.block_size, args.bit_length))
        Path(args.output).write_bytes(codec.to_bytes(cv))
        print(f"n={cv.n} bytes={cv.nbytes} header={codec.HEADER_BYTES}")
    elif args.action == "decompress":
        cv = codec.from_bytes(Path(args.input).read_bytes())
        Path(args.output).write_bytes(codec.decompress(cv).astype("<f8").tobytes())
        print(f"n={cv.n} raw_bytes={cv.n * 8}")
    else:
        values = _read_raw(args.input)
        params = codec.Frsz2Params(args.block_size, args.bit_length)
        cv = codec.compress(values, params)
        back = codec.decompress(codec.from_bytes(codec.to_bytes(cv)))
        err = np.abs(values - back)
        bounds = np.array([codec.max_abs_error_bound(int(e), params.bit_length) for e in cv.exponents])
        per_value_bound = np.repeat(bounds, params.block_size)[: cv.n]
        within = bool(np.all(err < per_value_bound)) if cv.n else True
        print(f"n={cv.n} block_size={params.block_size} bit_length={params.bit_length}")
        print(f"max_abs_error={float(err.max(initial=0.0))!r}")
        print(f"max_error_bound={float(bounds.max(initial=0.0))!r} within_block_bounds={within}")
        print(f"compressed_bytes={cv.nbytes} header_bytes={codec.HEADER_BYTES} raw_bytes={cv.n * 8}")
        if not within:
            return EXIT_ERROR
    return EXIT_OK


def cmd_bench(args) -> int:
    from . import bench  # numba import is slow; only pay for it here

    formats = [f.strip() for f in args.formats.split(",") if f.strip()]
    for f in formats:
        StorageFormat.parse(f)
    intensities = [int(x) for x in args.intensities.split(",")]
    if any(i < 1 for i in intensities):
        raise UsageError("intensities must be >= 1")
    values = np.random.default_rng(args.seed).uniform(-1.0, 1.0, args.elements)
    results = bench.bench(values, formats, intensities, args.trials)

    out = open(args.csv, "w", encoding="utf-8", newline="") if args.csv else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["format", "ops_per_value", "elements", "seconds", "stored_bytes",
                    "stored_gbs", "logical_gbs", "gflops"])
        for r in results:
            w.writerow([r.format, r.intensity, r.n, f"{r.seconds:.6f}", r.stored_bytes,
                        f"{r.stored_gbs:.4f}", f"{r.logical_gbs:.4f}", f"{r.gflops:.4f}"])
    finally:
        if out is not sys.stdout:
            out.close()

    by_key = {(r.format, r.intensity): r for r in results}
    for fmt in formats:
        name = StorageFormat.parse(fmt).name
        for i in intensities:
            base = by_key.get(("f64", i))
            r = by_key.get((name, i))
            if base and r and name != "f64":
                print(f"# {name} / f64 logical throughput at ops={i}: {r.logical_gbs / base.logical_gbs:.1%}",
                      file=sys.stderr)
    return EXIT_OK


def cmd_analyze(args) -> int:
    path = Path(args.input)
    head = path.read_bytes()[:14]
    if head.lower().startswith(b"%%matrixmarket"):
        with open(path, encoding="utf-8") as fh:
            values = parse_matrix_market(fh).values
    else:
        values = _read_raw(path)
    h = analyze_mod.histograms(values, args.bins)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "value_hist.csv", "w", encoding="utf-8", newline="") as fh:
        analyze_mod.write_value_csv(h, fh)
    with open(out_dir / "exponent_hist.csv", "w", encoding="utf-8", newline="") as fh:
        analyze_mod.write_exponent_csv(h, fh)
    print(f"values={values.size} nonzero={int(h.exponent_counts.sum())} "
          f"min_exponent={h.min_exponent} max_exponent={h.max_exponent}")
    return EXIT_OK


def cmd_gen_convdiff(args) -> int:
    ny = args.ny or args.nx
    a = gen_convdiff(args.nx, ny, args.peclet)
    comment = f"upwind convection-diffusion nx={args.nx} ny={ny} peclet={args.peclet!r}"
    if args.row_bands:
        a = scale_rows(a, banded_row_factors(args.nx, ny, args.row_bands, args.row_span))
        comment += f" row_bands={args.row_bands} row_span={args.row_span!r}"
    with open(args.output, "w", encoding="utf-8") as fh:
        write_matrix_market(a, fh, comment)
    print(f"wrote {args.output}: n={a.n_rows} nnz={a.nnz}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ny", type=int, default=None, help="grid rows (default: same as nx)")
    p.add_argument("--peclet", type=float, default=1.0)
    p.add_argument("--row-bands", type=int, default=0,
                   help="scale horizontal grid strips by factors from 1 down to 10**-span")
    p.add_argument("--row-span", type=float, default=12.0, help="decades spanned by --row-bands")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="frsz2", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="run CB-GMRES on a MatrixMarket or generated system")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--matrix", help="MatrixMarket coordinate file")
    src.add_argument("--gen-convdiff", type=int, metavar="NX", help="built-in convection-diffusion grid")
    _add_grid_flags(p)
    p.add_argument("--format", default="f64", help="f64, f32, f16, frsz2-16, frsz2-21, frsz2-32")
    p.add_argument("--target-rrn", type=float, default=1e-10)
    p.add_argument("--restart", type=int, default=100)
    p.add_argument("--max-iters", type=int, default=20000)
    p.add_argument("--eta", type=float, default=GmresConfig.eta)
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--out-dir", default=".", help="directory for residuals.csv")
    p.add_argument("--record", help="write the run record as JSON here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("codec", help="FRSZ2 container utilities")
    p.add_argument("action", choices=("compress", "decompress", "roundtrip"))
    p.add_argument("input")
    p.add_argument("output", nargs="?")
    p.add_argument("--bit-length", "-l", type=int, default=32)
    p.add_argument("--block-size", type=int, default=32)
    p.set_defaults(func=cmd_codec)

    p = sub.add_parser("bench", help="read-throughput roofline sweep")
    p.add_argument("--elements", type=int, default=1 << 24)
    p.add_argument("--formats", default="f64,f32,f16,frsz2-16,frsz2-21,frsz2-32")
    p.add_argument("--intensities", default=",".join(str(i) for i in (1, 2, 4, 8, 16, 32, 64, 128)))
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("analyze", help="value and exponent histograms")
    p.add_argument("input", help="MatrixMarket file or raw little-endian float64 vector")
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gen-convdiff", help="write a convection-diffusion matrix")
    p.add_argument("--nx", type=int, required=True)
    _add_grid_flags(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen_convdiff)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "codec" and args.action != "roundtrip" and not args.output:
            parser.error(f"codec {args.action} needs an output path")
        if getattr(args, "repeat", 1) < 1:
            parser.error("--repeat must be >= 1")
    except SystemExit as exc:  # argparse exits on --help and on usage errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, MatrixMarketError, codec.CodecError, SolverBreakdown, ValueError, OSError) as exc:
        print(f"frsz2: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

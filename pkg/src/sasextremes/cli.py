"""Command-line driver for the samplers and the verification experiments.

Exit codes: 0 when every configured check passes, 1 when checks fail or a
sampling error occurs at run time, 2 for usage and configuration errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from . import verify
from .field_sim import RealBox, sample_field, sup_measure
from .limit_law import eval_limit_field, eval_sup_measure, sample_limit_measure
from .regen_sets import ell_beta, max_intersection_count
from .return_laws import ParameterError, normalizer_bn
from .stable_core import c_alpha, replicate_rng
from .verify import ConfigError, ExperimentConfig, ExperimentResult, PartialResult

__all__ = ["run", "main", "build_parser", "write_atomic", "svg_line_chart", "ENV_THREADS", "ENV_OUT"]

ENV_THREADS = "SASEXTREMES_THREADS"
ENV_OUT = "SASEXTREMES_OUT"
_SIM_FIELD, _SIM_LIMIT = 11, 12


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise UsageError(f"{self.prog}: error: {message}")


def write_atomic(path: Path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file in the same directory."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def svg_line_chart(series: dict[str, list[tuple[float, float]]], xlabel: str, ylabel: str, logx: bool = True) -> str:
    """A minimal SVG line chart; one polyline per named series."""
    width, height, pad = 480, 320, 48
    pts = [p for s in series.values() for p in s]
    if not pts:
        return '<svg xmlns="http://www.w3.org/2000/svg" width="480" height="320"/>\n'
    fx = (lambda x: math.log10(x)) if logx else (lambda x: x)
    xs = [fx(x) for x, _ in pts]
    ys = [y for _, y in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = 0.0, max(max(ys), 1e-12) * 1.1
    x1 = x1 if x1 > x0 else x0 + 1.0

    def sx(x: float) -> float:
        return pad + (fx(x) - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y: float) -> float:
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle">{xlabel}</text>',
        f'<text x="14" y="{height / 2}" transform="rotate(-90 14 {height / 2})" text-anchor="middle">{ylabel}</text>',
        f'<text x="{pad - 4}" y="{sy(y1) + 4:.1f}" text-anchor="end">{y1:.3g}</text>',
        f'<text x="{pad - 4}" y="{sy(0.0) + 4:.1f}" text-anchor="end">0</text>',
    ]
    for k, (name, s) in enumerate(sorted(series.items())):
        color = colors[k % len(colors)]
        path = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in sorted(s))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        out.append(f'<text x="{width - pad}" y="{pad + 14 * k}" fill="{color}" text-anchor="end">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(float(x)) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2**64)")
    return value


def _threads(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"threads must be an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    shared = _Parser(add_help=False)
    shared.add_argument("--config", type=Path, help="TOML or JSON file with ExperimentConfig fields")
    shared.add_argument("--seed", type=_seed, help="master seed (default: fresh OS entropy, echoed in outputs)")
    shared.add_argument("--out", type=Path, help=f"output directory (env {ENV_OUT}, default ./out)")
    shared.add_argument("--threads", type=_threads, help=f"worker processes (env {ENV_THREADS}, default 1)")
    shared.add_argument("--format", choices=("json", "csv"), default="json")
    shared.add_argument("--alpha", type=float, help="override the stability index")
    shared.add_argument("--betas", type=_floats, help="override the memory parameters, e.g. 0.4,0.4")
    shared.add_argument("--reps", type=int, help="override the replicate count")

    parser = _Parser(prog="sasextremes", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate-field", parents=[shared], help="sample the field and dump its nonzero points")
    p.add_argument("--n", type=_ints, help="box size per coordinate (default: largest ladder rung)")

    p = sub.add_parser("simulate-limit", parents=[shared], help="sample the limit sup measure")
    p.add_argument("--grid", type=_floats, help="flattened grid points for W(t), d values per point")

    p = sub.add_parser("verify", parents=[shared], help="convergence experiments against the limit")
    p.add_argument("--test", choices=("supmeasure", "abs", "fdd", "abs-fdd", "all"), default="supmeasure")
    p.add_argument("--ladder", type=_ints, help="override the box-size ladder")
    p.add_argument("--svg", action="store_true", help="also write a KS-vs-n chart")

    p = sub.add_parser("intersections", parents=[shared], help="intersection frequency of shifted product sets")
    p.add_argument("--svg", action="store_true", help="also write a frequency-vs-resolution chart")

    sub.add_parser("marginal", parents=[shared], help="characteristic function and tail of one field value")

    p = sub.add_parser("info", parents=[shared], help="constants and regime verdict")
    p.add_argument("--n", type=_ints, help="also print b_n for these box sizes")
    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    data: dict = {}
    if args.config is not None:
        data = verify.read_config_file(args.config)
        ExperimentConfig.from_dict(data)
    has_seed = "seed" in data
    for key in ("alpha", "betas", "reps"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if getattr(args, "ladder", None) is not None:
        data["ladder"] = args.ladder
    if args.reps is not None:
        data["set_reps"] = data["marginal_reps"] = args.reps
    if args.betas is not None and "boxes" not in data and args.config is None:
        d = len(args.betas)
        data["boxes"] = (((0.0,) * d, (1.0,) * d),)
        data["grid"] = ((0.5,) * d, (1.0,) * d)
    threads = args.threads or os.environ.get(ENV_THREADS)
    if threads is not None:
        try:
            data["threads"] = int(threads)
        except ValueError:
            raise ConfigError(f"{ENV_THREADS} must be an integer") from None
    if args.seed is not None:
        data["seed"] = args.seed
        has_seed = True
    elif not has_seed:
        data["seed"] = int(np.random.SeedSequence().entropy % 2**64)
    return ExperimentConfig.from_dict(data).validate()


def _out_dir(args: argparse.Namespace) -> Path:
    if args.out is not None:
        return args.out
    return Path(os.environ.get(ENV_OUT, "out"))


def _provenance(config: ExperimentConfig) -> dict:
    return {"config_hash": config.digest(), "seed": config.seed, "version": verify.VERSION, "schema": verify.SCHEMA_VERSION}


def _header_line(items: dict) -> str:
    return "# " + " ".join(f"{k}={v}" for k, v in items.items()) + "\n"


def _fmt_vec(values) -> str:
    return ";".join(f"{v:g}" for v in values)


def _write_result(result: ExperimentResult, out: Path, fmt: str, svg: bool, x_label: str = "n") -> Path:
    base = out / result.test
    if fmt == "json":
        path = base.with_suffix(".json")
        write_atomic(path, result.to_json() + "\n")
    else:
        path = base.with_suffix(".csv")
        write_atomic(path, result.to_csv())
    stat = "frequency" if result.test == "intersection_dichotomy" else "ks"
    series: dict[str, list[tuple[float, float]]] = {}
    for row in result.rows:
        if row["statistic"] != stat:
            continue
        name = f"m={row['m']}" if "m" in row else str(row["box"])
        x = row.get("delta", row["n"])
        series.setdefault(name, []).append((float(x), row["value"]))
    lines = [f"# config_hash={result.config_hash} seed={result.seed} version={result.version}\n", f"series,{x_label},{stat}\n"]
    for name in sorted(series):
        for x, y in sorted(series[name]):
            lines.append(f"\"{name}\",{x!r},{y!r}\n")
    write_atomic(out / f"{result.test}_plot.csv", "".join(lines))
    if svg:
        write_atomic(out / f"{result.test}_plot.svg", svg_line_chart(series, x_label, stat))
    return path


def _report(result: ExperimentResult) -> None:
    for name, ok in sorted(result.checks.items()):
        print(f"{'PASS' if ok else 'FAIL'} {result.test} {name}")
    for note in result.notes:
        print(f"note: {note}")


def _cmd_simulate_field(args, config: ExperimentConfig) -> int:
    n = args.n or (config.ladder[-1],) * config.dim
    if len(n) == 1:
        n = n * config.dim
    rng = replicate_rng(config.seed, _SIM_FIELD, 0)
    sample = sample_field(config.laws(), n, config.alpha, config.ell_field, rng)
    pts, vals = sample.nonzero_points()
    keep = vals != 0
    pts, vals = pts[keep], vals[keep]
    meta = {
        "n": _fmt_vec(n), "alpha": f"{config.alpha:g}", "beta": _fmt_vec(config.betas),
        "b_n": repr(sample.bn), "ell": sample.ell, "law": config.law, **_provenance(config),
    }
    out = _out_dir(args)
    if args.format == "csv":
        cols = ",".join(f"k{i + 1}" for i in range(sample.dim)) + ",value\n"
        body = "".join(",".join(map(str, p)) + f",{v!r}\n" for p, v in zip(pts.tolist(), vals.tolist()))
        path = out / "field.csv"
        write_atomic(path, _header_line(meta) + cols + body)
    else:
        doc = {**meta, "points": pts.tolist(), "values": vals.tolist(),
               "sup_unit_box": sup_measure(sample, RealBox.unit(sample.dim)) / sample.bn}
        path = out / "field.json"
        write_atomic(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")
    print(f"wrote {len(vals)} nonzero points to {path} (seed {config.seed})")
    return 0


def _cmd_simulate_limit(args, config: ExperimentConfig) -> int:
    rng = replicate_rng(config.seed, _SIM_LIMIT, 0)
    sample = sample_limit_measure(config.alpha, config.betas, config.ell_limit, config.delta, rng)
    grid = np.array(config.grid)
    if args.grid is not None:
        if len(args.grid) % sample.dim:
            raise ConfigError(f"--grid needs a multiple of {sample.dim} values")
        grid = np.array(args.grid).reshape(-1, sample.dim)
    w = eval_limit_field(sample, grid)
    eta = eval_sup_measure(sample, RealBox.unit(sample.dim))
    meta = {"alpha": f"{config.alpha:g}", "beta": _fmt_vec(config.betas), "ell": sample.ell,
            "delta": repr(sample.delta), "eta_unit": repr(eta), **_provenance(config)}
    out = _out_dir(args)
    if args.format == "csv":
        cols = ",".join(f"t{i + 1}" for i in range(sample.dim)) + ",W\n"
        body = "".join(",".join(map(repr, t)) + f",{v!r}\n" for t, v in zip(grid.tolist(), w.tolist()))
        path = out / "limit.csv"
        write_atomic(path, _header_line(meta) + cols + body)
    else:
        doc = {**meta, "weights": sample.weights.tolist(), "shifts": sample.shifts.tolist(),
               "grid": grid.tolist(), "W": w.tolist()}
        path = out / "limit.json"
        write_atomic(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")
    print(f"eta([0,1]^d) = {eta:.6g}; wrote {path} (seed {config.seed})")
    return 0


def _run_experiments(args, config: ExperimentConfig, names: Sequence[str], x_label: str = "n") -> int:
    out = _out_dir(args)
    status = 0
    for name in names:
        try:
            if name == "abs-fdd":
                result = verify.test_partial_maxima_fdd(config, absolute=True)
            else:
                result = verify.EXPERIMENTS[name](config)
        except PartialResult as exc:
            path = _write_result(exc.result, out, args.format, getattr(args, "svg", False), x_label)
            print(f"interrupted; partial results in {path}", file=sys.stderr)
            return 1
        path = _write_result(result, out, args.format, getattr(args, "svg", False), x_label)
        _report(result)
        print(f"wrote {path} (seed {config.seed})")
        if not result.passed:
            status = 1
    return status


def _cmd_verify(args, config: ExperimentConfig) -> int:
    names = ("supmeasure", "abs", "fdd", "abs-fdd") if args.test == "all" else (args.test,)
    return _run_experiments(args, config, names)


def _cmd_info(args, config: ExperimentConfig) -> int:
    ca = c_alpha(config.alpha)
    ell = ell_beta(config.betas)
    frechet = min(config.betas) <= 0.5
    print(f"alpha = {config.alpha:g}")
    print(f"C_alpha = {ca:.15g}" + (" (= 2/pi)" if config.alpha == 1.0 else ""))
    print(f"betas = {_fmt_vec(config.betas)}")
    print(f"ell(beta) = {ell:.6g}; largest intersecting count = {max_intersection_count(config.betas)}")
    if frechet:
        print(f"regime: Frechet (some beta <= 1/2); sup over [0,1]^d has CDF exp(-{ca / 2:.6g} x^-{config.alpha:g})")
    else:
        print("regime: non-Frechet (all beta > 1/2); limit law from the sup-measure sampler")
    for n in args.n or ():
        size = (n,) * config.dim
        print(f"b_n at n={n}: {normalizer_bn(config.laws(), size, config.alpha):.10g}")
    return 0


_COMMANDS = {
    "simulate-field": _cmd_simulate_field,
    "simulate-limit": _cmd_simulate_limit,
    "verify": _cmd_verify,
    "intersections": lambda a, c: _run_experiments(a, c, ("intersections",), x_label="delta"),
    "marginal": lambda a, c: _run_experiments(a, c, ("marginal",), x_label="theta"),
    "info": _cmd_info,
}


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        config = _load_config(args)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1
    except (ParameterError, ValueError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())

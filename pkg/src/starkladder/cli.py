"""Command-line front end.

Every output starts with a header giving the tool version, a SHA-256 hash of
the canonical run configuration and the grid parameters. CSV files carry it
as ``#`` comment lines, JSON output as a top-level ``"header"`` object.
Numbers are printed with a fixed number of digits, so identical
configurations give identical bytes.

Exit codes: 0 success, 1 computation failed, 2 invalid input.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import os
import sys
import warnings
from contextlib import contextmanager

import numpy as np

from . import __version__
from .bands import BandError, band_table, branch_table, compute_edges
from .bloch import BlochError, periodic_part_on_grid
from .cmr import build_coupling_table
from .hill import HillSolverError
from .potential import PeriodicPotential, PotentialError, free_potential, load_potential
from .stark import GridParams, StarkError, ladder, resonances

THREADS_ENV = "STARKLADDER_THREADS"
EXIT_OK, EXIT_COMPUTE, EXIT_INPUT = 0, 1, 2

log = logging.getLogger("starkladder")


class InputError(ValueError):
    """Command-line values that fail validation before any computation."""


# ---------------------------------------------------------------------------
# formatting

def _num(x: float, digits: int = 12) -> str:
    x = float(x)
    if x == 0.0:
        return "0"  # also folds -0.0
    return f"{x:.{digits}e}"


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _header(config: dict, grid: dict) -> dict:
    return {"tool": "starkladder", "version": __version__, "config_sha256": _config_hash(config),
            "grid": grid}


def _csv(header: dict, columns: list[str], rows, digits: int = 12) -> str:
    buf = io.StringIO()
    buf.write(f"# tool: starkladder {header['version']}\n")
    buf.write(f"# config_sha256: {header['config_sha256']}\n")
    buf.write(f"# grid: {json.dumps(header['grid'], sort_keys=True)}\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(str(v) if isinstance(v, (int, np.integer, str, bool)) else _num(v, digits)
                           for v in row) + "\n")
    return buf.getvalue()


def _rounded(obj, digits: int):
    if isinstance(obj, float):
        return float(_num(obj, digits))
    if isinstance(obj, dict):
        return {k: _rounded(v, digits) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_rounded(v, digits) for v in obj]
    return obj


def _emit(text: str, path: str | None) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# threads

def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"{THREADS_ENV}={raw!r} is not an integer") from None
    if n < 1:
        raise InputError(f"{THREADS_ENV} must be >= 1")
    return n


@contextmanager
def _thread_limit(n: int):
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def read_potential(spec: str) -> PeriodicPotential:
    """Potential JSON file, or ``free:A`` for V = 0 with period A (files may not be constant)."""
    if spec.startswith("free:"):
        try:
            period = float(spec[5:])
        except ValueError:
            raise InputError(f"{spec!r}: period after 'free:' is not a number") from None
        if not (np.isfinite(period) and period > 0):
            raise InputError(f"{spec!r}: period must be positive")
        return free_potential(period)
    return load_potential(spec)


# ---------------------------------------------------------------------------
# commands

def _base_config(args, V: PeriodicPotential) -> dict:
    return {"command": args.command, "potential": V.to_json()}


def _positive(name: str, value, strict: bool = True):
    if value is None:
        return
    if not np.isfinite(value) or (value <= 0 if strict else value < 0):
        raise InputError(f"--{name} must be {'positive' if strict else 'non-negative'}, got {value}")


def cmd_bands(args, V) -> str:
    if args.n_max < 1 or args.k_points < 2:
        raise InputError("--n-max must be >= 1 and --k-points >= 2")
    B = compute_edges(V, args.n_max)
    grid = {"n_max": args.n_max, "k_points": args.k_points}
    config = {**_base_config(args, V), **grid}
    rows = [(int(n), k, E) for n, k, E in band_table(B, args.k_points)]
    return _csv(_header(config, grid), ["n", "k", "E"], rows)


def cmd_branch_points(args, V) -> str:
    if args.n_max < 1:
        raise InputError("--n-max must be >= 1")
    B = compute_edges(V, args.n_max)
    grid = {"n_max": args.n_max}
    config = {**_base_config(args, V), **grid}
    rows = [(int(n), e, kap, B.gaps[int(n) - 1][2]) for n, e, kap in branch_table(B)]
    return _csv(_header(config, grid), ["n", "E_star", "kappa", "gap"], rows)


def cmd_bloch(args, V) -> str:
    if args.samples < 4:
        raise InputError("--samples must be >= 4")
    if not np.isfinite(args.p):
        raise InputError("--p must be finite")
    n_max = max(2, int(abs(args.p) / (V.b / 2)) + 2)
    B = compute_edges(V, n_max)
    try:
        u, _ = periodic_part_on_grid(V, B, args.p, args.samples)
    except BlochError as exc:
        raise InputError(f"--p: {exc}") from None
    x = np.arange(args.samples) * (V.period / args.samples)
    grid = {"p": float(args.p), "samples": args.samples}
    config = {**_base_config(args, V), **grid}
    rows = [(xi, ui.real, ui.imag) for xi, ui in zip(x, u)]
    return _csv(_header(config, grid), ["x", "Re_u", "Im_u"], rows)


def cmd_coupling(args, V) -> str:
    if args.j_max < 1:
        raise InputError("--j-max must be >= 1")
    if args.per_half_cell < 1:
        raise InputError("--per-half-cell must be >= 1")
    _positive("p-max", args.p_max)
    half = V.b / 2
    cells = int(round(args.p_max * 2))
    if cells < 2 * args.j_max + 1 or abs(cells - args.p_max * 2) > 1e-9:
        raise InputError("--p-max (units of b) must be a multiple of 1/2 and at least j_max + 1/2")
    h = half / args.per_half_cell
    p = -cells * half + (np.arange(2 * cells * args.per_half_cell) + 0.5) * h
    B = compute_edges(V, cells + 2)
    T = build_coupling_table(V, B, p, args.j_max)
    grid = {"p_max_b": float(args.p_max), "per_half_cell": args.per_half_cell, "j_max": args.j_max,
            "quadrature_nodes": int(T.nodes)}
    config = {**_base_config(args, V), "p_max_b": float(args.p_max), "per_half_cell": args.per_half_cell,
              "j_max": args.j_max}
    return _csv(_header(config, grid), ["j", "p", "Re_C", "Im_C"], T.rows(), digits=10)


def cmd_ladder(args, V) -> str:
    _positive("F", args.F)
    if args.j_lo > args.j_hi:
        raise InputError("--j-lo must not exceed --j-hi")
    B = compute_edges(V, 2)
    L = ladder(V, B, None, args.F, (args.j_lo, args.j_hi))
    grid = {"j_window": [args.j_lo, args.j_hi]}
    config = {**_base_config(args, V), "F": float(args.F), **grid}
    rows = [(int(j), E, L.spacing) for j, E in zip(L.indices, L.eigenvalues)]
    return _csv(_header(config, grid), ["j", "E", "spacing"], rows)


def cmd_resonances(args, V) -> str:
    _positive("F", args.F)
    theta_im = -0.5 * V.R if args.theta_im is None else args.theta_im
    if theta_im == 0:
        raise InputError("--theta-im must be nonzero: resonances need the distortion")
    if not -V.R < theta_im < 0:
        raise InputError(f"--theta-im must lie in (-R, 0) with R = {V.R}")
    if args.cells < 0:
        raise InputError("--cells must be >= 0")
    params = GridParams(p_max=None if args.p_max is None else args.p_max * V.b, nodes=args.nodes,
                        h_max=args.h_max, j_max=args.j_max, absorber=args.absorber)
    if params.nodes < 2 or params.j_max < 1:
        raise InputError("--nodes must be >= 2 and --j-max >= 1")
    _positive("h-max", args.h_max)
    _positive("p-max", args.p_max)
    _positive("F-N", args.F_N)
    if args.p_max is not None and (abs(args.p_max * 2 - round(args.p_max * 2)) > 1e-9
                                   or args.p_max < params.j_max + 0.5):
        raise InputError("--p-max (units of b) must be a multiple of 1/2 and at least j_max + 1/2")
    params = params.for_field(args.F)
    B = compute_edges(V, int(round(params.resolved_p_max(V.b) / (V.b / 2))) + 2)
    # the solver reports the F_N warning through the logger as well
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        R = resonances(V, B, None, args.F, 1j * theta_im, params, cells=args.cells, F_N=args.F_N,
                       refine=not args.no_refine)
    grid = params.to_dict(V.b)
    config = {**_base_config(args, V), "F": float(args.F), "theta_im": float(theta_im), "cells": args.cells,
              "refine": not args.no_refine, "F_N": args.F_N, "grid": grid}
    header = _header(config, grid)
    # rounding below the convergence tolerance keeps the bytes stable
    digits = 10
    if args.format == "csv":
        rows = [(r.cell, r.value.real, r.value.imag, r.width, str(r.converged).lower(), r.refinement_delta)
                for r in R.resonances]
        text = _csv(header, ["cell", "re", "im", "width", "converged", "refinement_delta"], rows, digits)
        return text.replace("# grid:", f"# F: {_num(R.F)}\n# theta: {_num(R.theta_used.real)},"
                                       f"{_num(R.theta_used.imag)}\n# grid:", 1)
    body = R.to_dict()
    body["resonances"] = [{k: r[k] for k in ("re", "im", "width", "converged", "refinement_delta", "cell")}
                          for r in body["resonances"]]
    out = {"header": header, **_rounded(body, digits)}
    return json.dumps(out, indent=2, sort_keys=False) + "\n"


COMMANDS = {
    "bands": cmd_bands,
    "branch-points": cmd_branch_points,
    "bloch": cmd_bloch,
    "coupling": cmd_coupling,
    "ladder": cmd_ladder,
    "resonances": cmd_resonances,
}


# ---------------------------------------------------------------------------
# argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="starkladder", description="Bands, Bloch data and Wannier-Stark resonances "
                                                      "of one-dimensional periodic potentials.")
    parser.add_argument("--version", action="version", version=f"starkladder {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("potential", help="potential JSON file, or free:A for V = 0 with period A")
    common.add_argument("-o", "--output", default=None, help="output file (default: stdout)")
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker threads for linear algebra (default: ${THREADS_ENV} or 1)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("bands", parents=[common], help="band functions E_n(k) on a k-grid")
    p.add_argument("--n-max", type=int, default=4)
    p.add_argument("--k-points", type=int, default=51)

    p = sub.add_parser("branch-points", parents=[common], help="Kohn branch points and gap widths")
    p.add_argument("--n-max", type=int, default=4)

    p = sub.add_parser("bloch", parents=[common], help="periodic part u(x, p) on one cell")
    p.add_argument("--p", type=float, required=True, help="point of the cut p-line")
    p.add_argument("--samples", type=int, default=64)

    p = sub.add_parser("coupling", parents=[common], help="coupling coefficients C_j(p)")
    p.add_argument("--j-max", type=int, default=3)
    p.add_argument("--p-max", type=float, default=4.0, help="grid half-length in units of b")
    p.add_argument("--per-half-cell", type=int, default=8)

    p = sub.add_parser("ladder", parents=[common], help="decoupled band-1 ladder")
    p.add_argument("--F", type=float, required=True)
    p.add_argument("--j-lo", type=int, default=-3)
    p.add_argument("--j-hi", type=int, default=3)

    p = sub.add_parser("resonances", parents=[common], help="Wannier-Stark resonances")
    p.add_argument("--F", type=float, required=True)
    p.add_argument("--theta-im", type=float, default=None, help="Im theta (default: -R/2)")
    p.add_argument("--p-max", type=float, default=None, help="Gamma_c truncation in units of b (default 4)")
    p.add_argument("--nodes", type=int, default=GridParams.nodes)
    p.add_argument("--h-max", type=float, default=None, help="longest element in units of b (default min(1/20, F/2))")
    p.add_argument("--j-max", type=int, default=GridParams.j_max)
    p.add_argument("--absorber", type=float, default=GridParams.absorber)
    p.add_argument("--cells", type=int, default=1)
    p.add_argument("--F-N", dest="F_N", type=float, default=None, help="smallness threshold for F")
    p.add_argument("--no-refine", action="store_true", help="skip the refinement runs")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(format="starkladder: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        log.setLevel(logging.INFO if args.verbose else logging.WARNING)
        threads = args.threads if args.threads is not None else _default_threads()
        if threads < 1:
            raise InputError("--threads must be >= 1")
        V = read_potential(args.potential)
    except (InputError, PotentialError) as exc:
        print(f"starkladder: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        with _thread_limit(threads):
            text = COMMANDS[args.command](args, V)
        _emit(text, args.output)
    except (InputError, PotentialError) as exc:
        print(f"starkladder: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (StarkError, BandError, BlochError, HillSolverError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"starkladder: computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except OSError as exc:
        print(f"starkladder: cannot write output: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command line for generating instances, solving them, sweeping grids,
and inspecting the landscape.

Outputs are CSV tables at 17 significant digits with `# ` provenance
headers, plus JSON for structured results. Rerunning a command with the
same seed and parameters reproduces every file byte for byte (the header
records the semantic parameters, not the output location). Exit codes:
0 ok, 2 invalid arguments, 3 a required solve hit its iteration cap,
4 file I/O failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .cdl import (
    CdlObjective,
    ConvProblem,
    build_preconditioner,
    deprecondition,
    synth_cdl,
)
from .landscape import REPORT_CSV_COLUMNS, critical_point_report
from .model import (
    Dictionary,
    FilterBank,
    ObservationSet,
    SpherePoint,
    load_matrix,
    make_filter_bank,
    make_untf,
    sample_bg,
    save_matrix,
    stream,
    synth_odl,
)
from .objectives import OdlObjective, TensorObjective
from .optimize import EscapeConfig, SolveConfig, init_cdl, solve
from .recovery import EPS_CDL, SUCCESS_THRESHOLD, align_shift, recovery_error

__all__ = ["SweepSpec", "main"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NONCONVERGED = 3
EXIT_IO = 4

RAW_SWEEP_COLUMNS = ("n", "m", "p", "theta", "K", "repeat", "seed", "error",
                     "success")
RATE_SWEEP_COLUMNS = ("n", "m", "p", "theta", "K", "repeats", "successes",
                      "rate")
SOLVE_CSV_COLUMNS = ("seed", "rho_e", "best_index", "success")
ALIGN_CSV_COLUMNS = ("filter", "shift", "sign", "aligned_error", "recovered")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_table(path: Path, columns, rows, provenance) -> None:
    lines = [f"# {line}" for line in provenance]
    lines.append(",".join(columns))
    lines.extend(",".join(_fmt(x) for x in row) for row in rows)
    _atomic_write(path, "\n".join(lines) + "\n")


def _provenance(command: str, args: argparse.Namespace,
                skip=("out_dir", "threads", "func", "command",
                      "data_dir", "estimate", "truth")) -> list:
    # semantic parameters only: no paths, no worker counts, no False flags,
    # so a rerun elsewhere yields byte-identical files
    parts = []
    for key in sorted(vars(args)):
        if key in skip:
            continue
        value = getattr(args, key)
        if value is None or value is False:
            continue
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        parts.append(f"--{key.replace('_', '-')}={value}")
    return [f"command: {command} " + " ".join(parts),
            f"seed: {args.seed}",
            f"version: {__version__}"]


def _resolve_threads(args: argparse.Namespace) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("SPHERE4_THREADS")
    return max(1, int(env)) if env else 1


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v != "")
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}") from exc


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v != "")
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a float list: {text!r}") from exc


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args: argparse.Namespace) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance("gen", args)
    meta = {
        "model": args.model,
        "n": args.n,
        "theta": args.theta,
        "p": args.p,
        "seed": args.seed,
        "version": __version__,
    }
    if args.model == "odl":
        if args.m is None:
            raise ValueError("--m is required for the odl model")
        D = make_untf(args.n, args.m, seed=args.seed)
        X = sample_bg(args.m, args.p, args.theta, seed=args.seed)
        Y = synth_odl(D, X)
        save_matrix(out / "dictionary.csv", D.entries, "dictionary",
                    seed=args.seed, provenance=prov)
        save_matrix(out / "codes.csv", X.entries, "codes", seed=args.seed,
                    theta=args.theta, provenance=prov)
        save_matrix(out / "observations.csv", Y.entries, "observations",
                    seed=args.seed, theta=args.theta, provenance=prov)
        meta["m"] = args.m
    else:
        if args.k is None:
            raise ValueError("--k is required for the cdl model")
        bank = make_filter_bank(args.n, args.k, seed=args.seed)
        problem = synth_cdl(bank, args.theta, args.p, seed=args.seed,
                            convention=args.convention)
        save_matrix(out / "filters.csv", bank.filters, "filters",
                    seed=args.seed, provenance=prov)
        save_matrix(out / "codes.csv", problem.codes.entries, "codes",
                    seed=args.seed, theta=args.theta, provenance=prov)
        save_matrix(out / "measurements.csv", problem.measurements.entries,
                    "measurements", seed=args.seed, theta=args.theta,
                    provenance=prov)
        save_matrix(out / "preconditioner.csv",
                    problem.preconditioner.spectrum_weights[None, :],
                    "preconditioner", seed=args.seed, provenance=prov)
        meta["K"] = args.k
        meta["convention"] = args.convention
    _atomic_write(out / "gen.json", json.dumps(meta, indent=2) + "\n")
    print(f"wrote {args.model} instance to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve


def _solve_config(args: argparse.Namespace) -> SolveConfig:
    return SolveConfig(
        method=args.method,
        max_iters=args.max_iters,
        grad_tol=args.grad_tol,
        escape=EscapeConfig() if args.escape else None,
        seed=args.seed,
    )


def _load_gen(data_dir: Path) -> dict:
    meta_path = data_dir / "gen.json"
    if not meta_path.exists():
        raise ValueError(f"no gen.json under {data_dir}")
    return json.loads(meta_path.read_text())


def cmd_solve(args: argparse.Namespace) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance("solve", args)
    cfg = _solve_config(args)

    data = Path(args.data_dir) if args.data_dir else None
    if data is not None:
        meta = _load_gen(data)
        model, theta, seed = meta["model"], meta["theta"], args.seed
    else:
        model, theta, seed = args.model, args.theta, args.seed
        if model is None or theta is None or args.n is None or args.p is None:
            raise ValueError("without --data-dir, solve needs --model, --n, "
                             "--theta and --p")

    if model == "odl":
        if data is not None:
            A, _ = load_matrix(data / "dictionary.csv")
            Y, _ = load_matrix(data / "observations.csv")
            D, obs = Dictionary(A), ObservationSet(Y)
        else:
            if args.m is None:
                raise ValueError("--m is required for the odl model")
            D = make_untf(args.n, args.m, seed=seed)
            obs = synth_odl(D, sample_bg(args.m, args.p, theta, seed=seed))
        if args.init == "data":
            raise ValueError("--init data applies to the cdl model only")
        objective = OdlObjective(obs, theta)
        q0 = SpherePoint.project(stream(seed, "cli-solve").standard_normal(D.n))
        res = solve(objective, q0, cfg)
        outcome = recovery_error(res.q_star, D)
        _write_table(out / "recovery.csv", SOLVE_CSV_COLUMNS,
                     [(seed, outcome.rho_e, outcome.best_index,
                       outcome.success)], prov)
    else:
        if data is not None:
            Yv, _ = load_matrix(data / "measurements.csv")
            Fv, _ = load_matrix(data / "filters.csv")
            bank = FilterBank(Fv)
            obs = ObservationSet(Yv)
            P = build_preconditioner(obs, theta, bank.K,
                                     meta.get("convention", "main_text"))
            problem = ConvProblem(obs, P, theta, filters=bank)
        else:
            if args.k is None:
                raise ValueError("--k is required for the cdl model")
            bank = make_filter_bank(args.n, args.k, seed=seed)
            problem = synth_cdl(bank, theta, args.p, seed=seed,
                                convention=args.convention)
        objective = CdlObjective.from_problem(problem)
        if args.init == "random":
            q0 = SpherePoint.project(
                stream(seed, "cli-solve").standard_normal(problem.n))
        else:
            usable = np.flatnonzero(
                np.linalg.norm(problem.measurements.entries, axis=0) > 0.0)
            if usable.size == 0:
                raise ValueError("every measurement is zero")
            draw = stream(seed, "cli-solve-data").integers(usable.size)
            q0 = init_cdl(problem.measurements, problem.preconditioner,
                          ell=int(usable[draw]))
        res = solve(objective, q0, cfg)
        a_est = deprecondition(res.q_star, problem.preconditioner).coords
        rows = []
        for k in range(problem.filters.K):
            shift, sign, err = align_shift(a_est, problem.filters.filters[k])
            rows.append((k, shift, sign, err, err <= EPS_CDL))
        _write_table(out / "filters_aligned.csv", ALIGN_CSV_COLUMNS, rows, prov)

    _atomic_write(out / "solve_result.json",
                  res.to_json(include_trace=args.emit_trace) + "\n")
    print(f"terminated: {res.termination} after {res.iterations} iterations")
    return EXIT_OK if res.termination != "max_iters" else EXIT_NONCONVERGED


# ---------------------------------------------------------------------------
# sweep


@dataclass(frozen=True)
class SweepSpec:
    """Cartesian grid of instance parameters with repeated trials per cell."""

    n_grid: tuple
    m_grid: tuple
    p_grid: tuple
    theta_grid: tuple
    k_grid: tuple
    repeats: int
    objective: str
    config: SolveConfig
    success_bar: float

    def __post_init__(self) -> None:
        if self.objective not in ("phi_T", "phi_DL", "phi_CDL"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        for name, grid in (("n", self.n_grid), ("m", self.m_grid),
                           ("p", self.p_grid), ("theta", self.theta_grid),
                           ("K", self.k_grid)):
            if len(grid) == 0:
                raise ValueError(f"empty {name} grid")
            if name == "p" and self.objective == "phi_T":
                continue  # p is unused in the sample limit
            if any(v <= 0 for v in grid):
                raise ValueError(f"{name} grid values must be positive")

    def cells(self) -> list:
        return list(itertools.product(self.n_grid, self.m_grid, self.p_grid,
                                      self.theta_grid, self.k_grid))

    def key(self) -> dict:
        return {
            "n_grid": list(self.n_grid),
            "m_grid": list(self.m_grid),
            "p_grid": list(self.p_grid),
            "theta_grid": list(self.theta_grid),
            "k_grid": list(self.k_grid),
            "repeats": self.repeats,
            "objective": self.objective,
            "method": self.config.method,
            "max_iters": self.config.max_iters,
            "grad_tol": self.config.grad_tol,
            "success_bar": self.success_bar,
        }


def _repeat_seed(seed_base: int, cell, repeat: int) -> int:
    n, m, p, theta, K = cell
    rng = stream(seed_base, "sweep", n, m, p, int(round(theta * 1e9)), K,
                 repeat)
    return int(rng.integers(2**62))

def _run_repeat(spec: SweepSpec, cell, repeat: int, seed_base: int):
    n, m, p, theta, K = cell
    rseed = _repeat_seed(seed_base, cell, repeat)
    if spec.objective in ("phi_T", "phi_DL"):
        D = make_untf(n, m, seed=rseed)
        if spec.objective == "phi_T":
            objective = TensorObjective(D)
        else:
            objective = OdlObjective(
                synth_odl(D, sample_bg(m, p, theta, seed=rseed)), theta)
        q0 = SpherePoint.project(stream(rseed, "sweep-q0").standard_normal(n))
        res = solve(objective, q0, spec.config)
        err = recovery_error(res.q_star, D).rho_e
    else:
        bank = make_filter_bank(n, K, seed=rseed)
        problem = synth_cdl(bank, theta, p, seed=rseed)
        usable = np.flatnonzero(
            np.linalg.norm(problem.measurements.entries, axis=0) > 0.0)
        draw = stream(rseed, "sweep-ell").integers(usable.size)
        q0 = init_cdl(problem.measurements, problem.preconditioner,
                      ell=int(usable[draw]))
        res = solve(CdlObjective.from_problem(problem), q0, spec.config)
        a_est = deprecondition(res.q_star, problem.preconditioner).coords
        err = min(align_shift(a_est, bank.filters[k])[2] for k in range(K))
    return (n, m, p, theta, K, repeat, rseed, err, err < spec.success_bar)


def _cell_path(out: Path, index: int) -> Path:
    return out / "cells" / f"cell_{index:04d}.csv"


def cmd_sweep(args: argparse.Namespace) -> int:
    out = Path(args.out_dir)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    if args.success_bar is None:
        args.success_bar = EPS_CDL if args.objective == "phi_CDL" else SUCCESS_THRESHOLD
    spec = SweepSpec(
        n_grid=args.n_grid,
        m_grid=args.m_grid if args.m_grid else (0,),
        p_grid=args.p_grid,
        theta_grid=args.theta_grid,
        k_grid=args.k_grid,
        repeats=args.repeats,
        objective=args.objective,
        config=_solve_config(args),
        success_bar=args.success_bar,
    )
    if spec.objective in ("phi_T", "phi_DL") and (
            not args.m_grid or any(v <= 0 for v in spec.m_grid)):
        raise ValueError("--m-grid is required for phi_T and phi_DL sweeps")

    manifest_path = out / "sweep_manifest.json"
    completed: set = set()
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("spec") != spec.key():
            raise ValueError("out-dir holds a sweep with different parameters; "
                             "choose a fresh directory")
        completed = set(manifest["completed"])

    prov = _provenance("sweep", args)
    cells = spec.cells()
    threads = _resolve_threads(args)
    for ci, cell in enumerate(cells):
        if ci in completed:
            continue
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                rows = list(pool.map(
                    lambda r: _run_repeat(spec, cell, r, args.seed),
                    range(spec.repeats)))
        else:
            rows = [_run_repeat(spec, cell, r, args.seed)
                    for r in range(spec.repeats)]
        _write_table(_cell_path(out, ci), RAW_SWEEP_COLUMNS, rows, ())
        completed.add(ci)
        _atomic_write(manifest_path, json.dumps(
            {"spec": spec.key(), "completed": sorted(completed)},
            indent=2) + "\n")

    raw_rows = []
    rate_rows = []
    for ci, cell in enumerate(cells):
        text = _cell_path(out, ci).read_text().strip().splitlines()
        cell_rows = [line.split(",") for line in text[1:]]
        raw_rows.extend(cell_rows)
        successes = sum(int(r[-1]) for r in cell_rows)
        n, m, p, theta, K = cell
        rate_rows.append((n, m, p, theta, K, spec.repeats, successes,
                          successes / spec.repeats))
    _write_table(out / "sweep_raw.csv", RAW_SWEEP_COLUMNS, raw_rows, prov)
    _write_table(out / "sweep_rates.csv", RATE_SWEEP_COLUMNS, rate_rows, prov)
    print(f"swept {len(cells)} cells x {spec.repeats} repeats")
    return EXIT_OK


# ---------------------------------------------------------------------------
# landscape


def cmd_landscape(args: argparse.Namespace) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance("landscape", args)
    D = make_untf(args.n, args.m, seed=args.seed)
    cfg = _solve_config(args)
    reports = []
    for s in range(args.samples):
        q = SpherePoint.project(
            stream(args.seed, "landscape", s).standard_normal(args.n))
        if args.at_solution:
            q = solve(TensorObjective(D), q, cfg).q_star
        reports.append(critical_point_report(D, q))
    if args.format == "json":
        payload = [json.loads(r.to_json()) for r in reports]
        _atomic_write(out / "landscape.json",
                      json.dumps(payload, indent=2) + "\n")
    else:
        _write_table(out / "landscape.csv", REPORT_CSV_COLUMNS,
                     [r.csv_row(seed=s) for s, r in enumerate(reports)], prov)
    counts: dict = {}
    for r in reports:
        counts[r.classification] = counts.get(r.classification, 0) + 1
    print(" ".join(f"{k}:{v}" for k, v in sorted(counts.items())))
    return EXIT_OK


# ---------------------------------------------------------------------------
# align


def cmd_align(args: argparse.Namespace) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    est, _ = load_matrix(args.estimate)
    true, _ = load_matrix(args.truth)
    shift, sign, err = align_shift(est.ravel(), true.ravel())
    result = {"shift": shift, "sign": sign, "error": err,
              "recovered": err <= EPS_CDL}
    if args.format == "json":
        _atomic_write(out / "align.json", json.dumps(result, indent=2) + "\n")
    else:
        _write_table(out / "align.csv", ALIGN_CSV_COLUMNS,
                     [(0, shift, sign, err, err <= EPS_CDL)],
                     _provenance("align", args))
    print(json.dumps(result))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: SPHERE4_THREADS or 1)")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--method", choices=("power", "rgd"), default="power")
    solver.add_argument("--max-iters", type=int, default=10_000)
    solver.add_argument("--grad-tol", type=float, default=1e-8)
    solver.add_argument("--escape", action="store_true",
                        help="enable second-order saddle escapes")

    parser = argparse.ArgumentParser(
        prog="sphere4",
        description="l4-norm maximization experiments on the sphere")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common],
                         help="synthesize an instance onto disk")
    gen.add_argument("--model", choices=("odl", "cdl"), required=True)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--m", type=int)
    gen.add_argument("--k", type=int)
    gen.add_argument("--theta", type=float, required=True)
    gen.add_argument("--p", type=int, required=True)
    gen.add_argument("--convention", choices=("main_text", "appendix_h"),
                     default="main_text")
    gen.set_defaults(func=cmd_gen)

    sv = sub.add_parser("solve", parents=[common, solver],
                        help="one solve on generated or synthesized data")
    sv.add_argument("--data-dir", help="directory produced by gen")
    sv.add_argument("--model", choices=("odl", "cdl"))
    sv.add_argument("--n", type=int)
    sv.add_argument("--m", type=int)
    sv.add_argument("--k", type=int)
    sv.add_argument("--theta", type=float)
    sv.add_argument("--p", type=int)
    sv.add_argument("--convention", choices=("main_text", "appendix_h"),
                    default="main_text")
    sv.add_argument("--init", choices=("random", "data"), default=None,
                    help="start point (default: data for cdl, random for odl)")
    sv.add_argument("--emit-trace", action="store_true")
    sv.set_defaults(func=cmd_solve)

    sw = sub.add_parser("sweep", parents=[common, solver],
                        help="success rates over a parameter grid")
    sw.add_argument("--objective", choices=("phi_T", "phi_DL", "phi_CDL"),
                    default="phi_T")
    sw.add_argument("--n-grid", type=_int_list, required=True)
    sw.add_argument("--m-grid", type=_int_list, default=())
    sw.add_argument("--p-grid", type=_int_list, default=(0,))
    sw.add_argument("--theta-grid", type=_float_list, default=(0.1,))
    sw.add_argument("--k-grid", type=_int_list, default=(1,))
    sw.add_argument("--repeats", type=int, default=12)
    sw.add_argument("--success-bar", type=float, default=None)
    sw.set_defaults(func=cmd_sweep)

    ls = sub.add_parser("landscape", parents=[common, solver],
                        help="critical point reports at sampled points")
    ls.add_argument("--n", type=int, required=True)
    ls.add_argument("--m", type=int, required=True)
    ls.add_argument("--samples", type=int, default=1)
    ls.add_argument("--at-solution", action="store_true",
                    help="report at solver endpoints instead of raw samples")
    ls.set_defaults(func=cmd_landscape)

    al = sub.add_parser("align", parents=[common],
                        help="shift/sign alignment of two saved filters")
    al.add_argument("estimate")
    al.add_argument("truth")
    al.set_defaults(func=cmd_align)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    if getattr(args, "init", None) is None and args.command == "solve":
        model = args.model
        if model is None and args.data_dir:
            try:
                model = _load_gen(Path(args.data_dir)).get("model")
            except (ValueError, OSError, json.JSONDecodeError):
                model = None
        args.init = "data" if model == "cdl" else "random"
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())

"""Command-line experiment runner.

Configuration files are flat ``key = value`` text with dotted section keys::

    problem.kind = poisson_inverse
    problem.d = 50
    solver.scheme = reshuffle
    schedule.kind = capped_harmonic
    schedule.cap = 1
    run.grid = 1e-2, 1e-1, 1
    run.repetitions = 5

Blank lines and lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from . import __version__
from .diagnostics import (
    check_dkc_empirical,
    check_descent,
    check_drift,
    check_dual_lipschitz,
    check_error_bound,
    check_multiblock_lipschitz,
    check_sandwich,
    check_stationarity_bridge,
    two_block_synthetic,
    write_reports,
)
from .exceptions import BudgetExhausted, ConfigError, DivergenceDetected, RRMDError
from .experiments import (
    ReferenceSolution,
    best_alpha,
    calibrate,
    complexity_study,
    grid_search,
    reference_solution,
    relative_error_curve,
)
from .kernels import burg, fermi_dirac, power, quadratic, shannon
from .problems import DatasetSpec, load_dataset, make_problem, save_dataset
from .solver import SolverConfig, StepSchedule, read_trace, run, theoretical_step_cap, write_trace

log = logging.getLogger("rrmd")

EXIT_OK, EXIT_CONFIG, EXIT_ALL_DIVERGED, EXIT_BUDGET = 0, 2, 3, 4

_SECTIONS = {
    "problem": DatasetSpec,
    "solver": SolverConfig,
    "schedule": StepSchedule,
}
_RUN_KEYS = {
    "run.grid", "run.repetitions", "run.out", "run.dataset",
    "reference.tol", "reference.max_iter",
    "complexity.T",
    "lemmas.trials", "lemmas.delta",
}


# configuration ------------------------------------------------------------------
@dataclass
class RunConfig:
    """Everything an experiment verb needs.

    ``grid`` empty means a single run at ``solver.schedule.alpha``.
    ``repetitions`` seeds run as ``solver.seed, solver.seed + 1, ...``.
    ``threads`` only affects scheduling and is left out of the config hash.
    """

    problem: DatasetSpec
    solver: SolverConfig
    grid: tuple = ()
    repetitions: int = 1
    out: str = "out"
    dataset: str | None = None
    reference_tol: float = 1e-8
    reference_max_iter: int = 20_000
    T_grid: tuple = (64, 128, 256, 512)
    lemma_trials: int = 2000
    lemma_delta: float = 1.0
    threads: int = 1
    text: str = field(default="", repr=False)

    def __post_init__(self):
        if any(not a > 0 for a in self.grid):
            raise ConfigError("grid values must be positive", field="run.grid")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1", field="run.repetitions")

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(canonical_text(self).encode()).hexdigest()[:16]

    def header(self) -> dict:
        return {"seed": self.solver.seed, "config_hash": self.config_hash, "version": __version__}


def _coerce(raw: str, typ, key: str, line: int):
    text = raw.strip()
    try:
        if typ in ("bool", bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if typ in ("int", int):
            return int(text)
        if typ in ("float", float):
            return float(text)
        if typ in ("int | None", "float | None"):
            if text.lower() in ("none", ""):
                return None
            return int(text) if typ.startswith("int") else float(text)
        return text
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} as {typ}", line=line, field=key) from None


def _field_types(cls) -> dict:
    return {f.name: f.type for f in fields(cls)}


def parse_config(text: str) -> dict[str, tuple[str, int]]:
    """Map each dotted key to ``(raw value, line number)``."""
    out: dict[str, tuple[str, int]] = {}
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {raw!r}", line=i)
        if "." not in key:
            raise ConfigError(f"key {key!r} lacks a section", line=i, field=key)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", line=i, field=key)
        out[key] = (val.strip(), i)
    return out


def build_config(text: str, seed: int | None = None, out: str | None = None, threads: int = 1) -> RunConfig:
    """Validate parsed entries and assemble a :class:`RunConfig`.

    Raises
    ------
    ConfigError
        For unknown keys, unparsable values or invalid combinations, naming
        the offending line and field when one is responsible.
    """
    entries = parse_config(text)
    values: dict[str, dict] = {s: {} for s in _SECTIONS}
    lines: dict[str, int] = {}
    extra: dict[str, object] = {}
    for key, (raw, line) in entries.items():
        section, _, name = key.partition(".")
        if section in _SECTIONS:
            types = _field_types(_SECTIONS[section])
            if name not in types or name == "schedule":
                raise ConfigError(f"unknown key {key!r}", line=line, field=key)
            values[section][name] = _coerce(raw, types[name], key, line)
            lines[key] = line
        elif key in _RUN_KEYS:
            extra[key] = (raw, line)
        else:
            raise ConfigError(f"unknown key {key!r}", line=line, field=key)

    def build(section, cls, **more):
        try:
            return cls(**values[section], **more)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            bad = next(iter(values[section]), None)
            for name in values[section]:
                if name in str(exc):
                    bad = name
            key = f"{section}.{bad}" if bad else section
            raise ConfigError(str(exc), line=lines.get(key), field=key) from None

    if "kind" not in values["problem"]:
        raise ConfigError("problem.kind is required", field="problem.kind")
    problem = build("problem", DatasetSpec)
    schedule = build("schedule", StepSchedule)
    if seed is not None:
        values["solver"]["seed"] = int(seed)
    solver = build("solver", SolverConfig, schedule=schedule)

    def get(key, conv, default):
        if key not in extra:
            return default
        raw, line = extra[key]
        try:
            return conv(raw)
        except ValueError:
            raise ConfigError(f"cannot parse {raw!r}", line=line, field=key) from None

    def floats(raw):
        return tuple(float(v) for v in raw.replace(",", " ").split())

    def ints(raw):
        return tuple(int(v) for v in raw.replace(",", " ").split())

    kwargs = dict(
        grid=get("run.grid", floats, ()),
        repetitions=get("run.repetitions", int, 1),
        out=out or get("run.out", str, "out"),
        dataset=get("run.dataset", str, None),
        reference_tol=get("reference.tol", float, 1e-8),
        reference_max_iter=get("reference.max_iter", int, 20_000),
        T_grid=get("complexity.T", ints, (64, 128, 256, 512)),
        lemma_trials=get("lemmas.trials", int, 2000),
        lemma_delta=get("lemmas.delta", float, 1.0),
    )
    try:
        cfg = RunConfig(problem=problem, solver=solver, text=text, threads=max(1, int(threads)), **kwargs)
    except ConfigError as exc:
        if exc.field in extra:
            raise ConfigError(str(exc).split(": ", 1)[-1], line=extra[exc.field][1], field=exc.field) from None
        raise
    return cfg


def canonical_text(cfg: RunConfig) -> str:
    """Sorted ``key = value`` lines describing every effective setting."""
    items = {f"problem.{k}": v for k, v in cfg.problem.to_dict().items()}
    solver = asdict(cfg.solver)
    for k, v in solver.pop("schedule").items():
        items[f"schedule.{k}"] = v
    items.update({f"solver.{k}": v for k, v in solver.items()})
    items.update({
        "run.grid": ",".join(repr(a) for a in cfg.grid),
        "run.repetitions": cfg.repetitions,
        "run.dataset": cfg.dataset,
        "reference.tol": cfg.reference_tol,
        "reference.max_iter": cfg.reference_max_iter,
        "complexity.T": ",".join(str(t) for t in cfg.T_grid),
        "lemmas.trials": cfg.lemma_trials,
        "lemmas.delta": cfg.lemma_delta,
    })
    return "".join(f"{k} = {items[k]!r}\n" for k in sorted(items))


def load_config(path, seed: int | None = None, out: str | None = None, threads: int = 1) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return build_config(text, seed=seed, out=out, threads=threads)


def _problem(cfg: RunConfig):
    return load_dataset(cfg.dataset) if cfg.dataset else make_problem(cfg.problem)


def _write_header(fh, meta: dict) -> None:
    for k, v in meta.items():
        fh.write(f"# {k}={v}\n")


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# verbs ---------------------------------------------------------------------------
def cmd_reference(cfg: RunConfig, p=None) -> ReferenceSolution:
    """Certified reference point written to ``reference.csv``."""
    p = _problem(cfg) if p is None else p
    ref = reference_solution(p, tol=cfg.reference_tol, max_iter=cfg.reference_max_iter, seed=cfg.solver.seed)
    out = _outdir(cfg)
    ref.save(out / "reference.csv")
    with open(out / "reference_meta.txt", "w") as fh:
        _write_header(fh, cfg.header())
    return ref


def cmd_run(cfg: RunConfig) -> tuple[list, float | None]:
    """Grid x repetitions runs with one trace per cell and a summary CSV.

    Returns the grid cells and the selected step scale (``None`` when every
    cell diverged).
    """
    p = _problem(cfg)
    ref = cmd_reference(cfg, p)
    cells = grid_search(p, cfg.solver, grid=cfg.grid, repetitions=cfg.repetitions,
                        f_ref=ref.f, threads=cfg.threads, keep_results=True)
    out = _outdir(cfg)
    meta = cfg.header()
    for c in cells:
        if c.result is not None:
            write_trace(c.result, out / f"trace_alpha{c.alpha:.3e}_seed{c.seed}.csv",
                        {**meta, "seed": c.seed, "alpha": repr(c.alpha), "scheme": cfg.solver.scheme,
                         "f_ref": repr(ref.f)})
    ok = [c for c in cells if c.status == "ok"]
    best = best_alpha(ok)[0] if ok else None
    with open(out / "summary.csv", "w", newline="") as fh:
        _write_header(fh, {**meta, "scheme": cfg.solver.scheme, "f_ref": repr(ref.f),
                           "best_alpha": "" if best is None else repr(best)})
        w = csv.writer(fh)
        w.writerow(["alpha", "seed", "status", "f_final", "relative_error", "best"])
        for c in cells:
            w.writerow([repr(c.alpha), c.seed, c.status, repr(c.f_final), repr(c.error), int(c.alpha == best)])
    return cells, best


def cmd_relative_error(trace_path, reference_path, out_path, meta: dict | None = None) -> bool:
    """Write ``(epoch, passes, error, kind)`` rows; returns whether absolute error was used."""
    trace_meta, trace = read_trace(trace_path)
    ref = ReferenceSolution.load(reference_path)
    curve = relative_error_curve(trace, ref.f)
    with open(out_path, "w", newline="") as fh:
        _write_header(fh, {**{k: trace_meta[k] for k in ("seed", "config_hash", "version") if k in trace_meta},
                           **(meta or {})})
        w = csv.writer(fh)
        w.writerow(["epoch", "passes", "error", "kind"])
        for e, ps, v, kind in curve.rows():
            w.writerow([e, ps, repr(v), kind])
    return curve.absolute


def cmd_complexity(cfg: RunConfig):
    """Stationarity-versus-budget table and fitted slope in ``complexity.csv``."""
    p = _problem(cfg)
    rep = complexity_study(p, cfg.T_grid, cfg.solver, repetitions=cfg.repetitions, threads=cfg.threads)
    out = _outdir(cfg)
    with open(out / "complexity.csv", "w", newline="") as fh:
        _write_header(fh, {**cfg.header(), "scheme": cfg.solver.scheme, "schedule": cfg.solver.schedule.kind,
                           "slope": repr(rep.slope), "slope_sampled": repr(rep.slope_sampled)})
        w = csv.writer(fh)
        w.writerow(["T", "mean_expected", "mean_sampled"])
        for T, e, s in zip(rep.T, rep.mean_expected, rep.mean_sampled):
            w.writerow([int(T), repr(float(e)), repr(float(s))])
    return rep


def cmd_lemmas(cfg: RunConfig):
    """Falsification reports for the kernels, the problem and one tracked run."""
    trials, delta, seed = cfg.lemma_trials, cfg.lemma_delta, cfg.solver.seed
    reports = []
    for kern in (shannon(3), burg(3), fermi_dirac(3), power(3, 2.0), quadratic(3)):
        reports.append(check_dkc_empirical(kern, delta, trials=trials, seed=seed))
        reports.append(check_sandwich(kern, trials=trials, seed=seed))
    p = calibrate(_problem(cfg), seed=seed)
    if p.kernel.n_blocks == 1:
        reports.append(check_dual_lipschitz(p, trials=trials, seed=seed, L=p.L_rel))
    synth = two_block_synthetic(seed=seed)
    reports.append(check_multiblock_lipschitz(synth, trials=trials, seed=seed, block_bounds=synth.block_bounds))
    caps = theoretical_step_cap(p, delta=cfg.solver.delta)
    solver = replace(cfg.solver, schedule=StepSchedule("fixed", caps.per_sample), batch_size=1,
                     track_errors=True, step_cap=None)
    res = run(p, solver)
    reports += [check_descent(res), check_error_bound(res, caps.L), check_stationarity_bridge(res),
                check_drift(res, cfg.solver.delta)]
    write_reports(reports, _outdir(cfg) / "lemmas.csv", cfg.header())
    return reports


def cmd_gen_data(cfg: RunConfig) -> Path:
    p = make_problem(cfg.problem)
    path = _outdir(cfg) / f"dataset_{cfg.problem.kind}_d{cfg.problem.d}_n{cfg.problem.n}_seed{cfg.problem.seed}.csv"
    save_dataset(p, path)
    return path


# entry point -------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rrmd", description="Shuffled mirror-descent experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="flat key = value config file")
    common.add_argument("--seed", type=int, default=None, help="override solver.seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker processes for grid cells")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in ("run", "reference", "complexity", "lemmas", "gen-data"):
        sub.add_parser(verb, parents=[common])
    rel = sub.add_parser("relerr", help="relative-error curve of a trace")
    rel.add_argument("--trace", required=True)
    rel.add_argument("--reference", required=True)
    rel.add_argument("--out", default="relerr.csv", help="output CSV path")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if args.verb == "relerr":
        try:
            absolute = cmd_relative_error(args.trace, args.reference, args.out)
        except (OSError, KeyError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"wrote {args.out}" + (" (absolute error)" if absolute else ""))
        return EXIT_OK
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be nonnegative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.verb == "run":
            cells, best = cmd_run(cfg)
            if best is None:
                print("all grid cells diverged", file=sys.stderr)
                return EXIT_ALL_DIVERGED
            med = best_alpha([c for c in cells if c.status == "ok"])[1]
            print(f"best alpha {best!r} median relative error {med:.6e}")
        elif args.verb == "reference":
            ref = cmd_reference(cfg)
            print(f"f={ref.f!r} certificate={ref.certificate:.3e} method={ref.method}")
        elif args.verb == "complexity":
            rep = cmd_complexity(cfg)
            print(f"slope {rep.slope:.4f} (sampled iterate {rep.slope_sampled:.4f})")
        elif args.verb == "lemmas":
            for r in cmd_lemmas(cfg):
                print(f"{r.lemma:22s} trials={r.trials:6d} max_ratio={r.max_ratio:.6g} {'PASS' if r.passed else 'FAIL'}")
        elif args.verb == "gen-data":
            print(f"wrote {cmd_gen_data(cfg)}")
    except BudgetExhausted as exc:
        print(f"budget exhausted: {exc} (best residual {exc.best_residual:.3e})", file=sys.stderr)
        return EXIT_BUDGET
    except DivergenceDetected as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_ALL_DIVERGED
    except RRMDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

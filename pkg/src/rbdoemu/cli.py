"""Batch experiments: sweep methods, experimental-design sizes and repetitions,
store reference solutions, and summarize runs into tables and plot data.

    rbdoemu run config.json
    rbdoemu reference config.json
    rbdoemu report OUTPUT_DIR [--grid]

Run seeds are ``base_seed XOR h`` where ``h`` is the first 8 hex digits of
sha256("<method>:<n_ed>:<repetition>"), read as an integer. The worker count
comes from the config or the ``RBDOEMU_WORKERS`` environment variable.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .benchmarks import SPECS, buckling_analytical_optimum, make_problem
from .engine import (
    KrigingEmulator,
    MonteCarloModel,
    RbdoOptions,
    reference_double_loop,
    relative_cost_error,
    solve_rbdo,
)
from .glam import GlamModel, glam_conditional_quantile
from .kriging import KrigingModel
from .spce import SpceModel, spce_conditional_quantile

log = logging.getLogger(__name__)

METHODS = ("glam", "spce", "kriging", "reference")
CSV_VERSION = 1
WORKERS_ENV = "RBDOEMU_WORKERS"
GRID_SIZE = 20


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    methods: tuple[str, ...] = ("glam", "spce")
    n_ed: tuple[int, ...] = (100,)
    repetitions: int = 1
    base_seed: int = 0
    n_mc: int = 100_000
    reference_n_mc: int | None = None
    crn_seed: int = 12345
    target_pf: float | None = None
    aggregation: str | None = None
    overrides: dict = field(default_factory=dict)
    output_dir: str = "results"
    workers: int = 1

    def __post_init__(self):
        if self.problem not in SPECS:
            raise ValueError(f"unknown problem id {self.problem!r}; choose from {sorted(SPECS)}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"methods must be a non-empty subset of {METHODS}, got {list(self.methods)}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if not self.n_ed or min(self.n_ed) < 20:
            raise ValueError("every n_ed value must be at least 20")
        if self.aggregation is not None and self.problem != "corroded-beam":
            raise ValueError("aggregation applies to the corroded-beam problem only")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        # fail early on bad overrides
        self.build_problem()

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("methods", "n_ed"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["methods"] = list(self.methods)
        out["n_ed"] = list(self.n_ed)
        return out

    def problem_overrides(self) -> dict:
        out = dict(self.overrides)
        if self.target_pf is not None:
            out["target_pf"] = self.target_pf
        if self.aggregation is not None:
            out["aggregation"] = self.aggregation
        return out

    def build_problem(self):
        return make_problem(self.problem, self.problem_overrides())

    @property
    def ref_n_mc(self) -> int:
        return self.reference_n_mc or self.n_mc

    def config_hash(self) -> str:
        # output location and parallelism do not change results
        payload = {k: v for k, v in self.to_dict().items() if k not in ("output_dir", "workers")}
        return _digest(payload)


def _digest(payload) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def derive_seed(base_seed: int, method: str, n_ed: int, repetition: int) -> int:
    h = int(hashlib.sha256(f"{method}:{n_ed}:{repetition}".encode()).hexdigest()[:8], 16)
    return int(base_seed) ^ h


def problem_hash(config: ExperimentConfig) -> str:
    p = config.build_problem()
    return _digest({"params": p.params, "n_mc": config.ref_n_mc, "crn_seed": config.crn_seed})


# --- references ----------------------------------------------------------------

def reference(config: ExperimentConfig) -> dict:
    """Reference optimum, cached under ``<output_dir>/references/<problem hash>.json``."""
    key = problem_hash(config)
    path = Path(config.output_dir) / "references" / f"{key}.json"
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            ref = json.load(fh)
        ref["cached"] = True
        return ref
    p = config.build_problem()
    t = time.perf_counter()
    if config.problem == "buckling":
        spec = SPECS["buckling"].from_dict({k: v for k, v in p.params.items() if k != "id"})
        d_star = np.array(buckling_analytical_optimum(spec))
        ref = {"source": "closed-form"}
    else:
        res = reference_double_loop(p, config.ref_n_mc, config.crn_seed)
        d_star = res.d_star
        ref = {"source": "double-loop", "n_mc": config.ref_n_mc, "crn_seed": config.crn_seed,
               "converged": res.converged}
    ref.update({"problem": config.problem, "problem_hash": key, "d_star": d_star.tolist(),
                "cost": p.cost(d_star), "seconds": time.perf_counter() - t})
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_json(path, ref)
    ref["cached"] = False
    return ref


# --- sweep ---------------------------------------------------------------------

@dataclass
class RunRecord:
    config_hash: str
    runs: list[dict]
    summary: list[dict]
    n_failed: int
    csv_version: int = CSV_VERSION

    def to_dict(self) -> dict:
        return asdict(self)


def _cells(config: ExperimentConfig):
    for method in config.methods:
        sizes = (0,) if method == "reference" else config.n_ed
        for n_ed in sizes:
            for rep in range(config.repetitions):
                yield method, n_ed, rep


def _run_name(method: str, n_ed: int, rep: int) -> str:
    return f"{method}_n{n_ed}_r{rep:03d}"


def _run_cell(config_data: dict, method: str, n_ed: int, rep: int, ref_cost: float) -> dict:
    config = ExperimentConfig.from_dict(config_data)
    out = Path(config.output_dir)
    name = _run_name(method, n_ed, rep)
    seed = derive_seed(config.base_seed, method, n_ed, rep)
    rec = {"config_hash": config.config_hash(), "method": method, "n_ed": n_ed, "repetition": rep,
           "seed": seed, "problem": config.problem}
    p = config.build_problem()
    try:
        if method == "reference":
            # Monte Carlo double loop on the original model, CRN stream from the run seed
            t = time.perf_counter()
            res = reference_double_loop(p, config.n_mc, seed)
            timings = {"fit_seconds": 0.0, "opt_seconds": time.perf_counter() - t}
            model_file = None
        else:
            opts = RbdoOptions(n_mc=config.n_mc, crn_seed=config.crn_seed)
            run = solve_rbdo(p, method, n_ed, seed, opts)
            res, timings = run.result, run.timings
            model = run.model.model if isinstance(run.model, KrigingEmulator) else run.model
            model_file = f"models/{name}.json"
            (out / "models").mkdir(parents=True, exist_ok=True)
            _write_json(out / model_file, model.to_dict())
            rec["n_dropped"] = run.design.n_dropped
        rec.update({"status": "ok", "result": res.to_dict(), "cost": res.cost,
                    "eps_c": relative_cost_error(res, ref_cost), "timings": timings, "model_file": model_file})
    except Exception as exc:  # noqa: BLE001 - a failed cell is recorded, the sweep goes on
        log.warning("run %s failed: %s", name, exc)
        rec.update({"status": "failed", "error": f"{type(exc).__name__}: {exc}",
                    "stage": getattr(exc, "stage", None)})
    (out / "runs").mkdir(parents=True, exist_ok=True)
    _write_json(out / "runs" / f"{name}.json", rec)
    return rec


def _worker_count(config: ExperimentConfig) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be a positive integer")
        return n
    return config.workers


def run_experiment(config: ExperimentConfig) -> RunRecord:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", config.to_dict())
    ref = reference(config)
    cells = list(_cells(config))
    data = config.to_dict()
    workers = _worker_count(config)
    if workers == 1:
        runs = [_run_cell(data, *c, ref["cost"]) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell, data, *c, ref["cost"]) for c in cells]
            runs = [f.result() for f in futures]
    p = config.build_problem()
    write_csv(out / "results.csv", runs, p.box.n_dims)
    record = RunRecord(config.config_hash(), [_brief(r) for r in runs], summarize(runs),
                       sum(r["status"] != "ok" for r in runs))
    _write_json(out / "record.json", record.to_dict())
    return record


def _brief(run: dict) -> dict:
    keys = ("method", "n_ed", "repetition", "seed", "status", "cost", "eps_c", "timings", "error")
    out = {k: run[k] for k in keys if k in run}
    if run["status"] == "ok":
        out["d_star"] = run["result"]["d_star"]
    return out


CSV_COLUMNS = ("method", "n_ed", "seed", "cost", "eps_c")


def write_csv(path, runs: list[dict], n_dims: int) -> None:
    """Completed runs only, in sweep order; floats written with full precision."""
    header = [*CSV_COLUMNS, *(f"d_{i + 1}" for i in range(n_dims)), "fit_seconds", "opt_seconds"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in runs:
            if r["status"] != "ok":
                continue
            w.writerow([r["method"], r["n_ed"], r["seed"], repr(r["cost"]), repr(r["eps_c"]),
                        *(repr(v) for v in r["result"]["d_star"]),
                        repr(r["timings"].get("fit_seconds", 0.0)), repr(r["timings"]["opt_seconds"])])


# --- report ----------------------------------------------------------------------

def boxplot_stats(values) -> dict:
    """Quartiles, whiskers at the most extreme data inside 1.5 IQR of the box, and outliers."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("no values")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    return {"n": int(v.size), "q1": float(q1), "median": float(med), "q3": float(q3), "iqr": float(iqr),
            "whisker_low": float(inside.min()), "whisker_high": float(inside.max()),
            "outliers": [float(x) for x in v if x < inside.min() or x > inside.max()]}


def summarize(runs: list[dict]) -> list[dict]:
    """Per (method, n_ed) statistics over completed runs, with the failure count."""
    groups: dict[tuple[str, int], list[dict]] = {}
    for r in runs:
        groups.setdefault((r["method"], r["n_ed"]), []).append(r)
    out = []
    for (method, n_ed), rs in groups.items():
        ok = [r for r in rs if r["status"] == "ok"]
        row = {"method": method, "n_ed": n_ed, "n_ok": len(ok), "n_failed": len(rs) - len(ok)}
        if ok:
            row["cost"] = boxplot_stats([r["cost"] for r in ok])
            row["eps_c"] = boxplot_stats([r["eps_c"] for r in ok])
            for key in ("fit_seconds", "opt_seconds"):
                row[f"mean_{key}"] = float(np.mean([r["timings"].get(key, 0.0) for r in ok]))
        out.append(row)
    return out


def load_runs(directory) -> list[dict]:
    files = sorted((Path(directory) / "runs").glob("*.json"))
    if not files:
        raise ValueError(f"no run files under {directory}/runs")
    runs = []
    for f in files:
        try:
            with open(f, encoding="utf-8") as fh:
                r = json.load(fh)
            missing = {"method", "n_ed", "seed", "status"} - set(r)
            if missing:
                raise ValueError(f"missing keys {sorted(missing)}")
            if r["status"] == "ok" and not {"cost", "eps_c", "result", "timings"} <= set(r):
                raise ValueError("completed run lacks its result")
        except (ValueError, json.JSONDecodeError) as exc:
            raise ValueError(f"malformed run file {f}: {exc}") from exc
        runs.append(r)
    order = {m: i for i, m in enumerate(METHODS)}
    runs.sort(key=lambda r: (order.get(r["method"], len(order)), r["n_ed"], r.get("repetition", 0)))
    return runs


def median_table(summary: list[dict]) -> tuple[list[str], list[int], dict]:
    methods = [m for m in METHODS if any(s["method"] == m for s in summary)]
    sizes = sorted({s["n_ed"] for s in summary})
    cells = {(s["method"], s["n_ed"]): s["eps_c"]["median"] for s in summary if s["n_ok"]}
    return methods, sizes, cells


def _median_run(runs: list[dict]) -> dict:
    ok = sorted((r for r in runs if r["status"] == "ok"), key=lambda r: r["eps_c"])
    return ok[(len(ok) - 1) // 2]


def _quantile_surface(method: str, run: dict, directory: Path, config: ExperimentConfig, grid):
    p = config.build_problem()
    alpha = p.alpha
    if method == "reference":
        mc = MonteCarloModel(p, config.n_mc, run["seed"])
        return np.array([mc(d) for d in grid])
    with open(directory / run["model_file"], encoding="utf-8") as fh:
        doc = json.load(fh)
    if method == "glam":
        return np.asarray(glam_conditional_quantile(GlamModel.from_dict(doc), grid, alpha))
    if method == "spce":
        m = SpceModel.from_dict(doc)
        return np.array([spce_conditional_quantile(m, d, alpha) for d in grid])
    emu = KrigingEmulator(KrigingModel.from_dict(doc), p, config.n_mc, config.crn_seed)
    return np.array([emu(d) for d in grid])


def quantile_grid(directory, runs: list[dict], config: ExperimentConfig) -> list[dict]:
    """alpha-quantile surfaces on a 20 x 20 grid for the median-error run of each method
    at its largest experimental design."""
    directory = Path(directory)
    box = config.build_problem().box
    if box.n_dims != 2:
        raise ValueError("quantile grids need a two-dimensional design space")
    axes = [np.linspace(box.lower[i], box.upper[i], GRID_SIZE) for i in range(2)]
    grid = np.array([(a, b) for a in axes[0] for b in axes[1]])
    rows = []
    for method in METHODS:
        mine = [r for r in runs if r["method"] == method and r["status"] == "ok"]
        if not mine:
            continue
        n_ed = max(r["n_ed"] for r in mine)
        run = _median_run([r for r in mine if r["n_ed"] == n_ed])
        q = _quantile_surface(method, run, directory, config, grid)
        rows += [{"method": method, "n_ed": n_ed, "seed": run["seed"], "d_1": float(d[0]), "d_2": float(d[1]),
                  "q_alpha": float(v)} for d, v in zip(grid, q)]
    return rows


def report(directory, grid: bool = False) -> dict:
    """Summary tables and plot data from the run files; the run files are only read."""
    directory = Path(directory)
    runs = load_runs(directory)
    summary = summarize(runs)
    methods, sizes, cells = median_table(summary)
    with open(directory / "median_eps_c.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", *sizes])
        for m in methods:
            w.writerow([m, *(repr(cells[(m, n)]) if (m, n) in cells else "" for n in sizes)])
    with open(directory / "boxplots.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "method", "n_ed", "n", "q1", "median", "q3", "whisker_low", "whisker_high",
                    "n_outliers"])
        for s in summary:
            for qty in ("cost", "eps_c"):
                if qty in s:
                    b = s[qty]
                    w.writerow([qty, s["method"], s["n_ed"], b["n"], repr(b["q1"]), repr(b["median"]),
                                repr(b["q3"]), repr(b["whisker_low"]), repr(b["whisker_high"]), len(b["outliers"])])
    out = {"summary": summary, "median_eps_c": {f"{m}@{n}": v for (m, n), v in cells.items()},
           "n_failed": sum(s["n_failed"] for s in summary)}
    if grid:
        config = ExperimentConfig.load(directory / "config.json")
        rows = quantile_grid(directory, runs, config)
        with open(directory / "quantile_grid.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["method", "n_ed", "seed", "d_1", "d_2", "q_alpha"],
                               lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        out["grid_rows"] = len(rows)
    _write_json(directory / "report.json", out)
    return out


def format_table(summary: list[dict]) -> str:
    methods, sizes, cells = median_table(summary)
    lines = ["median relative cost error", "method    " + "".join(f"{n:>12}" for n in sizes)]
    for m in methods:
        vals = "".join(f"{cells[(m, n)]:>12.3e}" if (m, n) in cells else f"{'-':>12}" for n in sizes)
        lines.append(f"{m:<10}{vals}")
    return "\n".join(lines)


# --- entry point -----------------------------------------------------------------

def _write_json(path, data) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, allow_nan=True)
        fh.write("\n")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rbdoemu", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run every (method, n_ed, repetition) cell of a config")
    p_run.add_argument("config")
    p_ref = sub.add_parser("reference", help="compute or reuse the reference optimum")
    p_ref.add_argument("config")
    p_rep = sub.add_parser("report", help="summarize the run files of an output directory")
    p_rep.add_argument("directory")
    p_rep.add_argument("--grid", action="store_true", help="also emit 20 x 20 quantile-surface data")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            record = run_experiment(ExperimentConfig.load(args.config))
            print(format_table(record.summary))
            n_ok = len(record.runs) - record.n_failed
            print(f"{n_ok} of {len(record.runs)} runs completed")
            return 0 if n_ok else 1
        if args.command == "reference":
            ref = reference(ExperimentConfig.load(args.config))
            state = "cached" if ref["cached"] else ref["source"]
            print(f"d* = {ref['d_star']}  cost = {ref['cost']:.6g}  ({state})")
            return 0
        out = report(args.directory, grid=args.grid)
        print(format_table(out["summary"]))
        if "grid_rows" in out:
            print(f"{out['grid_rows']} quantile grid rows written")
        return 0
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

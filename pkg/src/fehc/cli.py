"""Command line driver: ``fehc <subcommand> --config <path> [--preset NAME] [--out DIR]``.

Configuration is JSON.  A preset supplies defaults for one of the stock
experiments and keys in ``--config`` override it; either may be given alone.

Schema (all keys optional unless stated):

``problem``
    ``dirichlet_square``, ``neumann_square``, ``lshape`` or
    ``lshape_nonuniform`` (required).
``n_list``
    Ascending list of uniform mesh resolutions (cells per unit length).
``S``
    Subdomain rectangle ``[x0, x1, y0, y1]``.
``epsilon``
    Band width of the cutoff; positive.
``epsilon_sweep``
    ``[start, stop, step]`` for the ``sweep`` subcommand.
``sweep_n``
    Resolution used by ``sweep`` (default: last entry of ``n_list``).
``variant``
    ``rt0`` or ``improved_k2``.
``kappa_method``
    ``auto``, ``dense_eig``, ``power_iteration`` or ``lanczos``.
``refine``
    ``{"region": [x0, x1, y0, y1], "levels": int | [int, ...]}``; local
    red-green refinement applied to every mesh of ``n_list``.
``mesh_file``
    Read the mesh from this file instead of building ``n_list`` meshes.
``subdomains``
    Extra ``[{"label": str, "S": [...], "epsilon": float}, ...]`` evaluated on
    the same solutions; each gets its own CSV.
``plots``
    Write SVG plots (default true).
``name``
    Stem of the output files (default: the preset name, else ``run``).

Exit status is 0 when every guaranteed bound held, 1 when one failed and 2
for configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .constants import compute_constants
from .estimator import CSV_COLUMNS, EstimatorReport, compute_report, convergence_order, successive_orders
from .mesh import TriMesh, build_uniform_lshape, build_uniform_square, read_mesh, refine_locally, write_mesh
from .problems import PROBLEMS, get_problem

log = logging.getLogger("fehc")

SQUARE_S = [0.375, 0.625, 0.375, 0.625]
LSHAPE_S = [-0.125, 0.125, -0.125, 0.125]
UNIFORM_N = [16, 32, 64, 128, 256]

PRESETS: dict[str, dict] = {
    "table1": {"problem": "dirichlet_square", "n_list": UNIFORM_N, "S": SQUARE_S, "epsilon": 0.15,
               "epsilon_sweep": [0.05, 0.30, 0.025], "sweep_n": 64},
    "table2": {"problem": "neumann_square", "n_list": UNIFORM_N, "S": SQUARE_S, "epsilon": 0.10,
               "epsilon_sweep": [0.05, 0.30, 0.025], "sweep_n": 64},
    "table3": {"problem": "dirichlet_square", "n_list": UNIFORM_N, "S": SQUARE_S, "epsilon": 0.15,
               "variant": "improved_k2"},
    "table4": {"problem": "dirichlet_square", "n_list": [4, 8, 16, 32], "S": SQUARE_S, "epsilon": 0.125,
               "refine": {"region": [0.25, 0.75, 0.25, 0.75], "levels": [1, 2, 3, 4]}},
    "table5": {"problem": "lshape", "n_list": UNIFORM_N, "S": LSHAPE_S, "epsilon": 0.375,
               "subdomains": [{"label": "Sprime", "S": [0.25, 0.5, 0.25, 0.5], "epsilon": 0.25}]},
    "table7": {"problem": "lshape_nonuniform", "n_list": [8, 16, 32, 64, 128], "S": LSHAPE_S,
               "epsilon": 0.375, "refine": {"region": [-0.25, 0.25, -0.25, 0.25], "levels": 2}},
}

KNOWN_KEYS = {
    "problem", "n_list", "S", "epsilon", "epsilon_sweep", "sweep_n", "variant", "kappa_method",
    "refine", "mesh_file", "subdomains", "plots", "name",
}
PROBLEM_NAMES = sorted(PROBLEMS) + ["lshape_nonuniform"]
VARIANTS = ("rt0", "improved_k2")
KAPPA_METHODS = ("auto", "dense_eig", "power_iteration", "lanczos")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


@dataclass
class Subdomain:
    label: str
    S: tuple
    epsilon: float


@dataclass
class ExperimentConfig:
    problem: str
    n_list: list
    S: tuple
    epsilon: float
    variant: str = "rt0"
    kappa_method: str = "auto"
    epsilon_sweep: tuple | None = None
    sweep_n: int | None = None
    refine_region: tuple | None = None
    refine_levels: list | None = None
    mesh_file: str | None = None
    subdomains: list = field(default_factory=list)
    plots: bool = True
    name: str = "run"

    @property
    def base_problem(self) -> str:
        return "lshape" if self.problem == "lshape_nonuniform" else self.problem


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _number(key, value, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(key, f"expected a finite number, got {value!r}")
    if positive and value <= 0:
        raise ConfigError(key, f"must be positive, got {value!r}")
    return float(value)


def _rect(key, value, domain_box):
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise ConfigError(key, "expected [x0, x1, y0, y1]")
    x0, x1, y0, y1 = (_number(key, v) for v in value)
    if not (x0 < x1 and y0 < y1):
        raise ConfigError(key, "needs x0 < x1 and y0 < y1")
    bx0, bx1, by0, by1 = domain_box
    tol = 1e-12
    if x0 < bx0 - tol or x1 > bx1 + tol or y0 < by0 - tol or y1 > by1 + tol:
        raise ConfigError(key, f"rectangle {list(value)} leaves the domain box {list(domain_box)}")
    return (x0, x1, y0, y1)


def _positive_int(key, value):
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(key, f"expected a positive integer, got {value!r}")
    return value


def parse_config(raw: dict, name: str = "run") -> ExperimentConfig:
    """Validate a raw (preset-merged) mapping into an :class:`ExperimentConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    unknown = sorted(set(raw) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    if "problem" not in raw:
        raise ConfigError("problem", "missing")
    problem = raw["problem"]
    if problem not in PROBLEM_NAMES:
        raise ConfigError("problem", f"expected one of {PROBLEM_NAMES}, got {problem!r}")
    box = (-0.5, 0.5, -0.5, 0.5) if problem.startswith("lshape") else (0.0, 1.0, 0.0, 1.0)

    mesh_file = raw.get("mesh_file")
    if mesh_file is not None and not isinstance(mesh_file, str):
        raise ConfigError("mesh_file", "expected a path string")
    n_list = raw.get("n_list", [] if mesh_file else None)
    if n_list is None:
        raise ConfigError("n_list", "missing")
    if not isinstance(n_list, list) or (not n_list and not mesh_file):
        raise ConfigError("n_list", "expected a non-empty list of positive integers")
    n_list = [_positive_int("n_list", n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigError("n_list", "must be strictly ascending")
    if problem.startswith("lshape") and any(n % 2 for n in n_list):
        raise ConfigError("n_list", "L-shaped meshes need even n so the re-entrant corner is a vertex")

    if "S" not in raw:
        raise ConfigError("S", "missing")
    S = _rect("S", raw["S"], box)
    if "epsilon" not in raw:
        raise ConfigError("epsilon", "missing")
    epsilon = _number("epsilon", raw["epsilon"], positive=True)

    variant = raw.get("variant", "rt0")
    if variant not in VARIANTS:
        raise ConfigError("variant", f"expected one of {list(VARIANTS)}, got {variant!r}")
    kappa_method = raw.get("kappa_method", "auto")
    if kappa_method not in KAPPA_METHODS:
        raise ConfigError("kappa_method", f"expected one of {list(KAPPA_METHODS)}, got {kappa_method!r}")

    sweep = raw.get("epsilon_sweep")
    if sweep is not None:
        if not isinstance(sweep, list) or len(sweep) != 3:
            raise ConfigError("epsilon_sweep", "expected [start, stop, step]")
        a, b, s = (_number("epsilon_sweep", v, positive=True) for v in sweep)
        if b < a:
            raise ConfigError("epsilon_sweep", "stop must not be below start")
        sweep = (a, b, s)
    sweep_n = raw.get("sweep_n")
    if sweep_n is not None:
        sweep_n = _positive_int("sweep_n", sweep_n)

    region = levels = None
    if "refine" in raw:
        ref = raw["refine"]
        if not isinstance(ref, dict) or set(ref) != {"region", "levels"}:
            raise ConfigError("refine", "expected {'region': [x0, x1, y0, y1], 'levels': int or list}")
        region = _rect("refine.region", ref["region"], box)
        lv = ref["levels"]
        lv = [lv] * max(len(n_list), 1) if isinstance(lv, int) and not isinstance(lv, bool) else lv
        if not isinstance(lv, list) or len(lv) != max(len(n_list), 1):
            raise ConfigError("refine.levels", "expected an integer or one integer per n_list entry")
        for v in lv:
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ConfigError("refine.levels", f"expected non-negative integers, got {v!r}")
        levels = lv
    elif problem == "lshape_nonuniform":
        raise ConfigError("refine", "lshape_nonuniform needs a refinement region and levels")

    subs = []
    for i, item in enumerate(raw.get("subdomains", [])):
        key = f"subdomains[{i}]"
        if not isinstance(item, dict) or set(item) != {"label", "S", "epsilon"}:
            raise ConfigError(key, "expected {'label', 'S', 'epsilon'}")
        if not isinstance(item["label"], str) or not item["label"].isidentifier():
            raise ConfigError(key + ".label", "expected an identifier-like string")
        subs.append(Subdomain(item["label"], _rect(key + ".S", item["S"], box),
                              _number(key + ".epsilon", item["epsilon"], positive=True)))

    plots = raw.get("plots", True)
    if not isinstance(plots, bool):
        raise ConfigError("plots", "expected true or false")
    name = raw.get("name", name)
    if not isinstance(name, str) or not name or any(c in name for c in "/\\"):
        raise ConfigError("name", "expected a plain file stem")
    return ExperimentConfig(problem, n_list, S, epsilon, variant, kappa_method, sweep, sweep_n,
                            region, levels, mesh_file, subs, plots, name)


def load_config(path: str | None, preset: str | None) -> ExperimentConfig:
    raw: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("--preset", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        raw = json.loads(json.dumps(PRESETS[preset]))
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(user, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        raw.update(user)
    if not raw:
        raise ConfigError("--config", "give --config, --preset or both")
    return parse_config(raw, preset or "run")


def thread_count() -> int:
    value = os.environ.get("FEHC_THREADS", "1")
    try:
        n = int(value)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError("FEHC_THREADS", f"expected a positive integer, got {value!r}")
    return n


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


def build_mesh(cfg: ExperimentConfig, index: int) -> TriMesh:
    if cfg.mesh_file:
        mesh = read_mesh(cfg.mesh_file, domain="lshape" if cfg.problem.startswith("lshape") else "square")
    else:
        n = cfg.n_list[index]
        if cfg.problem.startswith("lshape"):
            mesh = build_uniform_lshape(n)
        else:
            mesh = build_uniform_square(n, "N" if cfg.problem == "neumann_square" else "D")
    if cfg.refine_region is not None and cfg.refine_levels[index] > 0:
        mesh = refine_locally(mesh, cfg.refine_region, cfg.refine_levels[index])
    return mesh


def _row_count(cfg: ExperimentConfig) -> int:
    return 1 if cfg.mesh_file else len(cfg.n_list)


def _run_row(args) -> list[EstimatorReport]:
    cfg, index = args
    problem = get_problem(cfg.base_problem)
    mesh = build_mesh(cfg, index)
    consts = compute_constants(mesh, method=cfg.kappa_method)
    reports = [compute_report(problem, mesh, cfg.S, cfg.epsilon, cfg.variant, consts)]
    for sub in cfg.subdomains:
        reports.append(compute_report(problem, mesh, sub.S, sub.epsilon, cfg.variant, consts, with_aux=False))
    return reports


def _map_rows(func, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(func, items))  # results come back in input order


def fmt(value) -> str:
    """Shortest round-trip text for floats; stable across runs."""
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_report_csvs(out: Path, stem: str, reports: list[EstimatorReport]) -> list[Path]:
    main = out / f"{stem}.csv"
    write_csv(main, CSV_COLUMNS, ([r.row()[c] for c in CSV_COLUMNS] for r in reports))
    full_rows = [r.full_row() for r in reports]
    full = out / f"{stem}_full.csv"
    write_csv(full, list(full_rows[0]), ([d[k] for k in full_rows[0]] for d in full_rows))
    return [main, full]


def plot_columns(out: Path, stem: str, x, series: dict[str, list], xlabel: str = "h",
                 loglog: bool = True) -> list[Path]:
    """One static SVG per column, named ``<stem>_<column>.svg``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed id salt and no date stamp keep the SVG text reproducible
    matplotlib.rcParams["svg.hashsalt"] = "fehc"

    paths = []
    for col, ys in series.items():
        pts = [(a, b) for a, b in zip(x, ys) if b is not None and math.isfinite(b) and (b > 0 or not loglog)]
        if not pts:
            continue
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-")
        if loglog:
            ax.set_xscale("log")
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(col)
        ax.grid(True, which="both", alpha=0.3)
        fig.tight_layout()
        path = out / f"{stem}_{col}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths


def _report_table(cfg: ExperimentConfig, out: Path, with_orders: bool) -> bool:
    rows = _map_rows(_run_row, [(cfg, i) for i in range(_row_count(cfg))], thread_count())
    labels = [cfg.name] + [f"{cfg.name}_{s.label}" for s in cfg.subdomains]
    ok = True
    for j, stem in enumerate(labels):
        reports = [r[j] for r in rows]
        write_report_csvs(out, stem, reports)
        for r in reports:
            line = " ".join(f"{c}={fmt(r.row()[c])}" for c in CSV_COLUMNS)
            print(f"{stem}: {line}")
            if not r.bounds_hold():
                ok = False
                print(f"{stem}: BOUND VIOLATED at h={fmt(r.h)}", file=sys.stderr)
            if not r.certified:
                print(f"{stem}: quadrature fallback at h={fmt(r.h)}: {'; '.join(r.notes)}", file=sys.stderr)
        if with_orders and len(reports) >= 2:
            write_orders(out, stem, reports)
        if cfg.plots:
            cols = [c for c in CSV_COLUMNS if c != "h"]
            plot_columns(out, stem, [r.h for r in reports], {c: [r.row()[c] for r in reports] for c in cols})
    return ok


ORDER_COLUMNS = ("E_L", "E1", "E2", "EhatL", "EhatG", "residual_alpha")


def write_orders(out: Path, stem: str, reports: list[EstimatorReport]) -> Path:
    """Successive orders per row (blank for the first) plus a least-squares fit row."""
    hs = [r.h for r in reports]
    cols = [c for c in ORDER_COLUMNS if all(c in r.full_row() for r in reports)]
    table = {c: [r.full_row()[c] for r in reports] for c in cols}
    succ = {c: successive_orders(hs, table[c]) for c in cols}
    rows = []
    for i, h in enumerate(hs):
        rows.append([fmt(h)] + ["" if i == 0 else fmt(succ[c][i - 1]) for c in cols])
    fit = []
    for c in cols:
        try:
            fit.append(fmt(convergence_order(hs, table[c])))
        except ValueError:
            fit.append("")
    rows.append(["fit"] + fit)
    path = out / f"{stem}_orders.csv"
    write_csv(path, ["h"] + cols, rows)
    for row in rows:
        print(f"{stem} order: " + " ".join(f"{c}={v}" for c, v in zip(["h"] + cols, row)))
    return path


def cmd_mesh(cfg: ExperimentConfig, out: Path) -> bool:
    for i in range(_row_count(cfg)):
        mesh = build_mesh(cfg, i)
        tag = "file" if cfg.mesh_file else f"n{cfg.n_list[i]}"
        path = out / f"{cfg.name}_{tag}.mesh"
        write_mesh(mesh, path)
        again = read_mesh(path, domain=mesh.domain)
        if not (again.vertices == mesh.vertices).all() or not (again.triangles == mesh.triangles).all():
            raise RuntimeError(f"mesh file {path} did not round-trip")
        print(f"{path}: nv={mesh.nv} nt={mesh.nt} h_max={fmt(float(mesh.h_K.max()))}")
    return True


def cmd_kappa(cfg: ExperimentConfig, out: Path) -> bool:
    def one(i):
        c = compute_constants(build_mesh(cfg, i), method=cfg.kappa_method)
        return [c.h_used, c.kappa_h, c.C_h, c.C0, c.method]

    rows = [one(i) for i in range(_row_count(cfg))]
    write_csv(out / f"{cfg.name}_kappa.csv", ["h", "kappa_h", "C_h", "C0", "method"], rows)
    for r in rows:
        print(f"h={fmt(r[0])} kappa_h={fmt(r[1])} C_h={fmt(r[2])} method={r[4]}")
    return True


def sweep_values(cfg: ExperimentConfig) -> list[float]:
    if cfg.epsilon_sweep is None:
        raise ConfigError("epsilon_sweep", "missing (needed by the sweep subcommand)")
    a, b, s = cfg.epsilon_sweep
    count = int(math.floor((b - a) / s + 1e-9)) + 1
    return [round(a + k * s, 12) for k in range(count)]


def run_sweep(cfg: ExperimentConfig, n: int | None = None) -> list[EstimatorReport]:
    """Estimates on one mesh for every band width of the sweep."""
    n = n or cfg.sweep_n or (cfg.n_list[-1] if cfg.n_list else None)
    sub = ExperimentConfig(**{**cfg.__dict__, "n_list": [n] if n else [], "subdomains": []})
    if sub.refine_levels is not None:
        sub.refine_levels = sub.refine_levels[-1:]
    problem = get_problem(cfg.base_problem)
    mesh = build_mesh(sub, 0)
    consts = compute_constants(mesh, method=cfg.kappa_method)
    return [compute_report(problem, mesh, cfg.S, eps, cfg.variant, consts, with_aux=False)
            for eps in sweep_values(cfg)]


def cmd_sweep(cfg: ExperimentConfig, out: Path) -> bool:
    eps = sweep_values(cfg)
    reports = run_sweep(cfg)
    rows = [[e, r.E1, r.E2, r.E_hat_L, r.E_L] for e, r in zip(eps, reports)]
    write_csv(out / f"{cfg.name}_sweep.csv", ["epsilon", "E1", "E2", "E_hat_L", "E_L"], rows)
    for row in rows:
        print(f"epsilon={fmt(row[0])} E_hat_L={fmt(row[3])}")
    if cfg.plots:
        plot_columns(out, cfg.name, eps, {"sweep_EhatL": [r.E_hat_L for r in reports]}, "epsilon", loglog=False)
    return all(r.bounds_hold() for r in reports)


COMMANDS = {
    "mesh": cmd_mesh,
    "kappa": cmd_kappa,
    "estimate": lambda cfg, out: _report_table(cfg, out, with_orders=False),
    "sweep": cmd_sweep,
    "converge": lambda cfg, out: _report_table(cfg, out, with_orders=True),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fehc", description="Guaranteed local error bounds for P1 finite elements.")
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True
    helps = {
        "mesh": "write the meshes of the configuration",
        "kappa": "compute kappa_h and C(h) only",
        "estimate": "one estimator row per mesh",
        "sweep": "estimator against the band width epsilon",
        "converge": "estimator rows plus convergence orders",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--preset", choices=sorted(PRESETS), help="stock experiment providing defaults")
        p.add_argument("--out", default=".", help="output directory (default: current directory)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.preset)
        thread_count()
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ok = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"fehc: {exc}", file=sys.stderr)
        return 2
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: ``lspline {fit,kernel,gp,lambda-scan}``.

Every failure ends with one line on stderr of the form

    lspline-error code=<2|3|4> kind=<config|data|solver> msg=<text>

with exit status 2 (configuration), 3 (input data) or 4 (solver).
"""
import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
import yaml

from .diffop import LinearOperator, preset
from .errors import LSplineError
from .functionals import point_eval
from .gp import GPModel, posterior_mean
from .greens import make_kernel
from .solver import FitProblem, fit, select_lambda

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_SOLVER = 4
PRESETS = ("linear", "cubic", "exp_gamma", "harmonic_omega")
PAD = 0.05


class JobError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code

    @property
    def kind(self):
        return {EXIT_CONFIG: "config", EXIT_DATA: "data", EXIT_SOLVER: "solver"}[self.code]


def _config_error(msg):
    return JobError(EXIT_CONFIG, msg)


def _data_error(msg):
    return JobError(EXIT_DATA, msg)


@dataclass
class JobConfig:
    command: str = "fit"
    input: Optional[str] = None
    t_col: str = "t"
    y_col: str = "y"
    weight_col: Optional[str] = None
    interval: Optional[list] = None
    operator: str = "cubic"
    gamma: Optional[float] = None
    omega: Optional[float] = None
    lam: Optional[float] = 1.0
    lambda_grid: Optional[list] = None
    path: str = "auto"
    backend: str = "auto"
    grid_size: int = 401
    out_curve: Optional[str] = None
    out_json: Optional[str] = None
    out_alpha: Optional[str] = None
    out_scores: Optional[str] = None
    out_kernel: Optional[str] = None
    out_r0: Optional[str] = None
    extra: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("extra")
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)} - {"extra"}
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        unknown = sorted(set(d) - known)
        if unknown:
            raise _config_error(f"unknown config keys {unknown}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_yaml(cls, text):
        try:
            d = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise _config_error(f"config is not valid YAML: {exc}".replace("\n", " "))
        if not isinstance(d, dict):
            raise _config_error("config file must hold a mapping")
        return cls.from_dict(d)

    def validate(self):
        if self.command not in ("fit", "kernel", "gp", "lambda-scan"):
            raise _config_error(f"unknown command {self.command!r}")
        if self.path not in ("auto", "dense", "banded"):
            raise _config_error(f"path must be auto, dense or banded, not {self.path!r}")
        if self.backend not in ("auto", "closed_form", "quadrature"):
            raise _config_error(f"unknown kernel backend {self.backend!r}")
        if not isinstance(self.grid_size, int) or self.grid_size < 2:
            raise _config_error("grid-size must be an integer >= 2")
        if self.interval is not None:
            if len(self.interval) != 2 or not float(self.interval[0]) < float(self.interval[1]):
                raise _config_error("interval must be two numbers a < b")
            self.interval = [float(x) for x in self.interval]
        if self.lambda_grid is not None:
            self.lambda_grid = [float(x) for x in self.lambda_grid]
            if not self.lambda_grid or any(not x > 0 for x in self.lambda_grid):
                raise _config_error("lambda grid needs positive values")
        if self.lam is not None:
            self.lam = float(self.lam)
            if not self.lam >= 0:
                raise _config_error("lambda must be >= 0")
        if self.lam is None and not self.lambda_grid:
            raise _config_error("give --lambda or --lambda-grid")
        if self.command == "lambda-scan" and not self.lambda_grid:
            raise _config_error("lambda-scan needs --lambda-grid")
        return self


# -- input -------------------------------------------------------------------

def _is_missing(s):
    return s is None or s.strip().lower() in ("", "na", "nan", "null")


def read_table(cfg):
    """Read (t, y, d, line numbers) from the CSV named in ``cfg``.

    Rows with a missing response are dropped; the count is returned.
    """
    if not cfg.input:
        raise _config_error("no --input given")
    try:
        fh = open(cfg.input, newline="", encoding="utf-8")
    except OSError as exc:
        raise _data_error(f"cannot read {cfg.input}: {exc.strerror}")
    with fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        for c in (cfg.t_col, cfg.y_col, cfg.weight_col):
            if c is not None and c not in cols:
                raise _data_error(f"column {c!r} not in header {cols}")
        t, y, d, lines = [], [], [], []
        dropped = 0
        for row in reader:
            line = reader.line_num
            if _is_missing(row[cfg.y_col]):
                dropped += 1
                continue
            try:
                t.append(float(row[cfg.t_col]))
                y.append(float(row[cfg.y_col]))
                d.append(1.0 if cfg.weight_col is None else float(row[cfg.weight_col]))
            except (TypeError, ValueError):
                raise _data_error(f"non-numeric value on line {line}")
            lines.append(line)
    t, y, d, lines = map(np.asarray, (t, y, d, lines))
    if t.size == 0:
        raise _data_error("no usable rows")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y)) and np.all(np.isfinite(d))):
        raise _data_error("non-finite values in input")
    if np.any(d <= 0):
        bad = lines[d <= 0].tolist()
        raise _data_error(f"weights must be positive (lines {bad})")
    order = np.argsort(t, kind="stable")
    return t[order], y[order], d[order], lines[order], dropped


def parse_operator(cfg):
    spec = cfg.operator.strip()
    try:
        if spec in PRESETS:
            return preset(spec, gamma=cfg.gamma, omega=cfg.omega)
        if spec.startswith("{"):
            return LinearOperator.from_dict(json.loads(spec))
        if os.path.isfile(spec):
            with open(spec, encoding="utf-8") as fh:
                return LinearOperator.from_dict(json.load(fh))
    except (ValueError, KeyError, TypeError) as exc:
        raise _config_error(f"bad operator {spec!r}: {exc}")
    raise _config_error(f"operator must be one of {list(PRESETS)}, JSON or a JSON file")


def resolve_interval(cfg, t):
    if cfg.interval is not None:
        a, b = cfg.interval
        if t.min() < a or t.max() > b:
            raise _data_error(f"design points fall outside [{a}, {b}]")
        return a, b
    lo, hi = float(t.min()), float(t.max())
    pad = PAD * (hi - lo) if hi > lo else PAD * max(1.0, abs(lo))
    return lo - pad, hi + pad


# -- output ------------------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    if path is None:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([r[0] if isinstance(r[0], (int, np.integer)) else _fmt(r[0])]
                       + [_fmt(x) for x in r[1:]])


def _write_json(path, obj):
    if path is None:
        return
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _write_matrix(path, pts, G):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [_fmt(p) for p in pts])
        for p, row in zip(pts, G):
            w.writerow([_fmt(p)] + [_fmt(x) for x in row])


# -- jobs --------------------------------------------------------------------

def _setup(cfg):
    op = parse_operator(cfg)
    t, y, d, lines, dropped = read_table(cfg)
    if dropped:
        print(f"lspline: dropped {dropped} rows with missing {cfg.y_col}", file=sys.stderr)
    a, b = resolve_interval(cfg, t)
    kernel = make_kernel(op, (a, b), backend=cfg.backend)
    return kernel, t, y, d, lines


def _problem(cfg, kernel, t, y, d, lines, lam):
    try:
        p = FitProblem(kernel, tuple(point_eval(x) for x in t), y, d, lam)
    except ValueError as exc:
        raise _data_error(str(exc))
    if cfg.path == "banded":
        why = p.banded_ok()
        if why is not None:
            dup = np.nonzero(np.diff(t) <= 0)[0]
            if dup.size:
                pairs = sorted({int(lines[i]) for i in dup} | {int(lines[i + 1]) for i in dup})
                raise _data_error(f"banded path needs distinct t; duplicated at lines {pairs}")
            raise _data_error(why)
    return p


def run_fit(cfg):
    kernel, t, y, d, lines = _setup(cfg)
    scores = None
    lam = cfg.lam
    if cfg.lambda_grid:
        p0 = _problem(cfg, kernel, t, y, d, lines, cfg.lambda_grid[0])
        lam, scores = select_lambda(p0, cfg.lambda_grid)
    p = _problem(cfg, kernel, t, y, d, lines, lam)
    res = fit(p, path=cfg.path)
    grid = np.linspace(kernel.interval[0], kernel.interval[1], cfg.grid_size)
    curve = res.evaluate(grid)
    _write_csv(cfg.out_curve, ["t", "mu_hat"], zip(grid, curve))
    _write_csv(cfg.out_alpha, ["alpha_index", "value"], enumerate(res.alpha))
    out = res.to_dict()
    out.update(path=res.path, m=kernel.m, interval=list(kernel.interval))
    if scores is not None:
        out["gcv"] = scores
        _write_csv(cfg.out_scores, ["lambda", "gcv", "df", "rss"],
                   [(r["lambda"], r["gcv"], r["df"], r["rss"]) for r in scores])
    _write_json(cfg.out_json, out)
    return out


def run_lambda_scan(cfg):
    kernel, t, y, d, lines = _setup(cfg)
    p = _problem(cfg, kernel, t, y, d, lines, cfg.lambda_grid[0])
    best, table = select_lambda(p, cfg.lambda_grid)
    rows = [(r["lambda"], r["gcv"], r["df"], r["rss"]) for r in table]
    _write_csv(cfg.out_scores, ["lambda", "gcv", "df", "rss"], rows)
    _write_json(cfg.out_json, {"best_lambda": best, "table": table})
    if cfg.out_scores is None and cfg.out_json is None:
        print("lambda,gcv,df,rss")
        for r in rows:
            print(",".join(_fmt(x) for x in r))
    return best, table


def run_kernel_dump(cfg):
    """Gram matrices [R1(t_i, t_j)] (and R0 on request) at the design points."""
    kernel, t, *_ = _setup(cfg)
    if cfg.out_kernel is None and cfg.out_r0 is None:
        raise _config_error("kernel needs --out-kernel and/or --out-r0")
    if cfg.out_kernel is not None:
        _write_matrix(cfg.out_kernel, t, kernel.r1_gram(t))
    if cfg.out_r0 is not None:
        _write_matrix(cfg.out_r0, t, kernel.r0_gram(t))
    return kernel


def run_gp(cfg):
    """Posterior mean with covariance R1 of the operator and noise variance lambda."""
    kernel, t, y, d, lines = _setup(cfg)
    if cfg.lam is None:
        raise _config_error("gp needs --lambda (the noise variance)")
    gp = GPModel(lambda s, u: kernel.r1(s, u), cfg.lam)
    grid = np.linspace(kernel.interval[0], kernel.interval[1], cfg.grid_size)
    mean = posterior_mean(gp, t, y, grid)
    _write_csv(cfg.out_curve, ["t", "posterior_mean"], zip(grid, mean))
    _write_json(cfg.out_json, {"noise_var": cfg.lam, "n": int(t.size)})
    return mean


JOBS = {"fit": run_fit, "kernel": run_kernel_dump, "gp": run_gp, "lambda-scan": run_lambda_scan}


# -- argument parsing ----------------------------------------------------------

def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _add_common(sp):
    sp.add_argument("--config", help="YAML job file; flags override its entries")
    sp.add_argument("--input")
    sp.add_argument("--t-col", dest="t_col")
    sp.add_argument("--y-col", dest="y_col")
    sp.add_argument("--weight-col", dest="weight_col")
    sp.add_argument("--interval", type=_floats, help="a,b (default: data range padded 5%%)")
    sp.add_argument("--operator", help="preset name, JSON descriptor or JSON file")
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--omega", type=float)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--lambda-grid", dest="lambda_grid", type=_floats)
    sp.add_argument("--path", choices=["auto", "dense", "banded"])
    sp.add_argument("--backend", choices=["auto", "closed_form", "quadrature"])
    sp.add_argument("--grid-size", dest="grid_size", type=int)
    sp.add_argument("--out-curve", dest="out_curve")
    sp.add_argument("--out-json", dest="out_json")
    sp.add_argument("--out-alpha", dest="out_alpha")
    sp.add_argument("--out-scores", dest="out_scores")
    sp.add_argument("--out-kernel", dest="out_kernel")
    sp.add_argument("--out-r0", dest="out_r0")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _config_error(message)


def build_parser():
    ap = _Parser(prog="lspline", description="Penalised L-spline fits from CSV data.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    helps = {"fit": "fit a curve and write it on a grid",
             "kernel": "dump R1 (and R0) Gram matrices at the design points",
             "gp": "Gaussian-process posterior mean with covariance R1",
             "lambda-scan": "GCV scores over a lambda grid"}
    for name, h in helps.items():
        _add_common(sub.add_parser(name, help=h))
    return ap


def config_from_args(argv):
    ns = build_parser().parse_args(argv)
    if ns.command is None:
        raise _config_error("missing subcommand (fit, kernel, gp, lambda-scan)")
    base = {}
    if ns.config:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                base = JobConfig.from_yaml(fh.read()).to_dict()
        except OSError as exc:
            raise _config_error(f"cannot read config {ns.config}: {exc.strerror}")
    flags = {k: v for k, v in vars(ns).items() if v is not None and k != "config"}
    if "lambda_grid" in flags and "lam" not in flags:
        base["lam"] = None
    base.update(flags)
    return JobConfig.from_dict(base)


def main(argv=None):
    try:
        cfg = config_from_args(sys.argv[1:] if argv is None else argv)
        with np.errstate(all="ignore"):
            JOBS[cfg.command](cfg)
    except JobError as exc:
        msg = str(exc).replace("\n", " ")
        print(f"lspline-error code={exc.code} kind={exc.kind} msg={msg}", file=sys.stderr)
        return exc.code
    except (LSplineError, np.linalg.LinAlgError) as exc:
        msg = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        print(f"lspline-error code={EXIT_SOLVER} kind=solver msg={msg}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        msg = str(exc).replace("\n", " ")
        print(f"lspline-error code={EXIT_CONFIG} kind=config msg={msg}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())

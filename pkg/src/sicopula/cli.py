"""Command-line front end: fit, simulate, tau-curve, selftest.

Input is UTF-8 comma-separated CSV with a mandatory header row; decimal
points, no thousands separators, no NA tokens.  Configuration comes from a
flat ``key = value`` text file plus command-line flags; flags win.  Reports
are JSON (machine-readable) plus a human summary; curve tables are TSV with
the resolved configuration embedded as leading ``#`` comment lines.  All
outputs are deterministic given (input, config, seed).

Exit codes: 0 ok, 2 usage/parse/validation error, 3 estimation failure.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from .cond_ecdf import Dataset
from .copulas import FAMILIES, CopulaModel
from .errors import SicopulaError
from .estimator import EstimationConfig, config_summary, fit
from .kernels import KernelSpec, make_higher_order
from .link import link_curve
from .kendall import cond_tau_curve
from .simulate import DGPSpec, generate, run_replications

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ESTIMATION = 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# typed option schema shared by config files and flags
# ---------------------------------------------------------------------------

def _as_bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _as_float_list(s):
    return [float(v) for v in str(s).split(",") if v.strip() != ""]


def _as_str_list(s):
    return [v.strip() for v in str(s).split(",") if v.strip() != ""]


_OPTIONS = {
    "fit": {
        "input": str, "x_columns": _as_str_list, "z_columns": _as_str_list,
        "family": str, "out": str, "seed": int,
        "h": _as_float_list, "h_tilde": float, "h_tilde_exponent": float,
        "nu_n": float, "nu_exponent": float, "m_z": _as_float_list,
        "s_order": int, "starts": int, "max_iter": int, "simplex_tol": float,
        "index_kernel_base": str, "index_kernel_order": int,
        "z_kernel_base": str, "leave_one_out": _as_bool,
        "curve_points": int,
    },
    "simulate": {
        "family": str, "d": int, "p": int, "beta0": _as_float_list,
        "link": str, "c0": float, "c1": float, "covariate": str,
        "z_scale": float, "n": int, "seed": int, "reps": int, "out": str,
        "write_dataset": _as_bool,
        "h_tilde_exponent": float, "nu_exponent": float, "starts": int,
    },
    "tau-curve": {
        "input": str, "x_columns": _as_str_list, "z_columns": _as_str_list,
        "beta": _as_float_list, "out": str, "seed": int,
        "h_tilde": float, "h_tilde_exponent": float,
        "index_kernel_base": str, "index_kernel_order": int,
        "curve_points": int,
    },
    "selftest": {},
}

_DEFAULTS = {
    "fit": {"family": "gaussian", "out": ".", "seed": 0, "curve_points": 101},
    "simulate": {"family": "gaussian", "d": 2, "p": 2, "link": "tanh-tau",
                 "c0": 0.3, "c1": 0.25, "covariate": "uniform",
                 "z_scale": 1.0, "n": 500, "seed": 0, "reps": 0, "out": ".",
                 "write_dataset": True},
    "tau-curve": {"out": ".", "seed": 0, "curve_points": 101},
    "selftest": {},
}


def read_config_file(path: str, schema: dict) -> dict:
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}")
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if key not in schema:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = schema[key](value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}")
    return out


def resolve_options(subcommand: str, args: argparse.Namespace) -> dict:
    schema = _OPTIONS[subcommand]
    opts = dict(_DEFAULTS[subcommand])
    if getattr(args, "config", None):
        opts.update(read_config_file(args.config, schema))
    for key, conv in schema.items():
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            opts[key] = conv(val) if isinstance(val, str) else val
    return opts


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

_NA_TOKENS = {"", "na", "n/a", "nan", "null", "none", "inf", "-inf",
              "infinity", "-infinity"}


def read_csv(path: str):
    """Read a numeric CSV with header; rejects NA tokens with line numbers."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}")
    if not lines:
        raise UsageError(f"{path}: empty file")
    header = [c.strip() for c in lines[0].split(",")]
    if len(set(header)) != len(header):
        raise UsageError(f"{path}:1: duplicate column names in header")
    ncol = len(header)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != ncol:
            raise UsageError(
                f"{path}:{lineno}: expected {ncol} fields, got {len(fields)}")
        vals = []
        for cname, field in zip(header, fields):
            tok = field.strip()
            if tok.lower() in _NA_TOKENS:
                raise UsageError(
                    f"{path}:{lineno}: missing/non-finite value in "
                    f"column {cname!r}")
            try:
                v = float(tok)
            except ValueError:
                raise UsageError(
                    f"{path}:{lineno}: cannot parse {tok!r} in column "
                    f"{cname!r} as a number")
            if not math.isfinite(v):
                raise UsageError(
                    f"{path}:{lineno}: non-finite value in column {cname!r}")
            vals.append(v)
        rows.append(vals)
    if not rows:
        raise UsageError(f"{path}: no data rows")
    return header, np.asarray(rows, dtype=float)


def dataset_from_csv(path: str, x_cols, z_cols) -> Dataset:
    header, table = read_csv(path)
    for name in list(x_cols) + list(z_cols):
        if name not in header:
            raise UsageError(f"{path}: column {name!r} not in header "
                             f"{header}")
    overlap = set(x_cols) & set(z_cols)
    if overlap:
        raise UsageError(f"x and z columns overlap: {sorted(overlap)}")
    xi = [header.index(c) for c in x_cols]
    zi = [header.index(c) for c in z_cols]
    try:
        return Dataset(table[:, xi], table[:, zi], tuple(x_cols), tuple(z_cols))
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path: str, header, table: np.ndarray):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in table:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_tsv(path: str, columns, rows, config_lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in config_lines:
            fh.write(f"# {line}\n")
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


def _config_comment_lines(run: dict) -> list:
    return [f"{k}={run[k]}" for k in sorted(run)]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path: str, payload: dict):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _estimation_config(opts: dict) -> EstimationConfig:
    cfg = EstimationConfig()
    if "h" in opts:
        cfg.h = np.asarray(opts["h"], dtype=float)
    for key in ("h_tilde", "h_tilde_exponent", "nu_n", "nu_exponent",
                "s_order", "starts", "max_iter", "simplex_tol",
                "leave_one_out", "seed"):
        if key in opts:
            setattr(cfg, key, opts[key])
    if "m_z" in opts:
        mz = opts["m_z"]
        cfg.m_z = float(mz[0]) if len(mz) == 1 else np.asarray(mz, dtype=float)
    if "z_kernel_base" in opts:
        cfg.z_kernel = KernelSpec(opts["z_kernel_base"])  # order set later
    if "index_kernel_base" in opts or "index_kernel_order" in opts:
        base = opts.get("index_kernel_base", "quartic")
        order = int(opts.get("index_kernel_order", 2))
        cfg.index_kernel = make_higher_order(KernelSpec(base), order)
    return cfg


def _check_family(opts):
    if opts["family"] not in FAMILIES:
        raise UsageError(f"unknown family {opts['family']!r}; "
                         f"choose from {FAMILIES}")


def cmd_fit(opts: dict) -> int:
    for key in ("input", "x_columns", "z_columns"):
        if key not in opts:
            raise UsageError(f"fit needs {key!r} (flag or config file)")
    _check_family(opts)
    if len(opts["x_columns"]) < 2:
        raise UsageError("fit needs at least 2 x-columns")
    if len(opts["z_columns"]) < 2:
        raise UsageError("fit needs at least 2 z-columns")
    data = dataset_from_csv(opts["input"], opts["x_columns"],
                            opts["z_columns"])
    model = CopulaModel(opts["family"], data.d)
    cfg = _estimation_config(opts)
    outdir = opts["out"]
    os.makedirs(outdir, exist_ok=True)
    run = {"subcommand": "fit", "input": opts["input"],
           "x_columns": ",".join(opts["x_columns"]),
           "z_columns": ",".join(opts["z_columns"]),
           "family": opts["family"], "seed": opts["seed"],
           "curve_points": opts["curve_points"]}
    try:
        result = fit(data, model, cfg)
    except SicopulaError as exc:
        write_json(os.path.join(outdir, "fit_report.json"),
                   {"error": type(exc).__name__, "message": str(exc),
                    "run": run})
        print(f"estimation failed: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_ESTIMATION

    report = {
        "run": run,
        "beta_hat": result.beta_hat.beta,
        "criterion_value": result.criterion_value,
        "sigma_hat": result.sigma_hat,
        "s_hat": result.s_hat,
        "cov": result.cov,
        "se": result.se,
        "ci": result.ci,
        "diagnostics": result.diagnostics,
    }
    write_json(os.path.join(outdir, "fit_report.json"), report)

    proj = data.Z @ result.beta_hat.beta
    qlo, qhi = np.quantile(proj, [0.05, 0.95])
    grid = np.linspace(qlo, qhi, opts["curve_points"])
    h_hat = result.diagnostics["h_tilde_hat"]
    kcfg = result.diagnostics["config"]["index_kernel"]
    kern = make_higher_order(KernelSpec(kcfg["base"]), kcfg["order"])
    curve = link_curve(model, data, result.beta_hat.beta, grid, kern, h_hat)
    rows = [(e.tau_hat.y, e.tau_hat.value, e.theta_hat, e.clamped)
            for e in curve]
    conf_lines = _config_comment_lines(run) + _config_comment_lines(
        {f"est.{k}": v for k, v in result.diagnostics["config"].items()})
    write_tsv(os.path.join(outdir, "link_curve.tsv"),
              ["y", "tau_hat", "theta_hat", "clamped"], rows, conf_lines)

    with open(os.path.join(outdir, "fit_summary.txt"), "w",
              encoding="utf-8", newline="\n") as fh:
        b = result.beta_hat.beta
        fh.write("single-index copula fit\n")
        fh.write(f"family: {opts['family']}  d={data.d}  p={data.p}  "
                 f"n={data.n}  kept={result.diagnostics['n_kept']}\n")
        fh.write(f"beta_hat: {' '.join(repr(float(v)) for v in b)}\n")
        for j in range(1, data.p):
            fh.write(f"  beta[{j + 1}] = {b[j]!r}  se = "
                     f"{result.se[j - 1]!r}  ci95 = "
                     f"[{result.ci[j - 1, 0]!r}, {result.ci[j - 1, 1]!r}]\n")
        fh.write(f"criterion: {result.criterion_value!r}\n")
        fh.write(f"clamp fraction: "
                 f"{result.diagnostics['clamp_fraction']!r}\n")
        fh.write(f"weak identification: "
                 f"{result.diagnostics['weak_identification']}\n")
    return EXIT_OK


def cmd_simulate(opts: dict) -> int:
    _check_family(opts)
    try:
        spec = DGPSpec(opts["family"], opts["d"], opts["p"],
                       np.asarray(opts.get("beta0", [1.0] * opts["p"]),
                                  dtype=float),
                       opts["link"], opts["c0"], opts["c1"],
                       covariate=opts["covariate"], z_scale=opts["z_scale"],
                       n=opts["n"], seed=opts["seed"])
    except ValueError as exc:
        raise UsageError(f"invalid DGP spec: {exc}")
    outdir = opts["out"]
    os.makedirs(outdir, exist_ok=True)
    run = {"subcommand": "simulate", "family": opts["family"],
           "d": opts["d"], "p": opts["p"],
           "beta0": ",".join(repr(float(v)) for v in spec.beta0),
           "link": opts["link"], "c0": opts["c0"], "c1": opts["c1"],
           "covariate": opts["covariate"], "z_scale": opts["z_scale"],
           "n": opts["n"], "seed": opts["seed"], "reps": opts["reps"]}
    if opts["write_dataset"]:
        data = generate(spec)
        header = list(data.x_names) + list(data.z_names)
        write_csv(os.path.join(outdir, "dataset.csv"), header,
                  np.hstack([data.X, data.Z]))
    if opts["reps"] > 0:
        cfg = _estimation_config(opts)
        report = run_replications(spec, opts["reps"], cfg)
        rows = [(r.rep, r.ok, r.beta2, r.se, r.ci_lo, r.ci_hi, r.covered,
                 r.clamp_fraction, r.n_kept, r.error or "-")
                for r in report.rows]
        body = []
        for row in rows:
            body.append(tuple(
                v if isinstance(v, str) else v for v in row))
        lines = _config_comment_lines(run)
        lines.append(f"aggregate.bias={report.bias!r}")
        lines.append(f"aggregate.rmse={report.rmse!r}")
        lines.append(f"aggregate.coverage={report.coverage!r}")
        lines.append(f"aggregate.n_failed={report.n_failed}")
        path = os.path.join(outdir, "replications.tsv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in lines:
                fh.write(f"# {line}\n")
            fh.write("rep\tok\tbeta2_hat\tse\tci_lo\tci_hi\tcovered\t"
                     "clamp_fraction\tn_kept\terror\n")
            for row in body:
                out = []
                for v in row:
                    out.append(v if isinstance(v, str) else _fmt(v))
                fh.write("\t".join(out) + "\n")
    return EXIT_OK


def cmd_tau_curve(opts: dict) -> int:
    for key in ("input", "x_columns", "z_columns", "beta"):
        if key not in opts:
            raise UsageError(f"tau-curve needs {key!r}")
    data = dataset_from_csv(opts["input"], opts["x_columns"],
                            opts["z_columns"])
    beta = np.asarray(opts["beta"], dtype=float)
    if beta.shape[0] != data.p:
        raise UsageError(f"beta has length {beta.shape[0]}, expected "
                         f"p = {data.p}")
    if beta[0] != 1.0:
        raise UsageError("beta[0] must be exactly 1 (identifiability "
                         "normalization)")
    proj = data.Z @ beta
    if "h_tilde" in opts:
        h_tilde = float(opts["h_tilde"])
    else:
        expo = -abs(opts.get("h_tilde_exponent",
                             EstimationConfig().h_tilde_exponent))
        h_tilde = float(np.std(proj, ddof=1) * float(data.n) ** expo)
    base = opts.get("index_kernel_base", "quartic")
    order = int(opts.get("index_kernel_order", 2))
    kern = make_higher_order(KernelSpec(base), order)
    qlo, qhi = np.quantile(proj, [0.05, 0.95])
    grid = np.linspace(qlo, qhi, opts["curve_points"])
    curve = cond_tau_curve(data, beta, grid, kern, h_tilde)
    outdir = opts["out"]
    os.makedirs(outdir, exist_ok=True)
    run = {"subcommand": "tau-curve", "input": opts["input"],
           "x_columns": ",".join(opts["x_columns"]),
           "z_columns": ",".join(opts["z_columns"]),
           "beta": ",".join(repr(float(v)) for v in beta),
           "h_tilde": h_tilde, "kernel_base": base, "kernel_order": order,
           "curve_points": opts["curve_points"], "seed": opts["seed"]}
    rows = [(t.y, t.value, t.effective_weight_mass) for t in curve]
    write_tsv(os.path.join(outdir, "tau_curve.tsv"),
              ["y", "tau_hat", "effective_weight_mass"], rows,
              _config_comment_lines(run))
    return EXIT_OK


def cmd_selftest(_opts: dict) -> int:
    """Fast consistency tier: closed-form values and invariants."""
    import time
    from scipy.special import ndtr as _ndtr
    from . import copulas as cp
    from . import kendall as kd
    from .kernels import eval_kernel, kernel_moment

    checks = []

    def check(name, fn):
        t0 = time.perf_counter()
        try:
            fn()
            checks.append((name, True, time.perf_counter() - t0))
        except AssertionError as exc:
            checks.append((name, False, time.perf_counter() - t0))
            print(f"FAIL {name}: {exc}")

    def kernel_checks():
        k = KernelSpec("epanechnikov")
        assert abs(float(eval_kernel(k, 0.0)) - 0.75) < 1e-15
        assert abs(kernel_moment(k, 0) - 1.0) < 1e-8
        k4 = make_higher_order(KernelSpec("epanechnikov"), 4)
        assert abs(kernel_moment(k4, 2)) < 1e-6

    def tau_checks():
        m2 = CopulaModel("clayton", 2)
        assert abs(cp.theta_to_tau(m2, 2.0) - 0.5) < 1e-12
        m3 = CopulaModel("clayton", 3)
        assert abs(cp.theta_to_tau(m3, 2.0) - 1.5 / 7) < 1e-12
        g = CopulaModel("gaussian", 2)
        assert abs(cp.theta_to_tau(g, math.sin(math.pi / 4)) - 0.5) < 1e-12
        gu = CopulaModel("gumbel", 2)
        assert abs(cp.tau_to_theta(gu, 0.5) - 2.0) < 1e-5

    def grad_checks():
        rng = np.random.default_rng(0)
        for fam, th in (("gaussian", 0.4), ("clayton", 2.0), ("gumbel", 2.0)):
            m = CopulaModel(fam, 2)
            u = rng.uniform(0.05, 0.95, size=(20, 2))
            eps = 1e-6
            fd = (cp.log_density(m, th + eps, u)
                  - cp.log_density(m, th - eps, u)) / (2 * eps)
            an = cp.grad_theta_log_density(m, th, u)
            assert np.max(np.abs(fd - an) / (1 + np.abs(an))) < 1e-5

    def kendall_checks():
        rng = np.random.default_rng(1)
        x1 = rng.standard_normal(80)
        data = Dataset(np.column_stack([x1, x1]),
                       rng.standard_normal((80, 2)))
        k = KernelSpec("epanechnikov")
        t = kd.cond_tau(data, [1.0, 0.0], 0.0, k, np.inf)
        assert t.value == 1.0

    def density_checks():
        m = CopulaModel("clayton", 2)
        val = float(cp.log_density(m, 2.0, [0.5, 0.5]))
        assert abs(val - (math.log(192) - 2.5 * math.log(7))) < 1e-12

    check("kernel moments and values", kernel_checks)
    check("tau maps", tau_checks)
    check("analytic gradients vs finite differences", grad_checks)
    check("kendall comonotone exactness", kendall_checks)
    check("clayton closed-form density", density_checks)
    n_bad = sum(1 for _, ok, _ in checks if not ok)
    for name, ok, el in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name} ({el:.2f}s)")
    print(f"selftest: {len(checks) - n_bad}/{len(checks)} passed")
    return EXIT_OK if n_bad == 0 else EXIT_ESTIMATION


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sicopula",
        description="Single-index conditional copula estimation")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in ("fit", "simulate", "tau-curve", "selftest"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value config file")
        for key in _OPTIONS[name]:
            sp.add_argument(f"--{key.replace('_', '-')}", dest=key,
                            default=None)
    return parser


_COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate,
             "tau-curve": cmd_tau_curve, "selftest": cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        opts = resolve_options(args.subcommand, args)
        return _COMMANDS[args.subcommand](opts)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

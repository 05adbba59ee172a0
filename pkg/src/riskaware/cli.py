"""Command-line experiment runner: frontier scans, margin reports, skewness sweeps, probes.

Every run resolves a flat configuration (INI file, then command-line
overrides), computes one shared posterior batch per model setting, and
writes CSV/JSON files that embed the SHA-256 of the run manifest.  Outputs
are buffered and written only when the run completes, so a failed run
leaves no partial files.

Exit codes: 0 success, 1 an invariant check failed, 2 configuration or
model error, 3 too many posterior failures (> 0.1% of observations).
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import logging
import math
import os
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, InvalidInputError, RiskAwareError
from .functionals import (EstimatorFn, affine, conditional_mean, constant, mix, risk_aware)
from .margin import margin_report, mu_star_localization
from .model import build_model
from .numerics import RngStream
from .skewness import monotone_trend, skewness_d
from .tradeoff import default_grid, frontier_scan, verify_uncertainty

log = logging.getLogger("riskaware")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_FAILURES = 0, 1, 2, 3
MAX_FAILURE_RATE = 1e-3
NSIG = 3.0

RUN_KEYS = {"samples", "seed", "mu_grid", "workers", "quantile", "rho_max", "rho_min",
            "out", "gnuplot", "sweep", "probes"}
SECTIONS = {"run", "model", "params"}


# --------------------------------------------------------------------------
# configuration

@dataclass
class ExperimentConfig:
    command: str
    model: str = ""
    params: dict = field(default_factory=dict)
    samples: int = 20000
    seed: int = 0
    mu_grid: str = "1e-4:1e4:60"
    workers: int = 1
    quantile: float = 0.001
    rho_max: float | None = None
    rho_min: float | None = None
    out: str = "."
    gnuplot: bool = False
    sweep: str | None = None
    probes: list = field(default_factory=list)

    def echo(self) -> dict:
        d = {k: getattr(self, k) for k in ("command", "model", "params", "samples", "seed",
                                           "mu_grid", "quantile", "rho_max", "rho_min",
                                           "sweep", "probes")}
        d["params"] = dict(sorted(self.params.items()))
        return d


def _parse_param(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"parameter {text!r} is not of the form key=value")
    key, value = text.split("=", 1)
    key = key.strip()
    if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", key):
        raise ConfigError(f"bad parameter name {key!r}")
    return key, value.strip()


def _as_bool(value: str) -> bool:
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def read_config_file(path: str) -> dict:
    """Read the INI-style config; unknown sections or keys raise ConfigError."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    unknown = set(cp.sections()) - SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    out: dict = {"params": {}}
    if cp.has_section("run"):
        for key, value in cp.items("run"):
            if key not in RUN_KEYS:
                raise ConfigError(f"unknown key {key!r} in [run]")
            out[key] = value
    if cp.has_section("model"):
        for key, value in cp.items("model"):
            if key != "name":
                raise ConfigError(f"unknown key {key!r} in [model] (only 'name')")
            out["model"] = value
    if cp.has_section("params"):
        out["params"] = dict(cp.items("params"))
    return out


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    file_cfg = read_config_file(args.config) if args.config else {"params": {}}
    cfg = ExperimentConfig(command=args.command)
    params = dict(file_cfg.get("params", {}))
    for text in args.param or []:
        k, v = _parse_param(text)
        params[k] = v
    cfg.params = params
    cfg.model = args.model or file_cfg.get("model", "")
    if not cfg.model:
        raise ConfigError("no model given (use --model or [model] name=...)")

    def pick(name, conv):
        value = getattr(args, name, None)
        if value is None:
            value = file_cfg.get(name)
        if value is None:
            return getattr(cfg, name)
        try:
            return conv(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {name}: {value!r}") from exc

    cfg.samples = pick("samples", int)
    cfg.seed = pick("seed", int)
    cfg.mu_grid = pick("mu_grid", str)
    cfg.workers = pick("workers", int)
    cfg.quantile = pick("quantile", float)
    cfg.rho_max = pick("rho_max", lambda v: None if str(v).strip() == "" else float(v))
    cfg.rho_min = pick("rho_min", lambda v: None if str(v).strip() == "" else float(v))
    cfg.out = pick("out", str)
    cfg.gnuplot = bool(args.gnuplot) or _as_bool(file_cfg.get("gnuplot", "false"))
    cfg.sweep = pick("sweep", str)
    probes = list(args.probe or [])
    if not probes and file_cfg.get("probes"):
        probes = [p.strip() for p in file_cfg["probes"].split(";") if p.strip()]
    cfg.probes = probes
    if cfg.samples < 1:
        raise ConfigError("samples must be positive")
    if cfg.workers < 1:
        raise ConfigError("workers must be positive")
    if not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if not 0 < cfg.quantile <= 0.05:
        raise ConfigError("quantile must lie in (0, 0.05]")
    parse_grid(cfg.mu_grid)
    if cfg.command == "skew-sweep" and not cfg.sweep:
        raise ConfigError("skew-sweep needs --sweep param=lo:hi:count")
    if cfg.sweep:
        parse_sweep(cfg.sweep)
    for p in cfg.probes:
        parse_probe(p)
    return cfg


def parse_grid(text: str) -> list[float]:
    """``lo:hi:count`` -> ``{0} U logspace U {inf}``."""
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ConfigError(f"mu grid {text!r} is not lo:hi:count")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
        return default_grid(lo, hi, count)
    except (ValueError, InvalidInputError) as exc:
        raise ConfigError(f"bad mu grid {text!r}: {exc}") from exc


def parse_sweep(text: str) -> tuple[str, list[float]]:
    """``name=lo:hi:count`` (linear) or ``name=v1,v2,...``."""
    name, spec = _parse_param(text)
    try:
        if ":" in spec:
            lo, hi, count = spec.split(":")
            count = int(count)
            if count < 1:
                raise ValueError("count must be positive")
            values = np.linspace(float(lo), float(hi), count).tolist() if count > 1 \
                else [float(lo)]
        else:
            values = [float(v) for v in spec.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep {text!r}: {exc}") from exc
    if not values:
        raise ConfigError(f"empty sweep {text!r}")
    return name, values


_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_PROBES = [
    (re.compile(r"mean"), lambda m: conditional_mean()),
    (re.compile(rf"affine\(\s*({_NUM})\s*,\s*({_NUM})\s*\)"),
     lambda m: affine(float(m[1]), float(m[2]))),
    (re.compile(rf"mix\(\s*({_NUM})\s*\)"), lambda m: mix(float(m[1]))),
    (re.compile(rf"const\(\s*({_NUM})\s*\)"), lambda m: constant(float(m[1]))),
    (re.compile(rf"risk_aware\(\s*({_NUM}|inf)\s*\)"), lambda m: risk_aware(m[1])),
]


def parse_probe(text: str) -> EstimatorFn:
    """Probe grammar: ``mean | affine(a,b) | mix(w) | const(c) | risk_aware(mu)``."""
    s = text.strip()
    for pattern, build in _PROBES:
        m = pattern.fullmatch(s)
        if m:
            try:
                est = build(m)
            except InvalidInputError as exc:
                raise ConfigError(f"bad probe {text!r}: {exc}") from exc
            return EstimatorFn(s, est.fn)
    raise ConfigError(f"unparseable probe {text!r}; expected mean, affine(a,b), mix(w), "
                      "const(c) or risk_aware(mu)")


# --------------------------------------------------------------------------
# serialisation

def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def dump_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def dump_csv(header: list[str], rows, manifest_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# manifest_sha256: {manifest_hash}\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join("%.12g" % float(v) for v in row) + "\n")
    return buf.getvalue()


def manifest_hash(manifest: dict) -> str:
    return hashlib.sha256(dump_json(manifest).encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------
# commands

class RunFailure(RiskAwareError):
    pass


def _posteriors(cfg: ExperimentConfig, params: dict):
    try:
        model = build_model(cfg.model, **params)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from exc
    batch = model.sample_observations(cfg.samples, RngStream(cfg.seed, 0))
    post = model.posterior_batch(batch, workers=cfg.workers)
    if post.failure_rate > MAX_FAILURE_RATE:
        raise RunFailure(f"{post.n_failed} of {post.n_failed + len(post)} posterior "
                         f"evaluations failed (limit {MAX_FAILURE_RATE:.1%})")
    return model, post


def _frontier_rows(curve):
    mse, sev = curve.column("mse"), curve.column("sev")
    mse_n = mse / np.min(mse)
    sev_n = sev / np.min(sev)
    return [
        (p.mu, p.mse.value, p.mse.std_error, p.sev.value, p.sev.std_error,
         p.product.value, p.product.std_error, mn, sn, mn * sn)
        for p, mn, sn in zip(curve.points, mse_n, sev_n)
    ]


FRONTIER_HEADER = ["mu", "mse", "mse_se", "sev", "sev_se", "product", "product_se",
                   "mse_norm", "sev_norm", "product_norm"]


def cmd_frontier(cfg: ExperimentConfig):
    """Frontier scan: CSV of mse/sev/product over mu plus h, mu* and anchor."""
    model, post = _posteriors(cfg, cfg.params)
    curve = frontier_scan(grid=parse_grid(cfg.mu_grid), post=post)
    checks = {
        "monotone": not curve.warnings,
        "h_above_anchor": curve.h_value >= curve.anchor - NSIG * math.hypot(
            curve.h_se, curve.anchor_se) - 1e-12 * abs(curve.anchor),
    }
    summary = {"h_value": curve.h_value, "h_se": curve.h_se, "mu_star": curve.mu_star,
               "anchor": curve.anchor, "anchor_se": curve.anchor_se,
               "warnings": curve.warnings, "n_failed": post.n_failed,
               "n_samples": len(post), "checks": checks}
    return ({"frontier.csv": ("csv", FRONTIER_HEADER, _frontier_rows(curve)),
             "frontier.json": ("json", summary)}, checks, {"frontier": summary},
            {"frontier.gp": _GNUPLOT_FRONTIER})


def _margin_summary(cfg, post):
    grid = parse_grid(cfg.mu_grid)
    rep = margin_report(post=post, quantile=cfg.quantile, rho_min=cfg.rho_min,
                        rho_max=cfg.rho_max)
    curve = frontier_scan(grid=grid, post=post, refine=False)
    finite = [p for p in curve.points if math.isfinite(p.mu)]
    em = rep.expected_margin
    tol_low = NSIG * rep.e_lower.paired_se(em) + 1e-12 * abs(em.value)
    tol_up = NSIG * rep.e_upper.paired_se(em) + 1e-12 * abs(em.value)
    anchor = curve.anchor
    checks = {
        "sandwich": bool(rep.e_lower.value <= em.value + tol_low
                         and em.value <= rep.e_upper.value + tol_up),
        "upper_bound": all(p.product.value - anchor <= rep.u_bound + NSIG * p.product.std_error
                           + 1e-12 * abs(anchor) for p in finite),
    }
    if rep.spectral.rho_min is not None:
        checks["lower_bound"] = all(
            p.product.value - anchor >= rep.l_bound(p.mu) - NSIG * p.product.std_error
            - 1e-12 * abs(anchor) for p in finite)
    out = rep.as_dict(mu_grid=[p.mu for p in finite])
    out["checks"] = checks
    try:
        out["mu_star_localization"] = mu_star_localization(rep, post=post, eps=0.1).as_dict()
    except RiskAwareError as exc:
        out["mu_star_localization"] = {"unavailable": str(exc)}
    return out, checks


def cmd_margin(cfg: ExperimentConfig):
    """Margin report: expected margin, d, sandwich terms, U and L(mu); optional sweep."""
    if not cfg.sweep:
        _, post = _posteriors(cfg, cfg.params)
        summary, checks = _margin_summary(cfg, post)
        return ({"margin.json": ("json", summary)}, checks, {"margin": summary}, {})
    name, values = parse_sweep(cfg.sweep)
    reports, rows, checks = [], [], {}
    for v in values:
        _, post = _posteriors(cfg, {**cfg.params, name: repr(v)})
        s, c = _margin_summary(cfg, post)
        s["param"] = {name: v}
        reports.append(s)
        rows.append((v, s["d_value"], s["d_se"], s["expected_margin"], s["e_lower"],
                     s["e_upper"], s["u_bound"], s["spectral"]["rho_max"]))
        for k, ok in c.items():
            checks[k] = checks.get(k, True) and ok
    summary = {"sweep": name, "reports": reports,
               "u_bound_trend": monotone_trend([r["u_bound"] for r in reports]),
               "d_trend": monotone_trend([r["d_value"] for r in reports]), "checks": checks}
    header = ["param", "d", "d_se", "expected_margin", "e_lower", "e_upper", "u_bound",
              "rho_max"]
    return ({"margin_sweep.csv": ("csv", header, rows), "margin.json": ("json", summary)},
            checks, {"margin": summary}, {"margin_sweep.gp": _GNUPLOT_MARGIN})


def cmd_skew_sweep(cfg: ExperimentConfig):
    """Skewness d over a parameter sweep."""
    name, values = parse_sweep(cfg.sweep)
    rows = []
    for v in values:
        _, post = _posteriors(cfg, {**cfg.params, name: repr(v)})
        d = skewness_d(post=post)
        rows.append((v, d.d, d.std_error))
    checks = {"nonnegative": all(r[1] >= 0 for r in rows)}
    summary = {"sweep": name, "values": values, "d": [r[1] for r in rows],
               "d_se": [r[2] for r in rows], "trend": monotone_trend([r[1] for r in rows]),
               "checks": checks}
    return ({"skew_sweep.csv": ("csv", ["param", "d", "d_se"], rows),
             "skew_sweep.json": ("json", summary)}, checks, {"skew_sweep": summary},
            {"skew_sweep.gp": _GNUPLOT_SKEW})


def cmd_verify(cfg: ExperimentConfig):
    """Check probe estimators against the characteristic constant."""
    probes = [parse_probe(p) for p in (cfg.probes or ["mean"])]
    _, post = _posteriors(cfg, cfg.params)
    curve = frontier_scan(grid=parse_grid(cfg.mu_grid), post=post)
    verdicts = [verify_uncertainty(None, p, curve, post=post, nsig=NSIG).as_dict()
                for p in probes]
    checks = {"uncertainty_principle": all(v["passed"] for v in verdicts)}
    summary = {"h_value": curve.h_value, "mu_star": curve.mu_star, "anchor": curve.anchor,
               "probes": verdicts, "checks": checks}
    return ({"verify.json": ("json", summary)}, checks, {"verify": summary}, {})


COMMANDS = {"frontier": cmd_frontier, "margin": cmd_margin, "skew-sweep": cmd_skew_sweep,
            "verify": cmd_verify}

_GNUPLOT_FRONTIER = """set datafile separator ','
set datafile commentschars '#'
set logscale x
set xlabel 'mu'
set key top left
plot 'frontier.csv' every ::1 using 1:8 with lines title 'mse / min mse', \\
     '' every ::1 using 1:9 with lines title 'sev / min sev', \\
     '' every ::1 using 1:10 with lines title 'product (normalised)'
"""
_GNUPLOT_MARGIN = """set datafile separator ','
set datafile commentschars '#'
set xlabel 'parameter'
set ylabel 'U'
plot 'margin_sweep.csv' every ::1 using 1:7 with linespoints title 'upper bound U'
"""
_GNUPLOT_SKEW = """set datafile separator ','
set datafile commentschars '#'
set xlabel 'parameter'
set ylabel 'd'
plot 'skew_sweep.csv' every ::1 using 1:2:3 with yerrorlines title 'd'
"""


def run(cfg: ExperimentConfig) -> int:
    """Execute one configured command; returns the exit code."""
    start = time.perf_counter()
    outputs, checks, stats, scripts = COMMANDS[cfg.command](cfg)
    manifest = {"config": cfg.echo(), "version": __version__, "statistics": stats,
                "checks": checks}
    digest = manifest_hash(manifest)
    files = {}
    for name, spec in outputs.items():
        if spec[0] == "csv":
            files[name] = dump_csv(spec[1], spec[2], digest)
        else:
            files[name] = dump_json({**spec[1], "manifest_sha256": digest})
    files["manifest.json"] = dump_json({**manifest, "manifest_sha256": digest})
    if cfg.gnuplot:
        for name, text in scripts.items():
            files[name] = f"# manifest_sha256: {digest}\n{text}"
    elapsed = time.perf_counter() - start
    files["run.log"] = (f"command={cfg.command} model={cfg.model} manifest_sha256={digest}\n"
                        f"wall_time_s={elapsed:.3f} workers={cfg.workers}\n")
    write_outputs(Path(cfg.out), files)
    failed = [k for k, ok in checks.items() if not ok]
    if failed:
        log.error("invariant checks failed: %s", ", ".join(failed))
        return EXIT_CHECK
    return EXIT_OK


def write_outputs(out: Path, files: dict) -> None:
    """Write all files or none: temporaries first, then rename; clean up on error."""
    out.mkdir(parents=True, exist_ok=True)
    tmp = []
    try:
        for name, text in files.items():
            path = out / (name + ".partial")
            path.write_text(text, encoding="utf-8")
            tmp.append(path)
        for path in tmp:
            os.replace(path, path.with_suffix(""))
    except OSError:
        for path in tmp:
            path.unlink(missing_ok=True)
        raise


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="model name (gaussian, exp_noise, lognormal_mult, "
                        "gamma_hidden, exp_hidden, lognormal_hidden, uniform_hidden, sample_file)")
    common.add_argument("--param", action="append", metavar="KEY=VAL",
                        help="model parameter (repeatable)")
    common.add_argument("--samples", type=int, help="outer observation count (default 20000)")
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--mu-grid", dest="mu_grid", metavar="LO:HI:COUNT",
                        help="log-spaced mu grid; 0 and inf are always added "
                             "(default 1e-4:1e4:60)")
    common.add_argument("--rho-max", dest="rho_max", type=float, help="override rho_max")
    common.add_argument("--rho-min", dest="rho_min", type=float, help="override rho_min")
    common.add_argument("--quantile", type=float, help="spectral quantile q (default 0.001)")
    common.add_argument("--workers", type=int, help="worker threads (default 1)")
    common.add_argument("--out", help="output directory (default .)")
    common.add_argument("--config", help="INI config file; command-line flags override it")
    common.add_argument("--gnuplot", action="store_true", help="also write gnuplot scripts")
    common.add_argument("--sweep", metavar="NAME=LO:HI:COUNT|V1,V2,...",
                        help="parameter sweep (skew-sweep, margin)")
    common.add_argument("--probe", action="append",
                        help="probe estimator for verify (repeatable): mean, affine(a,b), "
                             "mix(w), const(c), risk_aware(mu)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="riskaware", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=COMMANDS[name].__doc__)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return run(cfg)
    except (ConfigError, InvalidInputError) as exc:
        print(f"riskaware: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunFailure as exc:
        print(f"riskaware: {exc}", file=sys.stderr)
        return EXIT_FAILURES
    except RiskAwareError as exc:
        print(f"riskaware: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command-line front end: ``qcd {simulate,bounds,oracle,sweep}``.

Every subcommand writes a CSV (``--output``, default stdout) and, when the
CSV goes to a file, a JSON run manifest next to it (``<output>.manifest.json``
unless ``--manifest`` says otherwise).  CSV bodies depend only on the resolved
configuration, so two runs with the same seed produce identical bytes; the
start time and wall time live in the manifest.

Exit status: 0 success, 2 usage or validation error, 3 a certification check
failed (a ``verdict`` column contains ``fail``), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bounds import asymptotic_lower_bound, bound_report, latency_upper_bound
from .detector import FixedThreshold, ThresholdPolicy, TimeVaryingThreshold
from .dist import DistributionPair, GaussianMeanShift, pair_from_params
from .errors import ConvergenceError, QCDError, UnsupportedInstanceError, UsageError
from .montecarlo import (
    DEFAULT_LEVEL,
    empirical_latency,
    estimate_false_alarm,
    estimate_miss,
)
from .oracle import exact_false_alarm, exact_high_prob_latency, exact_miss_probability

__all__ = ["main", "build_parser", "resolve_config", "COLUMNS"]

log = logging.getLogger("qcd")

EXIT_OK, EXIT_USAGE, EXIT_CERT, EXIT_NUMERIC = 0, 2, 3, 4

COLUMNS = {
    "simulate": ["T", "nu", "d", "quantity", "value", "successes", "trials",
                 "ci_low", "ci_high", "level", "seed", "target", "verdict"],
    "bounds": ["T", "delta_f", "delta_d", "r", "theta_star", "upper_bound",
               "upper_bound_samples", "lower_bound"],
    "oracle": ["T", "nu", "d", "quantity", "value", "target", "verdict"],
    "sweep": ["T", "quantity", "value", "ci_low", "ci_high"],
}

SWEEP_QUANTITIES = ("empirical_latency", "upper_bound", "lower_bound", "exact_latency")

DEFAULTS = {
    "dist": None,
    "mu": None,
    "sigma": 1.0,
    "p0": None,
    "p1": None,
    "policy": "tvt",
    "delta_f": 0.05,
    "delta_d": 0.05,
    "r": 2.0,
    "b": None,
    "horizon": None,
    "nu": "inf",
    "d": None,
    "trials": 10_000,
    "seed": None,
    "workers": 1,
    "level": DEFAULT_LEVEL,
    "quantities": "empirical_latency,upper_bound,lower_bound",
    "exact": False,
    "latency": False,
    "output": "-",
    "manifest": None,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    # defaults are SUPPRESS so that a config file can fill anything not given
    S = argparse.SUPPRESS
    g = common.add_argument_group("instance")
    g.add_argument("--config", default=S, help="flat YAML or JSON file keyed by flag names")
    g.add_argument("--dist", default=S, choices=["gaussian", "bernoulli", "table"])
    g.add_argument("--mu", type=float, default=S, help="gaussian post-change mean")
    g.add_argument("--sigma", type=float, default=S, help="gaussian noise scale (default 1)")
    g.add_argument("--p0", default=S, help="pre-change probability (comma list for table)")
    g.add_argument("--p1", default=S, help="post-change probability (comma list for table)")
    g.add_argument("--policy", default=S, choices=["tvt", "fixed"])
    g.add_argument("--delta-f", dest="delta_f", type=float, default=S)
    g.add_argument("--delta-d", dest="delta_d", type=float, default=S)
    g.add_argument("--r", type=float, default=S)
    g.add_argument("--b", type=float, default=S, help="fixed threshold")
    g.add_argument("--horizon", default=S, help="one or more horizons, comma separated")
    g.add_argument("--nu", default=S, help="'inf', a comma list of change points, or 'grid'")
    g.add_argument("--d", type=int, default=S, help="detection window for miss probabilities")
    r = common.add_argument_group("run")
    r.add_argument("--trials", type=int, default=S)
    r.add_argument("--seed", type=int, default=S)
    r.add_argument("--workers", type=int, default=S)
    r.add_argument("--level", type=float, default=S, help="confidence level (default 0.99)")
    r.add_argument("--output", default=S, help="CSV path, '-' for stdout")
    r.add_argument("--manifest", default=S, help="manifest path")
    r.add_argument("-v", "--verbose", action="store_true", default=S)

    parser = _Parser(prog="qcd", description="Time-varying-threshold CuSum toolkit.")
    parser.add_argument("--version", action="version", version=f"qcd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common],
                   help="Monte Carlo false-alarm, miss and latency estimates")
    sub.add_parser("bounds", parents=[common], help="latency upper and lower bounds")
    o = sub.add_parser("oracle", parents=[common],
                       help="exact probabilities for discrete pairs")
    o.add_argument("--latency", action="store_true", default=S,
                   help="also compute the exact high-probability latency")
    w = sub.add_parser("sweep", parents=[common], help="latency curves over horizons")
    w.add_argument("--quantities", default=S,
                   help=f"comma list from {','.join(SWEEP_QUANTITIES)}")
    w.add_argument("--exact", action="store_true", default=S,
                   help="add exact_latency (discrete pairs)")
    return parser


def _load_config(path: str) -> dict:
    text = Path(path).read_text()
    data = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must be a flat mapping")
    out = {}
    for key, value in data.items():
        name = str(key).lstrip("-").replace("-", "_")
        if name not in DEFAULTS:
            raise UsageError(f"unknown config key {key!r} in {path}")
        if isinstance(value, (dict, list)) and name not in ("horizon", "nu", "p0", "p1"):
            raise UsageError(f"config key {key!r} must be a scalar")
        out[name] = value
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge flags over config-file values over defaults."""
    given = vars(args).copy()
    cfg = dict(DEFAULTS)
    if "config" in given:
        cfg.update(_load_config(given.pop("config")))
    given.pop("verbose", None)
    command = given.pop("command")
    cfg.update(given)
    cfg["command"] = command
    return cfg


def _as_list(value) -> list:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    if isinstance(value, (int, float)):
        return [value]
    return [v for v in str(value).replace(",", " ").split()]


def _as_int(value, name: str) -> int:
    try:
        f = float(value)
    except (TypeError, ValueError):
        raise UsageError(f"{name} must be an integer, got {value!r}") from None
    if not math.isfinite(f) or f != int(f):
        raise UsageError(f"{name} must be an integer, got {value!r}")
    return int(f)


def _horizons(cfg) -> list[int]:
    hs = [_as_int(h, "horizon") for h in _as_list(cfg["horizon"])]
    if not hs:
        raise UsageError("at least one --horizon is required")
    if any(h < 1 for h in hs):
        raise UsageError(f"horizons must be positive, got {hs}")
    return hs


def _change_points(cfg):
    """``'grid'`` or a list whose entries are ints or math.inf."""
    raw = _as_list(cfg["nu"])
    if [str(v).lower() for v in raw] == ["grid"]:
        return "grid"
    out = []
    for v in raw:
        if str(v).lower() in ("inf", "infinity"):
            out.append(math.inf)
        else:
            nu = _as_int(v, "nu")
            if nu < 1:
                raise UsageError(f"change points must be >= 1, got {nu}")
            out.append(nu)
    if not out:
        raise UsageError("--nu needs at least one value")
    return out


def _probability(cfg, key: str):
    v = cfg[key]
    if v is None:
        raise UsageError(f"--{key} is required for --dist {cfg['dist']}")
    items = _as_list(v)
    try:
        vals = [float(x) for x in items]
    except ValueError:
        raise UsageError(f"--{key} must be numeric, got {v!r}") from None
    return vals


def _pair(cfg) -> DistributionPair:
    dist = cfg["dist"]
    if dist is None:
        raise UsageError("--dist is required")
    if dist == "gaussian":
        if cfg["mu"] is None:
            raise UsageError("--mu is required for --dist gaussian")
        return pair_from_params("gaussian", mu=float(cfg["mu"]), sigma=float(cfg["sigma"]))
    p0, p1 = _probability(cfg, "p0"), _probability(cfg, "p1")
    if dist == "bernoulli":
        if len(p0) != 1 or len(p1) != 1:
            raise UsageError("bernoulli takes a single --p0 and --p1")
        return pair_from_params("bernoulli", p0=p0[0], p1=p1[0])
    if dist == "table":
        return pair_from_params("table", p0=tuple(p0), p1=tuple(p1))
    raise UsageError(f"unknown distribution {dist!r}")


def _unit(cfg, key: str) -> float:
    v = float(cfg[key])
    if not 0.0 < v < 1.0:
        raise UsageError(f"--{key.replace('_', '-')} must lie in (0, 1), got {v}")
    return v


def _policy(cfg) -> ThresholdPolicy:
    if cfg["policy"] == "fixed":
        if cfg["b"] is None:
            raise UsageError("--b is required for --policy fixed")
        return FixedThreshold(float(cfg["b"]))
    if cfg["policy"] != "tvt":
        raise UsageError(f"unknown policy {cfg['policy']!r}")
    return TimeVaryingThreshold(_unit(cfg, "delta_f"), _r(cfg))


def _r(cfg) -> float:
    r = float(cfg["r"])
    if not r > 1.0:
        raise UsageError(f"--r must exceed 1, got {r}")
    return r


def _require_lower_bound_ok(df: float, dd: float) -> None:
    if df + dd >= 1.0:
        raise UsageError(f"lower bound needs delta_f + delta_d < 1 (got {df} + {dd})")


def _tvt_params(cfg, policy) -> tuple[float, float]:
    if isinstance(policy, TimeVaryingThreshold):
        return policy.delta_f, policy.r
    return _unit(cfg, "delta_f"), _r(cfg)


def _resolved_seed(cfg) -> int:
    if cfg["seed"] is None:
        cfg["seed"] = int(np.random.SeedSequence().entropy % (1 << 63))
    seed = int(cfg["seed"])
    if seed < 0:
        raise UsageError(f"--seed must be nonnegative, got {seed}")
    return seed


def _run_params(cfg) -> tuple[int, int, float]:
    trials, workers, level = int(cfg["trials"]), int(cfg["workers"]), float(cfg["level"])
    if trials < 1:
        raise UsageError(f"--trials must be positive, got {trials}")
    if workers < 1:
        raise UsageError(f"--workers must be positive, got {workers}")
    if not 0.0 < level < 1.0:
        raise UsageError(f"--level must lie in (0, 1), got {level}")
    return trials, workers, level


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "inf" if v == math.inf else repr(v)
    return str(v)


# --- subcommands -----------------------------------------------------------


def _cmd_bounds(cfg) -> list[dict]:
    pair = _pair(cfg)
    horizons = _horizons(cfg)
    df, dd, r = _unit(cfg, "delta_f"), _unit(cfg, "delta_d"), _r(cfg)
    _require_lower_bound_ok(df, dd)
    rows = []
    for T in horizons:
        rep = bound_report(pair, T, df, dd, r)
        rows.append({
            "T": T, "delta_f": df, "delta_d": dd, "r": r,
            "theta_star": rep.theta_star, "upper_bound": rep.upper_bound_d,
            "upper_bound_samples": rep.upper_bound_samples, "lower_bound": rep.lower_bound_d,
        })
    return rows


def _cmd_oracle(cfg) -> list[dict]:
    pair = _pair(cfg)
    if isinstance(pair, GaussianMeanShift):
        raise UnsupportedInstanceError("the exact oracle needs a discrete pair, not gaussian")
    policy = _policy(cfg)
    horizons = _horizons(cfg)
    nus = _change_points(cfg)
    if nus == "grid":
        raise UsageError("oracle takes explicit change points or 'inf'")
    df, r = _tvt_params(cfg, policy)
    rows = []
    for T in horizons:
        for nu in nus:
            if nu == math.inf:
                fa = exact_false_alarm(pair, policy, T)
                rows.append({"T": T, "nu": nu, "quantity": "false_alarm", "value": fa,
                             "target": df, "verdict": "pass" if fa <= df else "fail"})
                print(f"qcd: false_alarm T={T} = {fa:.6g} <= delta_f={df:g}: "
                      f"{rows[-1]['verdict']}", file=sys.stderr)
                continue
            if cfg["d"] is None:
                raise UsageError("finite --nu needs --d for the miss probability")
            d = int(cfg["d"])
            if d < 1 or nu + d - 1 > T:
                raise UsageError(f"need d >= 1 and nu + d - 1 <= T (nu={nu}, d={d}, T={T})")
            miss = exact_miss_probability(pair, policy, T, nu, d)
            rows.append({"T": T, "nu": nu, "d": d, "quantity": "miss_probability",
                         "value": miss})
        if cfg["latency"]:
            if T < 2:
                raise UsageError("latency needs T >= 2")
            dd = _unit(cfg, "delta_d")
            lat = exact_high_prob_latency(pair, policy, T, dd)
            _, d_bar = latency_upper_bound(pair, T, df, dd, r)
            target = math.ceil(d_bar)
            ok = lat is not None and lat <= target
            rows.append({"T": T, "quantity": "exact_latency",
                         "value": "none" if lat is None else lat, "target": target,
                         "verdict": "pass" if ok else "fail"})
    return rows


def _cmd_simulate(cfg) -> list[dict]:
    pair = _pair(cfg)
    policy = _policy(cfg)
    horizons = _horizons(cfg)
    nus = _change_points(cfg)
    seed = _resolved_seed(cfg)
    trials, workers, level = _run_params(cfg)
    rows = []
    for T in horizons:
        if nus == "grid":
            dd = _unit(cfg, "delta_d")
            est = empirical_latency(pair, policy, T, dd, trials, seed, level=level,
                                    workers=workers)
            lo, hi = est.d_ci
            rows.append({"T": T, "quantity": "empirical_latency",
                         "value": "none" if est.d_hat is None else est.d_hat,
                         "trials": trials, "ci_low": lo, "ci_high": hi, "level": level,
                         "seed": seed})
            for nu, rep in sorted(est.reports.items()):
                rows.append(_report_row(T, nu, est.d_hat, "miss_probability", rep))
            continue
        for nu in nus:
            if nu == math.inf:
                df, _ = _tvt_params(cfg, policy)
                rep = estimate_false_alarm(pair, policy, T, trials, seed, level, workers)
                row = _report_row(T, nu, None, "false_alarm", rep)
                row["target"] = df
                row["verdict"] = "pass" if rep.ci_high <= df else "fail"
                rows.append(row)
                continue
            if cfg["d"] is None:
                raise UsageError("finite --nu needs --d for the miss probability")
            d = int(cfg["d"])
            rep = estimate_miss(pair, policy, T, nu, d, trials, seed, level, workers)
            rows.append(_report_row(T, nu, d, "miss_probability", rep))
    return rows


def _report_row(T, nu, d, quantity, rep) -> dict:
    return {"T": T, "nu": nu, "d": d, "quantity": quantity, "value": rep.point,
            "successes": rep.successes, "trials": rep.trials, "ci_low": rep.ci_low,
            "ci_high": rep.ci_high, "level": rep.level, "seed": rep.master_seed}


def _cmd_sweep(cfg) -> list[dict]:
    pair = _pair(cfg)
    horizons = _horizons(cfg)
    if len(horizons) < 2:
        raise UsageError("sweep needs at least two horizons")
    quantities = [q for q in _as_list(cfg["quantities"])]
    if cfg["exact"] and "exact_latency" not in quantities:
        quantities.append("exact_latency")
    unknown = set(quantities) - set(SWEEP_QUANTITIES)
    if unknown or not quantities:
        raise UsageError(f"unknown sweep quantities {sorted(unknown)}")
    policy = _policy(cfg)
    df, r = _tvt_params(cfg, policy)
    dd = _unit(cfg, "delta_d")
    if "lower_bound" in quantities:
        _require_lower_bound_ok(df, dd)
    if "exact_latency" in quantities and isinstance(pair, GaussianMeanShift):
        raise UnsupportedInstanceError("exact_latency needs a discrete pair")
    if "empirical_latency" in quantities:
        seed = _resolved_seed(cfg)
        trials, workers, level = _run_params(cfg)
    rows = []
    for T in horizons:
        for q in SWEEP_QUANTITIES:
            if q not in quantities:
                continue
            if q == "upper_bound":
                rows.append({"T": T, "quantity": q,
                             "value": latency_upper_bound(pair, T, df, dd, r)[1]})
            elif q == "lower_bound":
                rows.append({"T": T, "quantity": q,
                             "value": asymptotic_lower_bound(pair, T, df, dd)})
            elif q == "exact_latency":
                lat = exact_high_prob_latency(pair, policy, T, dd)
                rows.append({"T": T, "quantity": q, "value": "none" if lat is None else lat})
            else:
                est = empirical_latency(pair, policy, T, dd, trials, seed, level=level,
                                        workers=workers)
                rows.append({"T": T, "quantity": q,
                             "value": "none" if est.d_hat is None else est.d_hat,
                             "ci_low": est.d_ci[0], "ci_high": est.d_ci[1]})
    return rows


_COMMANDS = {
    "simulate": _cmd_simulate,
    "bounds": _cmd_bounds,
    "oracle": _cmd_oracle,
    "sweep": _cmd_sweep,
}


def _render_csv(command: str, rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = COLUMNS[command]
    writer.writerow(cols)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in cols])
    return buf.getvalue()


def _manifest_path(cfg) -> Path | None:
    if cfg["manifest"]:
        return Path(cfg["manifest"])
    if cfg["output"] in (None, "-"):
        return None
    return Path(str(cfg["output"]) + ".manifest.json")


def _write_outputs(cfg, body: str, started_at: str, wall: float) -> None:
    if cfg["output"] in (None, "-"):
        sys.stdout.write(body)
    else:
        Path(cfg["output"]).write_text(body)
    path = _manifest_path(cfg)
    if path is not None:
        manifest = {
            "config": {k: v for k, v in cfg.items() if k not in ("output", "manifest")},
            "resolved_seed": cfg["seed"],
            "tool_version": __version__,
            "started_at": started_at,
            "wall_time_s": round(wall, 3),
        }
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.WARNING, format="qcd: %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "verbose", False):
            logging.getLogger("qcd").setLevel(logging.INFO)
        cfg = resolve_config(args)
        started_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
        t0 = time.perf_counter()
        rows = _COMMANDS[cfg["command"]](cfg)
        body = _render_csv(cfg["command"], rows)
        _write_outputs(cfg, body, started_at, time.perf_counter() - t0)
    except ConvergenceError as exc:
        print(f"qcd: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (QCDError, ValueError, OSError) as exc:
        print(f"qcd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if any(row.get("verdict") == "fail" for row in rows):
        print("qcd: certification failed", file=sys.stderr)
        return EXIT_CERT
    return EXIT_OK

"""Command-line front end.

Every command prints one JSON object on standard output. Exit codes: 0 ok,
1 invalid input, 2 solver diagnostic, 3 verification gap above tolerance.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

from . import __version__
from .bayes import PriorBelief, TruncationConfig, prior_from_moments
from .cbm import CbmInstance, solve_cbm_decomposed
from .errors import (
    BoundsTooTight,
    IncompleteSweep,
    InstanceTooLarge,
    InvalidInstance,
    PooledDPError,
)
from .spares import SparesInstance, solve_spares_decomposed

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_SOLVER = 2
EXIT_GAP = 3
SCHEMA_VERSION = 1


class ConfigError(Exception):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


# -- config parsing ---------------------------------------------------------

def load_json(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a JSON object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
    return data


def _require(data, key):
    if key not in data:
        raise ConfigError(key, "missing")
    return data[key]


def parse_prior(data):
    prior = _require(data, "prior")
    if not isinstance(prior, dict):
        raise ConfigError("prior", "must be an object")
    if "alpha0" in prior or "beta0" in prior:
        return PriorBelief(float(_require(prior, "alpha0")), float(_require(prior, "beta0")))
    return prior_from_moments(
        float(_require(prior, "mean_lambda")), float(_require(prior, "cv_lambda"))
    )


def parse_trunc(data, args=None):
    spec = dict(data.get("truncation", {}))
    unknown = set(spec) - {"tail_eps", "k_cap", "lower_eps", "k_cap_tail"}
    if unknown:
        raise ConfigError("truncation", f"unknown keys {sorted(unknown)}")
    if args is not None:
        if getattr(args, "tail_eps", None) is not None:
            spec["tail_eps"] = args.tail_eps
        if getattr(args, "k_cap", None) is not None:
            spec["k_cap"] = args.k_cap
    return TruncationConfig(**spec)


def build_instance(data, args=None):
    """``CbmInstance`` or ``SparesInstance`` from a config document."""
    kind = _require(data, "kind")
    n = int(_require(data, "n_systems"))
    if args is not None and getattr(args, "n_systems", None) is not None:
        n = args.n_systems
    horizon = int(_require(data, "horizon"))
    prior = parse_prior(data)
    trunc = parse_trunc(data, args)
    if kind == "cbm":
        return CbmInstance(
            n, horizon, prior, _require(data, "xi"), _require(data, "cp"),
            _require(data, "cu"), trunc,
        )
    if kind == "spares":
        return SparesInstance(
            n, horizon, prior, _require(data, "c_v"), _require(data, "c_h"),
            _require(data, "c_b"), trunc, data.get("x_lo"), data.get("a_hi"),
        )
    raise ConfigError("kind", f"expected 'cbm' or 'spares', got {kind!r}")


# -- output helpers ---------------------------------------------------------

def emit(obj):
    json.dump(obj, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")
    sys.stdout.flush()


def _write_csv(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(v):
    return repr(float(v))


def _clean_diag(diag, timing):
    out = {k: v for k, v in diag.items() if k != "reachable_caps"}
    if not timing:
        out.pop("solve_ms", None)
    return out


# -- commands ---------------------------------------------------------------

def cmd_solve_cbm(args):
    inst = build_instance(load_json(args.config), args)
    if not isinstance(inst, CbmInstance):
        raise ConfigError("kind", "solve-cbm needs kind 'cbm'")
    res = solve_cbm_decomposed(inst, args.system, keep_values=args.emit_values)
    policy_path = os.path.join(args.out, "policy.csv")
    T, width = res.control_limits.shape
    _write_csv(policy_path, ["t", "k", "control_limit"],
               ([t, k, int(res.control_limits[t, k])] for t in range(T) for k in range(width)))
    files = {"policy": policy_path}
    if args.emit_values:
        values_path = os.path.join(args.out, "values.csv")
        _write_csv(values_path, ["t", "x", "k", "value"], (
            [t, x, k, _fmt(layer[x, k])]
            for t, layer in enumerate(res.values)
            for x in range(layer.shape[0])
            for k in range(layer.shape[1])
        ))
        files["values"] = values_path
    emit({
        "command": "solve-cbm",
        "system": args.system,
        "n_systems": inst.n_systems,
        "value0": res.value0,
        "diagnostics": _clean_diag(res.diagnostics, not args.no_timing),
        "files": files,
    })
    return EXIT_OK


def cmd_solve_spares(args):
    from .spares import policy_rows, value_rows

    inst = build_instance(load_json(args.config), args)
    if not isinstance(inst, SparesInstance):
        raise ConfigError("kind", "solve-spares needs kind 'spares'")
    res = solve_spares_decomposed(inst, args.system)
    policy_path = os.path.join(args.out, "policy.csv")
    _write_csv(policy_path, ["t", "k", "order_up_to"], policy_rows(res).tolist())
    files = {"policy": policy_path}
    if args.emit_values:
        values_path = os.path.join(args.out, "values.csv")
        _write_csv(values_path, ["t", "x", "k", "value"], (
            [int(t), int(x), int(k), _fmt(v)] for t, x, k, v in value_rows(res)
        ))
        files["values"] = values_path
    emit({
        "command": "solve-spares",
        "system": args.system,
        "n_systems": inst.n_systems,
        "value0": res.value0,
        "diagnostics": _clean_diag(res.diagnostics, not args.no_timing),
        "files": files,
    })
    return EXIT_OK


def cmd_verify(args):
    from .oracle import solve_joint_cbm, solve_joint_spares

    inst = build_instance(load_json(args.config), args)
    oracle_inst = inst
    if args.debug_oracle_tail_eps is not None:
        # negative control: the oracle sees a different truncated model
        oracle_inst = replace(inst, trunc=replace(inst.trunc, tail_eps=args.debug_oracle_tail_eps))
    if isinstance(inst, CbmInstance):
        parts = [solve_cbm_decomposed(inst, i + 1, keep_values=False).value0
                 for i in range(inst.n_systems)]
        joint = solve_joint_cbm(oracle_inst)
    else:
        results = [solve_spares_decomposed(inst, i + 1) for i in range(inst.n_systems)]
        # both sides must share one grid: the widest the auto-sizing settled on
        widest = max(results, key=lambda r: r.a_hi - r.x_lo)
        if not inst.bounds_fixed:
            shared = inst.with_bounds(widest.x_lo, widest.a_hi)
            results = [solve_spares_decomposed(shared, i + 1) for i in range(inst.n_systems)]
        parts = [r.value0 for r in results]
        oracle_inst = replace(oracle_inst, x_lo=widest.x_lo, a_hi=widest.a_hi)
        joint = solve_joint_spares(oracle_inst)
    total = sum(parts)
    gap = abs(joint - total) / max(1.0, abs(joint))
    ok = gap <= args.tolerance
    emit({
        "command": "verify-decomposition",
        "kind": "cbm" if isinstance(inst, CbmInstance) else "spares",
        "joint_value": joint,
        "decomposed_values": parts,
        "decomposed_sum": total,
        "relative_gap": gap,
        "tolerance": args.tolerance,
        "ok": ok,
    })
    return EXIT_OK if ok else EXIT_GAP


def _spec_from(args):
    from .testbed import TestbedSpec

    if args.config is None:
        return TestbedSpec()
    data = load_json(args.config)
    if data.get("kind") != "testbed":
        raise ConfigError("kind", "sweep needs kind 'testbed'")
    try:
        return TestbedSpec.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError("testbed", str(exc)) from exc


def cmd_sweep(args):
    from .testbed import run_sweep

    spec = _spec_from(args)

    def progress(done, total):
        if args.verbose:
            print(f"{done}/{total}", file=sys.stderr, flush=True)

    records = run_sweep(spec, args.out, jobs=args.jobs, timing=not args.no_timing,
                        progress=progress)
    emit({
        "command": "sweep",
        "records": len(records),
        "results": os.path.join(args.out, "results.csv"),
        "manifest": os.path.join(args.out, "manifest.json"),
    })
    return EXIT_OK


def cmd_report(args):
    from .testbed import TestbedSpec, aggregate, read_results, write_aggregate

    results_path = os.path.join(args.input, "results.csv")
    if not os.path.exists(results_path):
        raise ConfigError("in", f"no results.csv under {args.input}")
    records = read_results(results_path)
    spec = None
    manifest_path = os.path.join(args.input, "manifest.json")
    if os.path.exists(manifest_path):
        with open(manifest_path) as fh:
            spec = TestbedSpec.from_dict(json.load(fh)["spec"])
    rows = aggregate(records, args.group_by, spec)
    out = args.out or os.path.join(args.input, f"aggregate_{args.group_by}.csv")
    write_aggregate(rows, out)
    emit({
        "command": "report",
        "group_by": args.group_by,
        "rows": [
            {"group_value": r.group_value, "N": r.N,
             "mean_delta": round(r.mean_delta, 4), "max_delta": round(r.max_delta, 4)}
            for r in rows
        ],
        "file": out,
    })
    return EXIT_OK


def cmd_policy_curve(args):
    from .testbed import policy_curve

    inst = build_instance(load_json(args.config), args)
    if not isinstance(inst, CbmInstance):
        raise ConfigError("kind", "policy-curve needs kind 'cbm'")
    epochs = [int(e) for e in args.epochs.split(",")]
    for t in epochs:
        if not 0 <= t < inst.horizon:
            raise ConfigError("epochs", f"{t} outside 0..{inst.horizon - 1}")
    rows = policy_curve(inst, epochs)
    _write_csv(args.out, ["t", "k", "control_limit"], rows)
    emit({"command": "policy-curve", "epochs": epochs, "rows": len(rows), "file": args.out})
    return EXIT_OK


def cmd_savings_curve(args):
    from .testbed import SAVINGS_FAMILY, Family, savings_curve

    family = SAVINGS_FAMILY
    if args.config is not None:
        data = load_json(args.config)
        family = Family(
            int(_require(data, "xi")), int(_require(data, "T")), float(_require(data, "cp")),
            float(_require(data, "mean_lambda")), float(data.get("cv_lambda", 1.0)),
            float(data.get("cu", 10.0)),
        )
    n_values = [int(v) for v in args.n_values.split(",")]
    cv_values = [float(v) for v in args.cv_values.split(",")]
    rows = savings_curve(family, n_values, cv_values)
    _write_csv(args.out, ["cv", "N", "delta_pct"], ([repr(c), n, repr(d)] for c, n, d in rows))
    emit({"command": "savings-curve", "rows": len(rows), "file": args.out})
    return EXIT_OK


# -- argument parsing -------------------------------------------------------

def _default_jobs():
    raw = os.environ.get("POOLED_DP_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1; exit 2 is reserved for solver diagnostics."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(
        prog="pooled-dp",
        description="Decomposed Bayesian MDPs for maintenance and spare parts with pooled learning.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def trunc_flags(p):
        p.add_argument("--tail-eps", type=float, help="override the tail mass per distribution")
        p.add_argument("--k-cap", type=int, help="override the pooled-total ceiling")
        p.add_argument("--n-systems", type=int, help="override the number of systems")

    for name, func, help_ in (
        ("solve-cbm", cmd_solve_cbm, "solve one maintenance system"),
        ("solve-spares", cmd_solve_spares, "solve one spare-parts warehouse"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=".", help="directory for the CSV exports")
        p.add_argument("--system", type=int, default=1, help="1-based system index")
        p.add_argument("--emit-values", action="store_true", help="also write values.csv")
        p.add_argument("--no-timing", action="store_true", help="omit wall-clock fields")
        trunc_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("verify-decomposition", help="compare against the joint solver")
    p.add_argument("--config", required=True)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--debug-oracle-tail-eps", type=float,
                   help="give the joint solver a different tail_eps (negative control)")
    trunc_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="run the testbed")
    p.add_argument("--config", help="testbed spec JSON (default: full design)")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=_default_jobs())
    p.add_argument("--no-timing", action="store_true",
                   help="leave solve_ms blank so reruns are byte-identical")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="aggregate a sweep into the savings table")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--group-by", default="cv_lambda",
                   choices=["xi", "T", "cp", "mean_lambda", "cv_lambda"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("policy-curve", help="control limits against k at chosen epochs")
    p.add_argument("--config", required=True)
    p.add_argument("--epochs", default="10,25,40")
    p.add_argument("--out", required=True)
    trunc_flags(p)
    p.set_defaults(func=cmd_policy_curve)

    p = sub.add_parser("savings-curve", help="savings against N for several cv values")
    p.add_argument("--config", help="family JSON (default: xi=10, T=90, cp=0.5, mean 0.75)")
    p.add_argument("--n-values", default="1,2,4,6,8,10,20")
    p.add_argument("--cv-values", default="0.1,0.25,0.5,1,2,4")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_savings_curve)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidInstance) as exc:
        print(f"error: {exc}", file=sys.stderr)
        emit({"command": args.command, "error": str(exc), "field": exc.field})
        return EXIT_INVALID
    except IncompleteSweep as exc:
        print(f"error: incomplete sweep: {exc}", file=sys.stderr)
        emit({"command": args.command, "error": "incomplete sweep", "missing": exc.missing})
        return EXIT_INVALID
    except InstanceTooLarge as exc:
        print(f"error: {exc}; use fewer systems, lower thresholds or a shorter horizon",
              file=sys.stderr)
        emit({"command": args.command, "error": str(exc)})
        return EXIT_SOLVER
    except BoundsTooTight as exc:
        print(f"error: {exc}", file=sys.stderr)
        emit({"command": args.command, "error": str(exc), "k": exc.k, "t": exc.t})
        return EXIT_SOLVER
    except (PooledDPError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        emit({"command": args.command, "error": str(exc)})
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

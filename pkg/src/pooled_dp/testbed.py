"""Experimental design, pooling savings and sweep orchestration.

A *family* fixes every parameter except the number of systems; the savings
of ``N`` systems are measured against the same family's single-system value.
Sweeps are resumable: each finished solve is appended to a journal keyed by a
stable instance id, and the results table is rebuilt from the journal in
design order, so the output does not depend on scheduling.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

from .bayes import TruncationConfig, prior_from_moments
from .cbm import CbmInstance, solve_cbm_decomposed
from .errors import DegenerateBaseline, IncompleteSweep

RESULTS_HEADER = [
    "instance_id", "N", "xi", "T", "cp", "cu", "mean_lambda", "cv_lambda",
    "alpha0", "beta0", "k_cap", "value_per_system", "baseline_value", "delta_pct", "solve_ms",
]
AGGREGATE_HEADER = ["group_param", "group_value", "N", "mean_delta", "max_delta"]
GROUP_PARAMS = ("xi", "T", "cp", "mean_lambda", "cv_lambda")
JOURNAL = "solves.jsonl"
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TestbedSpec:
    """Cross-product design; the defaults give 2268 instances."""

    n_values: tuple = (1, 2, 4, 6, 8, 10, 20)
    xi_values: tuple = (7, 10)
    T_values: tuple = (50, 70, 90)
    cp_values: tuple = (0.5, 1.0, 1.5)
    cu: float = 10.0
    mean_lambda_values: tuple = (0.5, 0.75, 1.0)
    cv_lambda_values: tuple = (0.1, 0.25, 0.5, 1.0, 2.0, 4.0)

    __test__ = False  # not a pytest class despite the name

    def __post_init__(self):
        for name in ("n_values", "xi_values", "T_values", "cp_values",
                     "mean_lambda_values", "cv_lambda_values"):
            values = tuple(getattr(self, name))
            if not values:
                raise ValueError(f"{name} must not be empty")
            object.__setattr__(self, name, values)

    def families(self):
        """Every ``Family`` in design order."""
        return [
            Family(xi, T, float(cp), float(mean), float(cv), float(self.cu))
            for xi, T, cp, mean, cv in itertools.product(
                self.xi_values, self.T_values, self.cp_values,
                self.mean_lambda_values, self.cv_lambda_values,
            )
        ]

    def rows(self):
        """``(N, family)`` pairs in lexicographic design order."""
        return [(n, f) for n in self.n_values for f in self.families()]

    def __len__(self):
        return len(self.n_values) * len(self.families())

    def to_dict(self):
        d = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}
        return {"schema_version": SCHEMA_VERSION, "kind": "testbed", **d}

    @classmethod
    def from_dict(cls, data):
        keys = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - keys - {"schema_version", "kind"}
        if unknown:
            raise ValueError(f"unknown testbed fields: {sorted(unknown)}")
        return cls(**{k: v for k, v in data.items() if k in keys})


@dataclass(frozen=True)
class Family:
    """All design parameters except the number of systems."""

    xi: int
    T: int
    cp: float
    mean_lambda: float
    cv_lambda: float
    cu: float = 10.0

    def instance(self, n_systems, trunc=None):
        prior = prior_from_moments(self.mean_lambda, self.cv_lambda)
        return CbmInstance.symmetric(
            n_systems, self.T, prior, self.xi, self.cp, self.cu, trunc or TruncationConfig()
        )


def instance_id(n_systems, family):
    """Stable 12-hex-digit id of a design point."""
    key = (
        f"N={int(n_systems)};xi={int(family.xi)};T={int(family.T)};cp={family.cp!r};"
        f"cu={family.cu!r};mean={family.mean_lambda!r};cv={family.cv_lambda!r}"
    )
    return hashlib.sha1(key.encode()).hexdigest()[:12]


def generate_testbed(spec):
    """One symmetric maintenance instance per design point, in design order."""
    return [family.instance(n) for n, family in spec.rows()]


@dataclass
class SweepRecord:
    instance_id: str
    N: int
    xi: int
    T: int
    cp: float
    cu: float
    mean_lambda: float
    cv_lambda: float
    alpha0: float
    beta0: float
    k_cap: int
    value_per_system: float
    baseline_value: float
    delta_pct: float
    solve_ms: float | None = field(default=None, compare=False)

    def family(self):
        return Family(self.xi, self.T, self.cp, self.mean_lambda, self.cv_lambda, self.cu)

    def csv_row(self, timing=True):
        ms = "" if (not timing or self.solve_ms is None) else f"{self.solve_ms:.1f}"
        return [
            self.instance_id, self.N, self.xi, self.T, repr(self.cp), repr(self.cu),
            repr(self.mean_lambda), repr(self.cv_lambda), repr(self.alpha0), repr(self.beta0),
            self.k_cap, repr(self.value_per_system), repr(self.baseline_value),
            repr(self.delta_pct), ms,
        ]

    @classmethod
    def from_csv_row(cls, row):
        return cls(
            row["instance_id"], int(row["N"]), int(row["xi"]), int(row["T"]),
            float(row["cp"]), float(row["cu"]), float(row["mean_lambda"]),
            float(row["cv_lambda"]), float(row["alpha0"]), float(row["beta0"]),
            int(row["k_cap"]), float(row["value_per_system"]),
            float(row["baseline_value"]), float(row["delta_pct"]),
            float(row["solve_ms"]) if row.get("solve_ms") else None,
        )


def delta_pct(value, baseline):
    """Percentage saving of ``value`` relative to ``baseline``."""
    if baseline == 0:
        raise DegenerateBaseline("baseline value is zero; savings are undefined")
    if value == baseline:
        return 0.0
    return 100.0 * (1.0 - value / baseline)


def solve_family_member(family, n_systems, trunc=None):
    """Per-system value ``V_0(0, 0)`` of the ``n_systems`` member of ``family``."""
    inst = family.instance(n_systems, trunc)
    res = solve_cbm_decomposed(inst, keep_values=False, reachable_only=True)
    return res.value0, res.k_cap, res.diagnostics["solve_ms"]


def delta_savings(family, n, baseline=None, trunc=None):
    """Pooling savings (%) of ``n`` systems over one system in ``family``."""
    if n == 1:
        return 0.0
    if baseline is None:
        baseline = solve_family_member(family, 1, trunc)[0]
    return delta_pct(solve_family_member(family, n, trunc)[0], baseline)


def _solve_task(task):
    n, family = task
    value, k_cap, ms = solve_family_member(family, n)
    return {"id": instance_id(n, family), "value": value, "k_cap": k_cap, "solve_ms": ms}


def read_journal(path):
    done = {}
    if os.path.exists(path):
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    entry = json.loads(line)
                    done[entry["id"]] = entry
    return done


def run_sweep(spec, out_dir, jobs=1, timing=True, progress=None):
    """Solve every design point not already journaled, then write the results.

    Baselines (``N = 1``) are solved for every family even when 1 is not in
    ``spec.n_values``. Returns the records in design order.
    """
    os.makedirs(out_dir, exist_ok=True)
    journal_path = os.path.join(out_dir, JOURNAL)
    done = read_journal(journal_path)

    tasks = [(n, f) for n, f in spec.rows()]
    if 1 not in spec.n_values:
        tasks = [(1, f) for f in spec.families()] + tasks
    pending = [t for t in tasks if instance_id(*t) not in done]
    # large N first so the slowest solves do not trail at the end
    pending.sort(key=lambda t: (-t[0] * t[1].cv_lambda, t[1].T))

    with open(journal_path, "a") as fh:
        if jobs <= 1:
            results = map(_solve_task, pending)
            pool = None
        else:
            pool = ProcessPoolExecutor(max_workers=jobs)
            results = pool.map(_solve_task, pending, chunksize=1)
        try:
            for count, entry in enumerate(results, 1):
                done[entry["id"]] = entry
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
                fh.flush()
                if progress:
                    progress(count, len(pending))
        finally:
            if pool is not None:
                pool.shutdown()

    records = build_records(spec, done)
    write_results(records, os.path.join(out_dir, "results.csv"), timing=timing)
    write_manifest(spec, os.path.join(out_dir, "manifest.json"))
    return records


def build_records(spec, solved):
    records = []
    for n, family in spec.rows():
        entry = solved[instance_id(n, family)]
        base = solved[instance_id(1, family)]
        prior = prior_from_moments(family.mean_lambda, family.cv_lambda)
        records.append(SweepRecord(
            instance_id(n, family), n, family.xi, family.T, family.cp, family.cu,
            family.mean_lambda, family.cv_lambda, prior.alpha0, prior.beta0,
            entry["k_cap"], entry["value"], base["value"],
            0.0 if n == 1 else delta_pct(entry["value"], base["value"]),
            entry["solve_ms"],
        ))
    return records


def write_results(records, path, timing=True):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULTS_HEADER)
        for rec in records:
            writer.writerow(rec.csv_row(timing))


def read_results(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULTS_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [SweepRecord.from_csv_row(row) for row in reader]


def write_manifest(spec, path):
    from . import __version__

    trunc = TruncationConfig()
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "spec": spec.to_dict(),
        "truncation": {
            "tail_eps": trunc.tail_eps,
            "lower_eps": trunc.lower_eps,
            "k_cap": "auto",
            "k_cap_tail": trunc.k_cap_tail,
        },
        "tool_version": __version__,
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class AggregateRow:
    group_param: str
    group_value: object
    N: int
    mean_delta: float
    max_delta: float

    def csv_row(self):
        return [self.group_param, self.group_value, self.N,
                f"{self.mean_delta:.6f}", f"{self.max_delta:.6f}"]


def aggregate(records, group_by, spec=None):
    """Mean and max savings per ``(group value, N)`` plus a Total row per N.

    With ``spec`` given, every design point must be present or
    :class:`IncompleteSweep` lists the missing instance ids.
    """
    if group_by not in GROUP_PARAMS:
        raise ValueError(f"group_by must be one of {GROUP_PARAMS}, got {group_by!r}")
    if spec is not None:
        have = {r.instance_id for r in records}
        missing = [instance_id(n, f) for n, f in spec.rows() if instance_id(n, f) not in have]
        if missing:
            raise IncompleteSweep(missing)
    cells = {}
    totals = {}
    for rec in records:
        cells.setdefault((getattr(rec, group_by), rec.N), []).append(rec.delta_pct)
        totals.setdefault(rec.N, []).append(rec.delta_pct)
    rows = [
        AggregateRow(group_by, value, n, sum(d) / len(d), max(d))
        for (value, n), d in sorted(cells.items())
    ]
    rows += [
        AggregateRow(group_by, "Total", n, sum(d) / len(d), max(d))
        for n, d in sorted(totals.items())
    ]
    return rows


def write_aggregate(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_HEADER)
        for row in rows:
            writer.writerow(row.csv_row())


def policy_curve(instance, epochs):
    """``(t, k, control_limit)`` rows at the requested epochs from one solve."""
    for t in epochs:
        if not 0 <= t < instance.horizon:
            raise ValueError(f"epoch {t} outside 0..{instance.horizon - 1}")
    res = solve_cbm_decomposed(instance, keep_values=False)
    return [(t, k, int(d)) for t in epochs for k, d in enumerate(res.control_limits[t])]


SAVINGS_FAMILY = Family(xi=10, T=90, cp=0.5, mean_lambda=0.75, cv_lambda=1.0)


def savings_curve(family=SAVINGS_FAMILY, n_values=(1, 2, 4, 6, 8, 10, 20),
                  cv_values=(0.1, 0.25, 0.5, 1.0, 2.0, 4.0)):
    """``(cv, N, delta_pct)`` rows; ``family.cv_lambda`` is overridden by each cv."""
    rows = []
    for cv in cv_values:
        fam = Family(family.xi, family.T, family.cp, family.mean_lambda, float(cv), family.cu)
        base = solve_family_member(fam, 1)[0]
        for n in n_values:
            d = 0.0 if n == 1 else delta_pct(solve_family_member(fam, n)[0], base)
            rows.append((float(cv), int(n), d))
    return rows


__all__ = [
    "TestbedSpec",
    "Family",
    "SweepRecord",
    "AggregateRow",
    "instance_id",
    "generate_testbed",
    "delta_pct",
    "delta_savings",
    "solve_family_member",
    "run_sweep",
    "build_records",
    "write_results",
    "read_results",
    "write_manifest",
    "aggregate",
    "write_aggregate",
    "policy_curve",
    "savings_curve",
    "RESULTS_HEADER",
    "AGGREGATE_HEADER",
]

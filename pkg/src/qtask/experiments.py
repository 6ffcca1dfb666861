"""Experiment runners behind the command line: configs, report rows and replay."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .backends import derive_seed, expectation_exact, parse_selector
from .circuit import MAX_QUBITS, Histogram, ghz_circuit, parity
from .cutting import CutPlan, build_cut_experiment
from .errors import ResourceLimitError
from .qir import QirModule, emit_qir, parse_qir
from .runtime.executor import RunHandle, TimingReport, default_worker_count, make_policy, submit
from .runtime.graph import TaskGraph, host_function

EXPERIMENTS = ("ghz-cut", "ghz-nocut", "qir-run")
ESTIMATORS = ("factorized", "per-tuple")
FORMATS = ("json", "csv", "table")
REPORT_COLUMNS = ("backend", "value", "sigma", "full_s", "create_s", "exec_post_s",
                  "retrieve_s", "n", "cut_circuits")
MANIFEST_VERSION = 1
_REQUIRED = ("experiment", "shots", "seed", "backends", "policy")


class UsageError(ValueError):
    """Invalid experiment configuration (exit code 2)."""


class ExecutionError(RuntimeError):
    """The experiment ran but a task failed (exit code 1)."""


@dataclass
class ExperimentConfig:
    experiment: str
    shots: int
    seed: int
    n: int | None = None
    cuts: tuple[int, ...] = ()
    workers: int | None = None
    policy: str = "roundrobin"
    backends: tuple[str, ...] = ("sv",)
    batch: int = 1
    dedup: bool = False
    estimator: str = "factorized"
    exact: bool = False
    transport: str = "memory"
    qir: str | None = None
    qir_name: str | None = None

    def validate(self) -> ExperimentConfig:
        if self.experiment not in EXPERIMENTS:
            raise UsageError(f"unknown experiment {self.experiment!r}")
        if self.shots < 1:
            raise UsageError(f"--shots must be >= 1, got {self.shots}")
        if not 0 <= self.seed < 2**64:
            raise UsageError(f"--seed must fit in 64 bits, got {self.seed}")
        if self.workers is not None and self.workers < 1:
            raise UsageError(f"--workers must be >= 1, got {self.workers}")
        if self.batch < 1:
            raise UsageError(f"--batch-size must be >= 1, got {self.batch}")
        if not self.backends:
            raise UsageError("at least one --backend is required")
        try:
            for sel in self.backends:
                parse_selector(sel)
            make_policy(self.policy, self.batch)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if self.estimator not in ESTIMATORS:
            raise UsageError(f"unknown estimator {self.estimator!r}; choose from {ESTIMATORS}")
        if self.transport not in ("memory", "pipe"):
            raise UsageError(f"unknown transport {self.transport!r}")
        if self.experiment in ("ghz-cut", "ghz-nocut"):
            if self.n is None:
                raise UsageError("--qubits is required")
            if self.n > MAX_QUBITS:
                raise ResourceLimitError(
                    f"--qubits {self.n} exceeds the simulator bound of {MAX_QUBITS} qubits")
            if self.n < 1:
                raise UsageError(f"--qubits must be >= 1, got {self.n}")
        if self.experiment == "ghz-cut":
            problems = CutPlan(tuple(self.cuts)).problems(self.n) if self.cuts else ["no cuts given"]
            if problems:
                raise UsageError(f"invalid cut plan {list(self.cuts)} for {self.n} qubits: "
                                 + "; ".join(problems))
        if self.experiment == "qir-run" and self.qir is None:
            raise UsageError("qir-run needs a QIR module")
        return self

    def worker_selectors(self) -> list[tuple[str, str]]:
        """Worker ids and selectors; backends are dealt round-robin over the workers."""
        count = self.workers or default_worker_count()
        count = max(count, len(self.backends))
        return [(f"qpu{i}", self.backends[i % len(self.backends)]) for i in range(count)]

    def to_manifest(self) -> dict:
        data = asdict(self)
        data["cuts"] = list(self.cuts)
        data["backends"] = list(self.backends)
        return {"version": MANIFEST_VERSION, **data}

    @classmethod
    def from_manifest(cls, data: dict) -> ExperimentConfig:
        missing = [k for k in _REQUIRED if data.get(k) is None]
        if missing:
            raise UsageError("manifest is missing required field(s): " + ", ".join(missing))
        if data.get("version", MANIFEST_VERSION) != MANIFEST_VERSION:
            raise UsageError(f"unsupported manifest version {data.get('version')!r}")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known - {"version"})
        if unknown:
            raise UsageError("manifest has unknown field(s): " + ", ".join(unknown))
        fields = {k: v for k, v in data.items() if k in known}
        fields["cuts"] = tuple(fields.get("cuts") or ())
        fields["backends"] = tuple(fields["backends"])
        return cls(**fields)


@dataclass
class ReportRow:
    backend: str
    value: float
    sigma: float
    full_s: float
    create_s: float
    exec_post_s: float
    retrieve_s: float
    n: int
    cut_circuits: int | str

    def formatted(self) -> dict:
        out = {}
        for key in REPORT_COLUMNS:
            v = getattr(self, key)
            out[key] = f"{v:.6f}" if isinstance(v, float) else str(v)
        return out


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    row: ReportRow | None
    timing: TimingReport
    handle: RunHandle = field(repr=False)
    histogram: Histogram | None = None
    estimate: dict | None = None


@host_function("ghz_parity_mean")
def _parity_mean(inputs, n: int, shots: int, exact: bool = False) -> dict:
    if exact:
        value, sigma = expectation_exact(ghz_circuit(n)), 0.0
    else:
        hist = inputs[0]
        value = sum(parity(b) * c for b, c in hist.counts.items()) / hist.shots
        sigma = math.sqrt(max(0.0, 1.0 - value * value) / hist.shots)
    return {"value": float(value), "sigma": sigma, "shots": shots, "n": n, "cuts": [],
            "variant_count": 1}


def build_nocut_experiment(n: int, shots: int, seed: int, exact: bool = False,
                           backend: str | None = None) -> tuple[TaskGraph, int]:
    """One uncut GHZ task plus a sink computing the parity mean."""
    graph = TaskGraph()
    tid = graph.add_quantum_task(emit_qir(ghz_circuit(n)), shots, seed=derive_seed(seed, 0),
                                 backend=backend, name=f"ghz{n}")
    sink = graph.add_classical_task("ghz_parity_mean", [graph.output(tid)],
                                    {"n": n, "shots": shots, "exact": exact}, name="parity")
    return graph, graph.output(sink)


def _check_failures(handle: RunHandle) -> None:
    failures = handle.failures()
    if failures:
        lines = [f"task {handle.graph.tasks[t].name}: {msg}" for t, msg in sorted(failures.items())]
        raise ExecutionError("\n".join(lines))


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Validate, build the task graph, execute it and collect the report."""
    config.validate()
    workers = config.worker_selectors()
    policy = make_policy(config.policy, config.batch)
    label = "+".join(dict.fromkeys(config.backends))
    if config.experiment == "qir-run":
        circuit = parse_qir(QirModule(config.qir))  # diagnostics surface before any run
        graph = TaskGraph()
        tid = graph.add_quantum_task(config.qir, config.shots, seed=config.seed,
                                     name=config.qir_name or circuit.name or "qir")
        handle = submit(graph, workers, policy, transport=config.transport)
        _check_failures(handle)
        hist = handle.fetch(graph.output(tid))
        return ExperimentResult(config, None, handle.timing_report(), handle, histogram=hist)

    if config.experiment == "ghz-cut":
        graph, out = build_cut_experiment(config.n, CutPlan(tuple(config.cuts)), config.shots,
                                          config.seed, dedup=config.dedup,
                                          pool=config.estimator == "factorized")
    else:
        graph, out = build_nocut_experiment(config.n, config.shots, config.seed, config.exact)
    handle = submit(graph, workers, policy, transport=config.transport)
    _check_failures(handle)
    est = handle.fetch(out)
    timing = handle.timing_report()
    cut_circuits = est["variant_count"] if config.experiment == "ghz-cut" else "no cut"
    row = ReportRow(label, est["value"], est["sigma"], timing.full, timing.create,
                    timing.exec_post, timing.retrieve, config.n, cut_circuits)
    return ExperimentResult(config, row, timing, handle, estimate=est)


def format_rows(rows: list[ReportRow], fmt: str) -> str:
    """Render report rows; every format carries the same 6-decimal numbers."""
    table = [r.formatted() for r in rows]
    if fmt == "json":
        return json.dumps(table, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(table)
        return buf.getvalue()
    if fmt == "table":
        widths = {c: max(len(c), *(len(r[c]) for r in table)) for c in REPORT_COLUMNS}
        header = {c: c for c in REPORT_COLUMNS}
        rule = {c: "-" * widths[c] for c in REPORT_COLUMNS}
        lines = ["  ".join(r[c].ljust(widths[c]) for c in REPORT_COLUMNS).rstrip()
                 for r in [header, rule, *table]]
        return "\n".join(lines) + "\n"
    raise UsageError(f"unknown format {fmt!r}")


def format_histogram(hist: Histogram, timing: TimingReport, fmt: str) -> str:
    if fmt == "json":
        data = {"histogram": hist.to_dict(),
                "timing": {k: round(v, 6) for k, v in timing.to_dict().items() if k != "tasks"}}
        return json.dumps(data, indent=2, sort_keys=True) + "\n"
    rows = sorted(hist.counts.items())
    if fmt == "csv":
        return "bitstring,count\n" + "".join(f"{b},{c}\n" for b, c in rows)
    width = max(9, hist.width)
    return "".join(f"{b.ljust(width)}  {c}\n" for b, c in [("bitstring", "count"), *rows])


def manifest_path(report_path: str | Path) -> Path:
    p = Path(report_path)
    return p.with_name(p.stem + ".manifest.json")


def write_manifest(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_manifest(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def read_manifest(path: str | Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"manifest {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"manifest {path} must hold a JSON object")
    return ExperimentConfig.from_manifest(data)

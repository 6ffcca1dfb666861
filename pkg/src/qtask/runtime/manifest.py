"""JSON run manifests for task graphs, and JSON result dumps."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from ..circuit import Histogram
from ..errors import GraphError
from .executor import Affinity, LeastLoaded, RoundRobin, RunHandle
from .graph import ClassicalKind, QuantumKind, TaskGraph

MANIFEST_VERSION = 1


def _policy_fields(policy) -> dict:
    if isinstance(policy, Affinity):
        return {"policy": "affinity", "affinity": {str(k): v for k, v in policy.mapping.items()},
                "batch": policy._fallback.batch}
    if isinstance(policy, LeastLoaded):
        return {"policy": "leastloaded", "batch": 1}
    return {"policy": "roundrobin", "batch": getattr(policy, "batch", 1)}


def graph_to_manifest(graph: TaskGraph, workers, policy=None) -> dict:
    tasks = []
    for t in graph.tasks.values():
        entry: dict[str, Any] = {"id": t.id, "name": t.name}
        if isinstance(t.kind, QuantumKind):
            entry.update(kind="quantum", qir=t.kind.qir, shots=t.kind.shots,
                         seed=t.kind.seed, backend=t.kind.backend)
        else:
            entry.update(kind="classical", function=t.kind.function, params=t.kind.params,
                         inputs=t.inputs, outputs=len(t.outputs))
        tasks.append(entry)
    implied = {(graph.mems[m].producer, t.id) for t in graph.tasks.values() for m in t.inputs}
    return {
        "version": MANIFEST_VERSION,
        **_policy_fields(policy or RoundRobin()),
        "workers": [{"id": w, "backend": sel} for w, sel in workers],
        "tasks": tasks,
        "edges": sorted([a, b] for a, b in graph.edges - implied),
    }


def graph_from_manifest(data: dict, base_dir: str | Path = "."):
    """Rebuild ``(graph, workers, policy)``; QIR may be inline or under ``qir_path``."""
    if data.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {data.get('version')!r}")
    graph = TaskGraph()
    for expected_id, entry in enumerate(data["tasks"]):
        if entry.get("id", expected_id) != expected_id:
            raise GraphError(f"manifest task ids must be 0..n-1 in order, got {entry.get('id')}")
        if entry["kind"] == "quantum":
            qir = entry.get("qir")
            if qir is None:
                qir = (Path(base_dir) / entry["qir_path"]).read_text(encoding="utf-8")
            graph.add_quantum_task(qir, entry["shots"], entry.get("seed"), entry.get("backend"),
                                   entry.get("name"))
        elif entry["kind"] == "classical":
            graph.add_classical_task(entry["function"], entry.get("inputs", []),
                                     entry.get("params"), entry.get("outputs", 1), entry.get("name"))
        else:
            raise ValueError(f"unknown task kind {entry['kind']!r}")
    for a, b in data.get("edges", []):
        graph.add_dependency(a, b)
    workers = [(w["id"], w["backend"]) for w in data["workers"]]
    batch = int(data.get("batch", 1))
    name = data.get("policy", "roundrobin")
    if name == "affinity":
        mapping = {int(k) if str(k).isdigit() else k: v for k, v in data["affinity"].items()}
        policy = Affinity(mapping, batch)
    elif name == "leastloaded":
        policy = LeastLoaded()
    else:
        policy = RoundRobin(batch)
    return graph, workers, policy


def _payload_json(value):
    if isinstance(value, Histogram):
        return {"histogram": value.to_dict()}
    return {"value": value}


def result_dump(handle: RunHandle) -> dict:
    """Every written memory object plus the timing report, as plain JSON data."""
    mems = {}
    for mid, mem in handle.graph.mems.items():
        if mem.written:
            mems[str(mid)] = {"producer": mem.producer, "size_hint": mem.size_hint,
                              **_payload_json(handle.fetch(mid))}
    return {"mems": mems, "failures": {str(k): v for k, v in handle.failures().items()},
            "timing": handle.timing_report().to_dict()}


def write_json(path: str | Path, data: dict) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")

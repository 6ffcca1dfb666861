import json
import time

import pytest

from qtask.circuit import ghz_circuit
from qtask.cutting import CutPlan, build_cut_experiment
from qtask.errors import GraphError, NotReadyError
from qtask.qir import emit_qir
from qtask.runtime import (Affinity, LeastLoaded, RoundRobin, TaskGraph, TaskState,
                           default_worker_count, fetch_result, graph_from_manifest,
                           graph_to_manifest, host_function, result_dump, submit, timing_report)
from qtask.runtime.graph import MemObject

GHZ4 = emit_qir(ghz_circuit(4)).text
BAD = "define void @main() #0 {\n  br label %x\n}\nattributes #0 = { \"entry_point\" }\n"


@host_function("test_sum_counts")
def _sum_counts(inputs, **params):
    return sum(h.shots for h in inputs) + params.get("offset", 0)


@host_function("test_explode")
def _explode(inputs, **params):
    raise RuntimeError("boom")


def independent(n, shots=10, qir=GHZ4):
    g = TaskGraph()
    ids = [g.add_quantum_task(qir, shots, seed=i, name=f"t{i}") for i in range(n)]
    return g, ids


def test_single_task_is_ready_at_submit():
    g, ids = independent(1)
    assert g.initial_ready() == ids
    h = submit(g, 1)
    assert h.state(ids[0]) == TaskState.DONE
    assert set(h.fetch(g.output(ids[0])).counts) <= {"0000", "1111"}


def test_cycle_rejected_immediately():
    g, (a, b) = independent(2)
    g.add_dependency(a, b)
    with pytest.raises(GraphError, match="cycle"):
        g.add_dependency(b, a)
    with pytest.raises(GraphError, match="cycle"):
        g.add_dependency(a, a)
    with pytest.raises(GraphError, match="unknown task"):
        g.add_dependency(a, 99)


def test_unknown_inputs_and_functions():
    g = TaskGraph()
    with pytest.raises(GraphError):
        g.add_classical_task("noop", [5])
    with pytest.raises(GraphError):
        g.add_classical_task("does_not_exist")
    with pytest.raises(ValueError):
        g.add_quantum_task(GHZ4, 0)


def test_state_transitions_are_checked():
    g, (t,) = independent(1)
    task = g.task(t)
    with pytest.raises(GraphError):
        task.transition(TaskState.RUNNING)
    task.transition(TaskState.READY)
    task.transition(TaskState.RUNNING)
    task.transition(TaskState.DONE)
    with pytest.raises(GraphError):
        task.transition(TaskState.FAILED)


def test_mem_object_single_assignment():
    mem = MemObject(0, 0)
    with pytest.raises(NotReadyError):
        mem.read()
    mem.write(1)
    with pytest.raises(GraphError):
        mem.write(2)
    assert mem.read() == 1


def test_192_plus_sink_graph_shape():
    g, out = build_cut_experiment(4, CutPlan((1, 2)), 10)
    quantum = [t for t in g.tasks.values() if t.is_quantum]
    assert len(quantum) == 192 and len(g.tasks) == 193
    assert len(g.edges) == 192
    assert g.sinks() == [192]
    assert g.mems[out].producer == 192


def test_round_robin_192_on_4_workers():
    g, _ = independent(192, shots=5)
    h = submit(g, 4, RoundRobin())
    assert sorted(len(v) for v in h.assignments.values()) == [48, 48, 48, 48]
    assert h.assignments["qpu0"][:3] == [0, 4, 8]


def test_round_robin_batches():
    g, _ = independent(12, shots=5)
    h = submit(g, 3, RoundRobin(batch=2))
    assert h.assignments["qpu0"] == [0, 1, 6, 7]


def test_diamond_dependencies():
    g = TaskGraph()
    a = g.add_quantum_task(GHZ4, 10, seed=1, name="A")
    b = g.add_classical_task("test_sum_counts", [g.output(a)], name="B")
    c = g.add_classical_task("test_sum_counts", [g.output(a)], {"offset": 1}, name="C")
    d = g.add_classical_task("collect", [g.output(b), g.output(c)], name="D")
    h = submit(g, 2, host_workers=2)
    t = h.timings
    assert t[d].started_at >= max(t[b].finished_at, t[c].finished_at)
    assert h.fetch(g.output(d)) == [10, 11]


def test_explicit_dependency_orders_tasks():
    g, (a, b) = independent(2)
    g.add_dependency(a, b)
    h = submit(g, 2)
    assert h.timings[b].queued_at >= h.timings[a].finished_at


def test_poisoned_task_does_not_block_independent_work():
    g, ids = independent(6, shots=20)
    bad = g.add_quantum_task(BAD, 10, seed=0, name="poison")
    child = g.add_classical_task("collect", [g.output(bad)], name="child")
    grandchild = g.add_classical_task("collect", [g.output(child)], name="grandchild")
    host_fail = g.add_classical_task("test_explode", [g.output(ids[0])], name="explode")
    h = submit(g, 2)
    assert h.state(bad) == TaskState.FAILED
    assert "unsupported control flow" in h.failures()[bad]
    assert h.state(child) == TaskState.FAILED and h.state(grandchild) == TaskState.FAILED
    assert "upstream" in h.failures()[grandchild]
    assert "boom" in h.failures()[host_fail]
    assert all(h.state(t) == TaskState.DONE for t in ids)
    with pytest.raises(NotReadyError):
        h.fetch(g.output(bad))


def test_backend_restriction():
    g = TaskGraph()
    t = g.add_quantum_task(GHZ4, 10, seed=0, backend="sv:seed=1")
    u = g.add_quantum_task(GHZ4, 10, seed=0, backend="mock(sv):delay=0")
    h = submit(g, [("a", "sv:seed=1"), ("b", "mock(sv):delay=0")], LeastLoaded())
    assert h.timings[t].worker == "a" and h.timings[u].worker == "b"
    g = TaskGraph()
    t = g.add_quantum_task(GHZ4, 10, backend="nowhere")
    h = submit(g, 1)
    assert "no worker" in h.failures()[t]


def _final_contents(workers, policy, transport="memory"):
    g, out = build_cut_experiment(4, CutPlan((1, 2)), 200, seed=11)
    h = submit(g, workers, policy, transport=transport)
    return [h.fetch(m) for m in sorted(g.mems)]


def test_schedule_independence():
    ref = _final_contents(1, RoundRobin())
    for workers, policy in [(2, RoundRobin()), (4, RoundRobin(batch=3)), (3, LeastLoaded()),
                            (4, Affinity({"frag0_k0_s0": "qpu3"}))]:
        assert _final_contents(workers, policy) == ref


def test_pipe_transport_matches_memory():
    g, ids = independent(4, shots=50)
    g2, _ = independent(4, shots=50)
    a = submit(g, 2, transport="pipe")
    b = submit(g2, 2)
    assert [a.fetch(g.output(t)) for t in ids] == [b.fetch(g2.output(t)) for t in ids]


def test_pipe_worker_reports_compile_errors():
    g = TaskGraph()
    t = g.add_quantum_task(BAD, 5)
    h = submit(g, 1, transport="pipe")
    assert "unsupported control flow" in h.failures()[t]


def _mock_graph(n, delay=0.2):
    g = TaskGraph()
    for i in range(n):
        g.add_quantum_task(GHZ4, 10, seed=i)
    return g, [f"mock(sv):delay={delay}"]


@pytest.mark.parametrize("policy", [RoundRobin, LeastLoaded])
def test_makespan_bound_work_conserving(policy):
    d = 0.2
    g, sel = _mock_graph(8, d)
    h = submit(g, sel * 4, policy())
    assert h.timing_report().exec_post < 2 * d + 0.15


def _idle_overlap(timings, worker, lo, hi):
    spans = sorted((t.started_at, t.finished_at) for t in timings if t.worker == worker)
    edges = [0.0] + [x for span in spans for x in span] + [float("inf")]
    total = 0.0
    for idle_start, idle_end in zip(edges[::2], edges[1::2]):
        total += max(0.0, min(hi, idle_end) - max(lo, idle_start))
    return total


def test_least_loaded_is_work_conserving():
    # Uneven worker speeds: while a task waits, no compatible worker is idle.
    g = TaskGraph()
    for i in range(12):
        g.add_quantum_task(GHZ4, 10, seed=i, name=f"t{i}")
    workers = [("fast", "mock(sv):delay=0.02"), ("slow", "mock(sv):delay=0.12")]
    h = submit(g, workers, LeastLoaded())
    timings = list(h.timings.values())
    for t in timings:
        for w, _ in workers:
            assert _idle_overlap(timings, w, t.queued_at, t.started_at) < 0.01
    assert len(h.assignments["fast"]) > len(h.assignments["slow"])


def test_exec_post_speedup_four_workers():
    g1, sel = _mock_graph(4)
    g4, _ = _mock_graph(4)
    one = submit(g1, sel).timing_report().exec_post
    four = submit(g4, sel * 4).timing_report().exec_post
    assert 3.0 <= one / four <= 4.5


def test_noop_graph_overhead():
    g = TaskGraph()
    g.add_classical_task("noop")
    report = submit(g, 1).timing_report()
    assert report.exec_post < 0.010


def test_timing_report_phases_and_not_ready():
    g, ids = independent(2)
    h = submit(g, ["mock(sv):delay=0.2"], wait=False)
    with pytest.raises(NotReadyError):
        timing_report(h)
    with pytest.raises(NotReadyError):
        fetch_result(h, g.output(ids[1]))
    h.wait()
    for t in ids:
        h.fetch(g.output(t))
    r = h.timing_report()
    assert min(r.create, r.exec_post, r.retrieve) >= 0
    assert r.full >= max(r.create, r.exec_post, r.retrieve)
    assert r.create + r.exec_post + r.retrieve <= r.full * 1.05
    for t in r.tasks:
        assert t.queued_at <= t.started_at <= t.finished_at
        assert t.worker == "qpu0" and t.state == "Done"
    json.dumps(r.to_dict())


def test_retrieve_192_results_fast():
    g, out = build_cut_experiment(4, CutPlan((1, 2)), 100)
    h = submit(g, 4)
    quantum = [t.outputs[0] for t in g.tasks.values() if t.is_quantum]
    for m in quantum:
        assert g.mems[m].size_hint <= 64
        h.fetch(m)
    assert h.timing_report().retrieve < 0.05


def test_graph_cannot_be_resubmitted():
    g, _ = independent(1)
    submit(g, 1)
    with pytest.raises(GraphError):
        submit(g, 1)
    with pytest.raises(GraphError):
        g.add_quantum_task(GHZ4, 1)


def test_worker_validation():
    g, _ = independent(1)
    with pytest.raises(ValueError):
        submit(g, [])
    with pytest.raises(ValueError):
        submit(TaskGraph(), ["bogus"])
    with pytest.raises(ValueError):
        submit(TaskGraph(), [("a", "sv"), ("a", "sv")])


def test_default_worker_count(monkeypatch):
    monkeypatch.setenv("QTASK_WORKERS", "3")
    assert default_worker_count() == 3
    monkeypatch.delenv("QTASK_WORKERS")
    assert 1 <= default_worker_count() <= 8
    monkeypatch.setenv("QTASK_WORKERS", "0")
    with pytest.raises(ValueError):
        default_worker_count()


def test_manifest_roundtrip(tmp_path):
    g = TaskGraph()
    a = g.add_quantum_task(GHZ4, 30, seed=4, name="a")
    b = g.add_quantum_task(GHZ4, 30, seed=5, name="b")
    g.add_dependency(a, b)
    c = g.add_classical_task("test_sum_counts", [g.output(a), g.output(b)], {"offset": 2})
    workers = [("w0", "sv"), ("w1", "sv")]
    data = json.loads(json.dumps(graph_to_manifest(g, workers, RoundRobin(batch=2))))
    assert data["edges"] == [[a, b]]
    g2, workers2, policy2 = graph_from_manifest(data)
    assert workers2 == workers and policy2.batch == 2
    h1, h2 = submit(g, workers), submit(g2, workers2, policy2)
    assert h1.fetch(g.output(c)) == h2.fetch(g2.output(c)) == 62
    assert result_dump(h1)["mems"] == result_dump(h2)["mems"]

    qir_file = tmp_path / "ghz4.ll"
    qir_file.write_text(GHZ4)
    data["tasks"][0].pop("qir")
    data["tasks"][0]["qir_path"] = "ghz4.ll"
    g3, _, _ = graph_from_manifest(data, tmp_path)
    assert g3.task(0).kind.qir == GHZ4


def test_result_dump_is_json():
    g, ids = independent(2)
    h = submit(g, 1)
    dump = result_dump(h)
    text = json.dumps(dump)
    assert json.loads(text)["mems"]["0"]["histogram"]["shots"] == 10
    assert dump["timing"]["tasks"][0]["amplitudes"] == 16

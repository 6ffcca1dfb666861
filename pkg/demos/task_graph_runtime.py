"""
Scheduling quantum and classical tasks on isolated workers
==========================================================

Tasks carry QIR text, a shot count and a seed. Workers each own one
non-reentrant backend and speak a five-step protocol: load, compile,
estimate memory, run and fetch. A classical task consumes the histograms.
"""

from qtask.circuit import ghz_circuit, parity
from qtask.qir import emit_qir
from qtask.runtime import LeastLoaded, RoundRobin, TaskGraph, host_function, submit

##############################################################################
# A small graph: four GHZ runs feeding one classical parity average.


@host_function("mean_parity")
def mean_parity(histograms):
    total = sum(h.shots for h in histograms)
    return sum(parity(b) * c for h in histograms for b, c in h.counts.items()) / total


graph = TaskGraph()
qir = emit_qir(ghz_circuit(6)).text
runs = [graph.add_quantum_task(qir, shots=500, seed=i, name=f"ghz6-{i}") for i in range(4)]
sink = graph.add_classical_task("mean_parity", [graph.output(t) for t in runs])

handle = submit(graph, workers=2, policy=RoundRobin())
print("parity mean:", handle.fetch(graph.output(sink)))
print("assignments:", handle.assignments)
report = handle.timing_report()
print(f"create {report.create:.4f}s  exec+post {report.exec_post:.4f}s  full {report.full:.4f}s")

##############################################################################
# Remote devices are slow. A latency mock adds a fixed delay per run, which
# makes the gain from more workers easy to see.


def mock_graph():
    g = TaskGraph()
    for i in range(8):
        g.add_quantum_task(qir, shots=100, seed=i)
    return g


for workers in (1, 2, 4):
    h = submit(mock_graph(), ["mock(sv):delay=0.1"] * workers, LeastLoaded())
    print(f"{workers} worker(s): exec+post {h.timing_report().exec_post:.2f}s")

##############################################################################
# The same graph over a pipe transport runs each worker in its own process.

h = submit(mock_graph(), ["sv"] * 2, transport="pipe")
print("pipe transport finished, failures:", h.failures())

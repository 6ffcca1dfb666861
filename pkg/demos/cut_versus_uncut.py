"""
Twenty qubits: cut versus uncut
===============================

Cutting a 20-qubit GHZ chain at qubits 6 and 13 leaves fragments of 7, 8 and 7
qubits. Each variant then needs at most 2**8 amplitudes instead of 2**20.
The uncut baseline below resimulates the full state for every shot, which is
what makes it slow.
"""

import sys

from qtask.circuit import ghz_circuit
from qtask.cutting import CutPlan, build_cut_experiment
from qtask.qir import emit_qir
from qtask.runtime import TaskGraph, submit

shots = 100
baseline_shots = int(sys.argv[1]) if len(sys.argv) > 1 else 20

graph, out = build_cut_experiment(20, CutPlan((6, 13)), shots, seed=0)
handle = submit(graph, workers=4)
est = handle.fetch(out)
report = handle.timing_report()
peak = max(t.amplitudes or 0 for t in report.tasks)
print(f"cut:   {est['value']:.6f} +- {est['sigma']:.6f}  {est['variant_count']} circuits  "
      f"peak {peak} amplitudes  {report.full:.2f}s")

##############################################################################
# Per-shot trajectory baseline (pass a shot count on the command line; the
# default of 20 keeps the demo short).

base = TaskGraph()
tid = base.add_quantum_task(emit_qir(ghz_circuit(20)), baseline_shots, seed=0)
h = submit(base, ["sv:mode=trajectory"])
hist = h.fetch(base.output(tid))
r = h.timing_report()
print(f"uncut: {baseline_shots} shots -> {len(hist.counts)} distinct outcomes  "
      f"peak {r.tasks[0].amplitudes} amplitudes  {r.full:.2f}s")

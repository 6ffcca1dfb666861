"""
Reading and writing textual QIR
===============================

Circuits travel between coordinator and workers as textual QIR. The emitter
lowers preparations and basis changes into plain gates, and the parser reads
the result back.
"""

from qtask.circuit import Circuit, Gate, Measurement, Preparation, lower
from qtask.qir import QirParseError, emit_qir, parse_qir

##############################################################################
# A middle-fragment style circuit: prepare |->, entangle, read the far qubit
# in the Y basis.

c = Circuit(2, (Gate("CNOT", (0, 1)),), (Measurement(0, "Z", "y2"), Measurement(1, "Y", "o2")),
            (Preparation(0, "Minus"),), "frag1_k1_s3")
module = emit_qir(c)
print(module.text)

back = parse_qir(module)
print("roundtrip equals lowered circuit:", back == lower(c))

##############################################################################
# Anything outside the static subset is rejected with line numbers.

bad = """define void @main() #0 {
entry:
  call void @__quantum__qis__h__body(%Qubit* null)
  call void @__quantum__qis__t__body(%Qubit* null)
  br label %entry
}
attributes #0 = { "entry_point" }
"""
try:
    parse_qir(bad)
except QirParseError as exc:
    for d in exc.diagnostics:
        print(d)

"""Circuit representation shared by the QIR layer, the backends and the cutter.

A :class:`Circuit` is an immutable list of gates over indexed qubits, with
optional per-qubit state preparations up front and terminal single-qubit
measurements in a Pauli basis at the end. Histogram bitstrings are ordered by
the circuit's measurement list, not by qubit index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .errors import ResourceLimitError

MAX_QUBITS = 30

SINGLE_QUBIT_GATES = ("H", "X", "Y", "Z", "S", "SDG")
ROTATION_GATES = ("RX", "RY", "RZ")
GATE_KINDS = SINGLE_QUBIT_GATES + ROTATION_GATES + ("CNOT",)
PAULI_BASES = ("X", "Y", "Z")
PREP_STATES = ("Zero", "One", "Plus", "Minus", "PlusI", "MinusI")

# Gate sequences that take |0> to each preparation state.
PREP_LOWERING: dict[str, tuple[str, ...]] = {
    "Zero": (),
    "One": ("X",),
    "Plus": ("H",),
    "Minus": ("X", "H"),
    "PlusI": ("H", "S"),
    "MinusI": ("X", "H", "S"),
}

# Rotations that map the basis eigenstates onto the computational basis.
BASIS_ROTATION: dict[str, tuple[str, ...]] = {
    "X": ("H",),
    "Y": ("SDG", "H"),
    "Z": (),
}


@dataclass(frozen=True)
class Gate:
    kind: str
    targets: tuple[int, ...]
    angle: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if self.angle is not None:
            object.__setattr__(self, "angle", float(self.angle))


@dataclass(frozen=True)
class Measurement:
    qubit: int
    basis: str = "Z"
    label: str = ""
    # Number of gates issued before this measurement in program order; None
    # means after every gate. Only sources with interleaved measurement
    # (parsed QIR) set it.
    position: int | None = None


@dataclass(frozen=True)
class Preparation:
    qubit: int
    state: str = "Zero"


@dataclass(frozen=True)
class Circuit:
    num_qubits: int
    gates: tuple[Gate, ...] = ()
    measurements: tuple[Measurement, ...] = ()
    preparations: tuple[Preparation, ...] = ()
    name: str = "circuit"

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        object.__setattr__(self, "measurements", tuple(self.measurements))
        object.__setattr__(self, "preparations", tuple(self.preparations))

    @property
    def num_measurements(self) -> int:
        return len(self.measurements)

    def with_name(self, name: str) -> Circuit:
        return Circuit(self.num_qubits, self.gates, self.measurements, self.preparations, name)


@dataclass(frozen=True)
class Histogram:
    """Outcome counts keyed by bitstring, one character per measurement."""

    counts: Mapping[str, int]
    shots: int
    width: int = field(default=-1)

    def __post_init__(self):
        counts = {str(k): int(v) for k, v in sorted(self.counts.items())}
        object.__setattr__(self, "counts", counts)
        if self.shots < 1:
            raise ValueError(f"shots must be positive, got {self.shots}")
        if any(v < 0 for v in counts.values()):
            raise ValueError("histogram counts must be non-negative")
        if sum(counts.values()) != self.shots:
            raise ValueError(
                f"histogram counts sum to {sum(counts.values())}, expected {self.shots}")
        widths = {len(k) for k in counts}
        if len(widths) > 1:
            raise ValueError(f"mixed bitstring widths {sorted(widths)}")
        if self.width < 0:
            object.__setattr__(self, "width", widths.pop() if widths else 0)
        elif widths and widths != {self.width}:
            raise ValueError(f"bitstrings do not have width {self.width}")
        for key in counts:
            if set(key) - {"0", "1"}:
                raise ValueError(f"non-binary bitstring {key!r}")

    def probabilities(self) -> dict[str, float]:
        return {k: v / self.shots for k, v in self.counts.items()}

    def to_dict(self) -> dict:
        return {"shots": self.shots, "width": self.width, "counts": dict(self.counts)}

    @classmethod
    def from_dict(cls, data: Mapping) -> Histogram:
        return cls(dict(data["counts"]), int(data["shots"]), int(data.get("width", -1)))


def ghz_circuit(n: int) -> Circuit:
    """H on qubit 0 then a CNOT chain, measuring every qubit in Z as y1..yn."""
    if not isinstance(n, int) or n < 1:
        raise ValueError(f"GHZ size must be a positive integer, got {n!r}")
    if n > MAX_QUBITS:
        raise ResourceLimitError(f"GHZ size {n} exceeds the {MAX_QUBITS}-qubit bound")
    gates = [Gate("H", (0,))]
    gates += [Gate("CNOT", (i, i + 1)) for i in range(n - 1)]
    meas = [Measurement(q, "Z", f"y{q + 1}") for q in range(n)]
    return Circuit(n, tuple(gates), tuple(meas), (), f"ghz{n}")


def parity(bits: str) -> int:
    """(-1) to the number of ones in ``bits``."""
    if not bits:
        raise ValueError("parity of an empty bitstring is undefined")
    ones = 0
    for ch in bits:
        if ch == "1":
            ones += 1
        elif ch != "0":
            raise ValueError(f"non-binary character {ch!r} in {bits!r}")
    return -1 if ones % 2 else 1


def validate(circuit: Circuit, max_qubits: int = MAX_QUBITS) -> list[str]:
    """Return every invariant violation of ``circuit``; an empty list means valid."""
    problems: list[str] = []
    n = circuit.num_qubits
    if not isinstance(n, int) or n < 1:
        return [f"num_qubits must be a positive integer, got {n!r}"]
    if n > max_qubits:
        problems.append(f"num_qubits {n} exceeds bound {max_qubits}")

    def in_range(q) -> bool:
        return isinstance(q, int) and 0 <= q < n

    prepared: set[int] = set()
    for i, prep in enumerate(circuit.preparations):
        if not in_range(prep.qubit):
            problems.append(f"qubit {prep.qubit} out of range at preparation {i}")
        if prep.state not in PREP_STATES:
            problems.append(f"unknown preparation state {prep.state!r} at preparation {i}")
        if prep.qubit in prepared:
            problems.append(f"qubit {prep.qubit} prepared twice at preparation {i}")
        prepared.add(prep.qubit)

    for i, gate in enumerate(circuit.gates):
        if gate.kind not in GATE_KINDS:
            problems.append(f"unsupported gate {gate.kind!r} at gate {i}")
            continue
        arity = 2 if gate.kind == "CNOT" else 1
        if len(gate.targets) != arity:
            problems.append(f"{gate.kind} expects {arity} qubit(s), got {len(gate.targets)} at gate {i}")
            continue
        for q in gate.targets:
            if not in_range(q):
                problems.append(f"qubit {q} out of range at gate {i}")
        if gate.kind == "CNOT" and gate.targets[0] == gate.targets[1]:
            problems.append(f"control equals target at gate {i}")
        if gate.kind in ROTATION_GATES:
            if gate.angle is None or not math.isfinite(gate.angle):
                problems.append(f"{gate.kind} needs a finite angle at gate {i}")
        elif gate.angle is not None:
            problems.append(f"{gate.kind} takes no angle at gate {i}")

    measured: dict[int, int] = {}
    for i, m in enumerate(circuit.measurements):
        if not in_range(m.qubit):
            problems.append(f"qubit {m.qubit} out of range at measurement {i}")
        if m.basis not in PAULI_BASES:
            problems.append(f"unknown basis {m.basis!r} at measurement {i}")
        if m.qubit in measured:
            problems.append(f"qubit {m.qubit} measured twice at measurement {i}")
        measured.setdefault(m.qubit, i)
        if m.position is not None:
            for j, gate in enumerate(circuit.gates[m.position:], start=m.position):
                if m.qubit in gate.targets:
                    problems.append(
                        f"non-terminal measurement: gate {j} acts on qubit {m.qubit} "
                        f"after measurement {i}")
                    break
    return problems


def check(circuit: Circuit, max_qubits: int = MAX_QUBITS) -> Circuit:
    """Raise on the first batch of violations, else return ``circuit`` unchanged."""
    problems = validate(circuit, max_qubits)
    if problems:
        if any("exceeds bound" in p for p in problems):
            raise ResourceLimitError("; ".join(problems))
        raise ValueError("invalid circuit: " + "; ".join(problems))
    return circuit


def lower(circuit: Circuit) -> Circuit:
    """Rewrite preparations and non-Z bases as plain gates around Z measurements."""
    gates: list[Gate] = []
    for prep in circuit.preparations:
        gates += [Gate(kind, (prep.qubit,)) for kind in PREP_LOWERING[prep.state]]
    gates += circuit.gates
    for m in circuit.measurements:
        gates += [Gate(kind, (m.qubit,)) for kind in BASIS_ROTATION[m.basis]]
    meas = tuple(Measurement(m.qubit, "Z", m.label) for m in circuit.measurements)
    return Circuit(circuit.num_qubits, tuple(gates), meas, (), circuit.name)


def to_text(circuit: Circuit, include_name: bool = True) -> str:
    """Deterministic line-oriented serialization used for manifests and hashing."""
    lines = []
    if include_name:
        lines.append(f"name {circuit.name}")
    lines.append(f"qubits {circuit.num_qubits}")
    for p in circuit.preparations:
        lines.append(f"prep {p.qubit} {p.state}")
    for g in circuit.gates:
        fields = ["gate", g.kind, *map(str, g.targets)]
        if g.angle is not None:
            fields.append(repr(g.angle))
        lines.append(" ".join(fields))
    for m in circuit.measurements:
        lines.append(f"measure {m.qubit} {m.basis} {m.label}".rstrip())
    return "\n".join(lines) + "\n"

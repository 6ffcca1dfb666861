import pytest
from hypothesis import given
from hypothesis import strategies as st

from qtask.circuit import (MAX_QUBITS, Circuit, Gate, Histogram, Measurement, Preparation, check,
                           ghz_circuit, lower, parity, to_text, validate)
from qtask.errors import ResourceLimitError

bits = st.text(alphabet="01", min_size=1, max_size=40)


def test_ghz_small_shapes():
    c = ghz_circuit(1)
    assert [g.kind for g in c.gates] == ["H"]
    assert len(c.measurements) == 1

    c = ghz_circuit(4)
    assert [g.kind for g in c.gates] == ["H", "CNOT", "CNOT", "CNOT"]
    assert [g.targets for g in c.gates[1:]] == [(0, 1), (1, 2), (2, 3)]
    assert [m.label for m in c.measurements] == ["y1", "y2", "y3", "y4"]
    assert all(m.basis == "Z" for m in c.measurements)


def test_ghz_20_has_chain_of_19():
    c = ghz_circuit(20)
    assert sum(g.kind == "CNOT" for g in c.gates) == 19
    assert c.num_measurements == 20


@pytest.mark.parametrize("n", range(1, MAX_QUBITS + 1))
def test_every_ghz_size_validates(n):
    assert validate(ghz_circuit(n)) == []


def test_ghz_bounds():
    with pytest.raises(ValueError):
        ghz_circuit(0)
    with pytest.raises(ResourceLimitError, match="30"):
        ghz_circuit(31)


@pytest.mark.parametrize("text,expected", [("0000", 1), ("1000", -1), ("1111", 1), ("1", -1)])
def test_parity_examples(text, expected):
    assert parity(text) == expected


def test_parity_rejects_bad_input():
    with pytest.raises(ValueError):
        parity("")
    with pytest.raises(ValueError):
        parity("01a")


@given(bits, bits)
def test_parity_is_multiplicative(a, b):
    assert parity(a + b) == parity(a) * parity(b)


def test_validate_control_equals_target():
    c = Circuit(3, (Gate("CNOT", (2, 2)),))
    assert validate(c) == ["control equals target at gate 0"]


def test_validate_gate_after_measurement():
    c = Circuit(2, (Gate("H", (0,)), Gate("X", (0,))),
                (Measurement(0, "Z", "y1", position=1),))
    problems = validate(c)
    assert len(problems) == 1
    assert problems[0].startswith("non-terminal measurement")


def test_validate_collects_all_violations():
    c = Circuit(2, (Gate("RZ", (0,)), Gate("T", (1,)), Gate("H", (5,))),
                (Measurement(0, "W"), Measurement(0)), (Preparation(1, "Weird"),))
    problems = validate(c)
    assert any("RZ needs a finite angle at gate 0" in p for p in problems)
    assert any("unsupported gate 'T' at gate 1" in p for p in problems)
    assert any("qubit 5 out of range at gate 2" in p for p in problems)
    assert any("unknown basis" in p for p in problems)
    assert any("measured twice at measurement 1" in p for p in problems)
    assert any("unknown preparation state" in p for p in problems)


def test_check_raises_resource_limit_over_bound():
    with pytest.raises(ResourceLimitError):
        check(Circuit(31, (Gate("H", (0,)),)))
    assert validate(Circuit(31, ()), max_qubits=40) == []


def test_lower_expands_preparations_and_bases():
    c = Circuit(2, (Gate("CNOT", (0, 1)),), (Measurement(0, "X"), Measurement(1, "Y")),
                (Preparation(0, "MinusI"),))
    low = lower(c)
    assert [(g.kind, g.targets) for g in low.gates] == [
        ("X", (0,)), ("H", (0,)), ("S", (0,)), ("CNOT", (0, 1)),
        ("H", (0,)), ("SDG", (1,)), ("H", (1,))]
    assert all(m.basis == "Z" for m in low.measurements)
    assert low.preparations == ()


def test_to_text_is_canonical():
    c = Circuit(2, (Gate("RZ", (1,), 0.25), Gate("CNOT", (0, 1))),
                (Measurement(1, "X", "o1"),), (Preparation(0, "Plus"),), "demo")
    assert to_text(c) == (
        "name demo\nqubits 2\nprep 0 Plus\ngate RZ 1 0.25\ngate CNOT 0 1\nmeasure 1 X o1\n")
    assert to_text(c, include_name=False) == to_text(c.with_name("other"), include_name=False)


def test_histogram_invariants():
    h = Histogram({"11": 3, "00": 7}, 10)
    assert h.width == 2
    assert list(h.counts) == ["00", "11"]
    assert h.probabilities() == {"00": 0.7, "11": 0.3}
    assert Histogram.from_dict(h.to_dict()) == h
    with pytest.raises(ValueError, match="sum"):
        Histogram({"0": 3}, 4)
    with pytest.raises(ValueError, match="width"):
        Histogram({"0": 1, "11": 1}, 2)
    with pytest.raises(ValueError, match="non-binary"):
        Histogram({"0x": 1}, 1)
    with pytest.raises(ValueError):
        Histogram({"0": 1}, 1, width=2)


def test_circuits_are_immutable():
    c = ghz_circuit(2)
    with pytest.raises(AttributeError):
        c.num_qubits = 3

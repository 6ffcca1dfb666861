"""Parser and emitter for a static subset of textual QIR (``.ll``).

Only the entry-point function body is interpreted. It must be straight-line
code made of calls to the supported ``__quantum__`` intrinsics, optionally
preceded by one block label and ended by ``ret void``. Declarations,
attribute groups, metadata and other module-level lines are skipped, except
string constants (used for output labels) and the ``required_num_qubits``
entry attribute. See ``docs/qir-subset.md`` for the grammar.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, replace

from .circuit import Circuit, Gate, Measurement, check, lower, validate


@dataclass(frozen=True)
class ParseDiagnostic:
    line: int
    severity: str
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.severity}: {self.message}"


class QirParseError(ValueError):
    def __init__(self, diagnostics: list[ParseDiagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class QirModule:
    text: str
    entry_name: str = "main"


_ONE_QUBIT = {
    "__quantum__qis__h__body": "H",
    "__quantum__qis__x__body": "X",
    "__quantum__qis__y__body": "Y",
    "__quantum__qis__z__body": "Z",
    "__quantum__qis__s__body": "S",
    "__quantum__qis__s__adj": "SDG",
}
_ROTATIONS = {
    "__quantum__qis__rx__body": "RX",
    "__quantum__qis__ry__body": "RY",
    "__quantum__qis__rz__body": "RZ",
}
_EMIT_NAME = {v: k for k, v in {**_ONE_QUBIT, **_ROTATIONS}.items()}
_EMIT_NAME["CNOT"] = "__quantum__qis__cnot__body"

_CONTROL_FLOW = re.compile(r"^(?:%[\w.]+\s*=\s*)?(br|switch|indirectbr|phi|callbr|invoke|select)\b")
_CALL = re.compile(r"^(?:tail\s+|musttail\s+|notail\s+)?call\s+void\s+@([\w.$]+)\s*\((.*)\)\s*(?:#\d+)?$")
_DEFINE = re.compile(r"^define\b.*?@([\w.$]+)\s*\(.*\)\s*(.*)\{\s*$")
_ATTR_GROUP = re.compile(r"^attributes\s+#(\d+)\s*=\s*\{(.*)\}\s*$")
_STRING_CONST = re.compile(r'^@([\w.$]+)\s*=.*?\bc"((?:[^"\\]|\\[0-9A-Fa-f]{2}|\\\\)*)"')
_MODULE_ID = re.compile(r"^;\s*ModuleID\s*=\s*'([^']*)'")
_SOURCE_NAME = re.compile(r'^source_filename\s*=\s*"([^"]*)"')
_LABEL = re.compile(r"^[\w.$-]+:")
_NULL = re.compile(r"^(?:%(?:Qubit|Result)\*|ptr)\s+null$")
_INTTOPTR = re.compile(
    r"^(?:%(?P<ty>Qubit|Result)\*|ptr)\s+inttoptr\s*\(\s*i64\s+(?P<k>\d+)\s+to\s+"
    r"(?:%(?P<ty2>Qubit|Result)\*|ptr)\s*\)$")
_DOUBLE = re.compile(
    r"^double\s+(?P<v>0x[0-9A-Fa-f]{16}|[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)$")
_GEP_LABEL = re.compile(
    r"^(?:i8\*\s+getelementptr\s+inbounds\s*\(\s*\[\d+\s+x\s+i8\]\s*,\s*\[\d+\s+x\s+i8\]\*\s*"
    r"@(?P<g1>[\w.$]+)\s*,\s*i(?:32|64)\s+0\s*,\s*i(?:32|64)\s+0\s*\)|ptr\s+@(?P<g2>[\w.$]+))$")
_NULL_LABEL = re.compile(r"^(?:i8\*|ptr)\s+null$")


class _SyntaxError(Exception):
    pass


def _strip_comment(line: str) -> str:
    in_str = False
    for i, ch in enumerate(line):
        if ch == '"':
            in_str = not in_str
        elif ch == ";" and not in_str:
            return line[:i]
    return line


def _split_args(text: str) -> list[str]:
    args, depth, cur = [], 0, []
    for ch in text:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == "," and depth == 0:
            args.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur).strip()
    if tail or args:
        args.append(tail)
    return args


def _pointer_index(arg: str, kind: str) -> int:
    if _NULL.match(arg):
        if not arg.startswith("ptr") and f"%{kind}*" not in arg:
            raise _SyntaxError(f"expected %{kind}* operand, got {arg!r}")
        return 0
    m = _INTTOPTR.match(arg)
    if not m:
        raise _SyntaxError(f"malformed {kind.lower()} operand {arg!r}")
    for ty in (m.group("ty"), m.group("ty2")):
        if ty is not None and ty != kind:
            raise _SyntaxError(f"expected %{kind}* operand, got {arg!r}")
    return int(m.group("k"))


def _double(arg: str) -> float:
    m = _DOUBLE.match(arg)
    if not m:
        raise _SyntaxError(f"malformed double operand {arg!r}")
    v = m.group("v")
    if v.lower().startswith("0x"):
        return struct.unpack(">d", bytes.fromhex(v[2:]))[0]
    return float(v)


def _decode_cstring(body: str) -> str:
    out = bytearray()
    i = 0
    while i < len(body):
        if body[i] == "\\":
            if body[i + 1] == "\\":
                out.append(0x5C)
                i += 2
            else:
                out.append(int(body[i + 1:i + 3], 16))
                i += 3
        else:
            out.extend(body[i].encode("utf-8"))
            i += 1
    return out.rstrip(b"\x00").decode("utf-8", errors="replace")


def _encode_cstring(label: str) -> tuple[str, int]:
    raw = label.encode("utf-8") + b"\x00"
    parts = []
    for byte in raw:
        ch = chr(byte)
        if 0x20 <= byte < 0x7F and ch not in '"\\':
            parts.append(ch)
        else:
            parts.append(f"\\{byte:02X}")
    return "".join(parts), len(raw)


def parse_qir(source: str | QirModule) -> Circuit:
    """Parse a QIR module into a :class:`Circuit`; raise :class:`QirParseError`."""
    text = source.text if isinstance(source, QirModule) else source
    diags: list[ParseDiagnostic] = []

    def error(lineno: int, msg: str):
        diags.append(ParseDiagnostic(lineno, "error", msg))

    name = None
    strings: dict[str, str] = {}
    attr_groups: dict[str, str] = {}
    functions: list[tuple[str, str, int, list[tuple[int, str]]]] = []
    current = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        mid = _MODULE_ID.match(raw.strip())
        if mid:
            name = mid.group(1)
            continue
        line = _strip_comment(raw).strip()
        if not line:
            continue
        src = _SOURCE_NAME.match(line)
        if src and name is None:
            name = src.group(1)
            continue
        if current is not None:
            if line == "}":
                functions.append(current)
                current = None
            else:
                current[3].append((lineno, line))
            continue
        m = _DEFINE.match(line)
        if m:
            current = (m.group(1), m.group(2), lineno, [])
            continue
        m = _STRING_CONST.match(line)
        if m:
            strings[m.group(1)] = _decode_cstring(m.group(2))
            continue
        m = _ATTR_GROUP.match(line)
        if m:
            attr_groups[m.group(1)] = m.group(2)
    if current is not None:
        error(current[2], f"function @{current[0]} is not closed")
        raise QirParseError(diags)

    def is_entry(fn) -> bool:
        groups = re.findall(r"#(\d+)", fn[1])
        return any(re.search(r'"(?:entry_point|EntryPoint)"', attr_groups.get(g, "")) for g in groups)

    entries = [fn for fn in functions if is_entry(fn)]
    if not entries and len(functions) == 1:
        entries = functions
    if len(entries) != 1:
        what = "no entry point function" if not entries else "multiple entry point functions"
        error(entries[1][2] if entries else 1, what)
        raise QirParseError(diags)
    entry_name, entry_attrs, define_line, body = entries[0]

    declared_qubits = None
    for g in re.findall(r"#(\d+)", entry_attrs):
        m = re.search(r'"required_num_qubits"="(\d+)"', attr_groups.get(g, ""))
        if m:
            declared_qubits = int(m.group(1))

    gates: list[Gate] = []
    gate_lines: list[int] = []
    mz: list[tuple[int, int, int]] = []  # (qubit, result index, gate count so far)
    mz_lines: list[int] = []
    labels: dict[int, str] = {}
    seen_label = False
    returned = False

    for lineno, line in body:
        if returned:
            error(lineno, "instruction after ret")
            continue
        if _LABEL.match(line):
            if seen_label or gates or mz:
                error(lineno, "unsupported control flow: multiple basic blocks")
            seen_label = True
            continue
        if _CONTROL_FLOW.match(line):
            error(lineno, f"unsupported control flow: {line.split()[0] if '=' not in line else 'phi'}")
            continue
        if line == "ret void":
            returned = True
            continue
        m = _CALL.match(line)
        if not m:
            error(lineno, f"unsupported instruction: {line}")
            continue
        callee, args = m.group(1), _split_args(m.group(2))
        try:
            if callee in _ONE_QUBIT:
                _arity(args, 1, callee)
                gates.append(Gate(_ONE_QUBIT[callee], (_pointer_index(args[0], "Qubit"),)))
                gate_lines.append(lineno)
            elif callee in _ROTATIONS:
                _arity(args, 2, callee)
                angle = _double(args[0])
                gates.append(Gate(_ROTATIONS[callee], (_pointer_index(args[1], "Qubit"),), angle))
                gate_lines.append(lineno)
            elif callee == "__quantum__qis__cnot__body":
                _arity(args, 2, callee)
                gates.append(Gate("CNOT", (_pointer_index(args[0], "Qubit"),
                                           _pointer_index(args[1], "Qubit"))))
                gate_lines.append(lineno)
            elif callee == "__quantum__qis__mz__body":
                _arity(args, 2, callee)
                q, r = _pointer_index(args[0], "Qubit"), _pointer_index(args[1], "Result")
                if any(r == prev for _, prev, _ in mz):
                    raise _SyntaxError(f"result index {r} written twice")
                mz.append((q, r, len(gates)))
                mz_lines.append(lineno)
            elif callee == "__quantum__rt__result_record_output":
                _arity(args, 2, callee)
                r = _pointer_index(args[0], "Result")
                if not any(r == prev for _, prev, _ in mz):
                    raise _SyntaxError(f"result index {r} recorded before being measured")
                if _NULL_LABEL.match(args[1]):
                    continue
                lm = _GEP_LABEL.match(args[1])
                if not lm:
                    raise _SyntaxError(f"malformed output label operand {args[1]!r}")
                glob = lm.group("g1") or lm.group("g2")
                if glob not in strings:
                    raise _SyntaxError(f"unknown label constant @{glob}")
                labels[r] = strings[glob]
            elif callee == "__quantum__rt__initialize":
                continue
            elif callee.startswith("__quantum__"):
                error(lineno, f"unsupported intrinsic: {callee}")
            else:
                error(lineno, f"unsupported call: @{callee}")
        except _SyntaxError as exc:
            error(lineno, f"syntax error: {exc}")

    if not returned and not diags:
        error(body[-1][0] if body else define_line, "entry function does not end with ret void")
    if diags:
        raise QirParseError(diags)

    used = [q for g in gates for q in g.targets] + [q for q, _, _ in mz]
    n = max(used, default=0) + 1
    if declared_qubits is not None:
        if declared_qubits < n:
            error(define_line, f"required_num_qubits={declared_qubits} but qubit {n - 1} is used")
            raise QirParseError(diags)
        n = declared_qubits
    meas = tuple(Measurement(q, "Z", labels.get(r, f"r{r}"), pos) for q, r, pos in mz)
    circuit = Circuit(n, tuple(gates), meas, (), name or "qir")

    problems = validate(circuit)
    if problems:
        for p in problems:
            g = re.search(r"at gate (\d+)", p) or re.search(r"gate (\d+) acts", p)
            mm = re.search(r"(?:at|after) measurement (\d+)", p)
            if g:
                line = gate_lines[int(g.group(1))]
            elif mm:
                line = mz_lines[int(mm.group(1))]
            else:
                line = define_line
            error(line, p)
        raise QirParseError(sorted(diags, key=lambda d: d.line))
    return replace(circuit, measurements=tuple(replace(m, position=None) for m in meas))


def _arity(args: list[str], n: int, callee: str):
    if len(args) != n:
        raise _SyntaxError(f"@{callee} takes {n} operand(s), got {len(args)}")


def _operand(index: int, kind: str) -> str:
    if index == 0:
        return f"%{kind}* null"
    return f"%{kind}* inttoptr (i64 {index} to %{kind}*)"


def _double_literal(value: float) -> str:
    return "0x" + struct.pack(">d", value).hex().upper()


def emit_qir(circuit: Circuit, entry_name: str = "main") -> QirModule:
    """Lower ``circuit`` and print it as a base-profile QIR module."""
    check(circuit)
    low = lower(circuit)
    name = re.sub(r"[^\w.\-]", "_", low.name)

    body = []
    used = set()
    for g in low.gates:
        callee = _EMIT_NAME[g.kind]
        used.add(callee)
        if g.kind == "CNOT":
            args = f"{_operand(g.targets[0], 'Qubit')}, {_operand(g.targets[1], 'Qubit')}"
        elif g.angle is not None:
            args = f"double {_double_literal(g.angle)}, {_operand(g.targets[0], 'Qubit')}"
        else:
            args = _operand(g.targets[0], "Qubit")
        body.append(f"  call void @{callee}({args})")
    for r, m in enumerate(low.measurements):
        body.append(f"  call void @__quantum__qis__mz__body({_operand(m.qubit, 'Qubit')}, "
                    f"{_operand(r, 'Result')}) #1")
    globals_ = []
    for r, m in enumerate(low.measurements):
        enc, size = _encode_cstring(m.label)
        globals_.append(f'@{r} = internal constant [{size} x i8] c"{enc}"')
        body.append(
            f"  call void @__quantum__rt__result_record_output({_operand(r, 'Result')}, "
            f"i8* getelementptr inbounds ([{size} x i8], [{size} x i8]* @{r}, i32 0, i32 0))")

    decls = []
    for callee in sorted(used):
        if callee in _ROTATIONS:
            decls.append(f"declare void @{callee}(double, %Qubit*)")
        elif callee == "__quantum__qis__cnot__body":
            decls.append(f"declare void @{callee}(%Qubit*, %Qubit*)")
        else:
            decls.append(f"declare void @{callee}(%Qubit*)")
    if low.measurements:
        decls.append("declare void @__quantum__qis__mz__body(%Qubit*, %Result* writeonly) #1")
        decls.append("declare void @__quantum__rt__result_record_output(%Result*, i8*)")

    lines = [
        f"; ModuleID = '{name}'",
        f'source_filename = "{name}"',
        "",
        "%Qubit = type opaque",
        "%Result = type opaque",
        "",
        *globals_,
        *([""] if globals_ else []),
        f"define void @{entry_name}() #0 {{",
        "entry:",
        *body,
        "  ret void",
        "}",
        "",
        *decls,
        "",
        'attributes #0 = { "entry_point" "output_labeling_schema" "qir_profiles"="base_profile" '
        f'"required_num_qubits"="{low.num_qubits}" "required_num_results"="{low.num_measurements}" }}',
        'attributes #1 = { "irreversible" }',
        "",
        "!llvm.module.flags = !{!0, !1, !2, !3}",
        "",
        '!0 = !{i32 1, !"qir_major_version", i32 1}',
        '!1 = !{i32 7, !"qir_minor_version", i32 0}',
        '!2 = !{i32 1, !"dynamic_qubit_management", i1 false}',
        '!3 = !{i32 1, !"dynamic_result_management", i1 false}',
    ]
    return QirModule("\n".join(lines) + "\n", entry_name)

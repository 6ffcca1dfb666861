"""Executable quantum backends.

Two kinds sit behind one ``run(circuit, shots, seed)`` interface:

``StatevectorBackend``
    Dense double-precision statevector. Qubit 0 is the least significant bit
    of the amplitude index. Since every measurement is terminal, ``run``
    samples all shots in one multinomial draw from the final distribution.
    ``mode="trajectory"`` instead resimulates the circuit for every shot; it
    exists as a baseline for comparing against cut execution.

``LatencyMockBackend``
    Wraps another backend and sleeps ``delay + U(0, jitter)`` seconds per
    ``run`` call, standing in for a remote vendor round trip. Results are
    bit-identical to the wrapped backend.

Randomness: every sample stream is ``numpy.random.default_rng(seed)``
(PCG64 seeded through ``SeedSequence``). :func:`derive_seed` mixes a task key
into a base seed so per-task streams do not depend on execution order.

Backends are not reentrant. A second concurrent ``run`` on the same instance
raises instead of silently sharing state.
"""

from __future__ import annotations

import math
import re
import threading
import time
from dataclasses import dataclass
from typing import Union

import numpy as np

from .circuit import MAX_QUBITS, Circuit, Histogram, check, lower, parity
from .errors import ResourceLimitError

_SQ2 = 1 / math.sqrt(2)

_FIXED = {
    "H": np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "S": np.array([[1, 0], [0, 1j]], dtype=complex),
    "SDG": np.array([[1, 0], [0, -1j]], dtype=complex),
}


def gate_matrix(kind: str, angle: float | None = None) -> np.ndarray:
    if kind in _FIXED:
        return _FIXED[kind]
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    if kind == "RX":
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    if kind == "RY":
        return np.array([[c, -s], [s, c]], dtype=complex)
    if kind == "RZ":
        return np.array([[complex(c, -s), 0], [0, complex(c, s)]], dtype=complex)
    raise ValueError(f"no matrix for gate {kind!r}")


def _apply_1q(state: np.ndarray, u: np.ndarray, q: int, n: int) -> None:
    # (high, target bit, low): each target pairs 2**(n-1) amplitudes.
    v = state.reshape(1 << (n - 1 - q), 2, 1 << q)
    a = v[:, 0, :].copy()
    b = v[:, 1, :]
    v[:, 0, :] = u[0, 0] * a + u[0, 1] * b
    v[:, 1, :] = u[1, 0] * a + u[1, 1] * b


def _apply_cnot(state: np.ndarray, control: int, target: int, n: int) -> None:
    v = state.reshape((2,) * n)
    c_ax, t_ax = n - 1 - control, n - 1 - target
    idx0 = [slice(None)] * n
    idx1 = [slice(None)] * n
    idx0[c_ax] = idx1[c_ax] = 1
    idx0[t_ax], idx1[t_ax] = 0, 1
    idx0, idx1 = tuple(idx0), tuple(idx1)
    tmp = v[idx0].copy()
    v[idx0] = v[idx1]
    v[idx1] = tmp


def simulate(circuit: Circuit, max_qubits: int = MAX_QUBITS, check_norm: bool = False) -> np.ndarray:
    """Final statevector: preparations, gates, then measurement basis rotations."""
    if circuit.num_qubits > max_qubits:
        raise ResourceLimitError(
            f"{circuit.num_qubits} qubits exceeds the {max_qubits}-qubit simulation bound")
    low = lower(check(circuit, max_qubits))
    n = low.num_qubits
    state = np.zeros(1 << n, dtype=complex)
    state[0] = 1.0
    for i, gate in enumerate(low.gates):
        if gate.kind == "CNOT":
            _apply_cnot(state, gate.targets[0], gate.targets[1], n)
        else:
            _apply_1q(state, gate_matrix(gate.kind, gate.angle), gate.targets[0], n)
        if check_norm:
            err = abs(np.vdot(state, state).real - 1.0)
            if err >= 1e-10:
                raise ArithmeticError(f"norm drifted by {err:.3e} after gate {i}")
    return state


def _outcome_index(circuit: Circuit) -> np.ndarray:
    """Map each amplitude index to its measurement-ordered outcome index."""
    n, m = circuit.num_qubits, circuit.num_measurements
    basis = np.arange(1 << n, dtype=np.int64)
    out = np.zeros(1 << n, dtype=np.int64)
    for pos, meas in enumerate(circuit.measurements):
        out |= ((basis >> meas.qubit) & 1) << (m - 1 - pos)
    return out


def _marginal(circuit: Circuit, state: np.ndarray) -> np.ndarray:
    probs = np.abs(state) ** 2
    if circuit.num_measurements == circuit.num_qubits and all(
            m.qubit == circuit.num_qubits - 1 - i for i, m in enumerate(circuit.measurements)):
        out = probs
    else:
        out = np.bincount(_outcome_index(circuit), weights=probs,
                          minlength=1 << circuit.num_measurements)
    return out / out.sum()


def _key(index: int, width: int) -> str:
    return format(index, f"0{width}b") if width else ""


def exact_distribution(circuit: Circuit, max_qubits: int = MAX_QUBITS) -> dict[str, float]:
    """Outcome probabilities in measurement-list order; entries below 1e-14 are dropped."""
    probs = _marginal(circuit, simulate(circuit, max_qubits))
    m = circuit.num_measurements
    return {_key(i, m): float(p) for i, p in enumerate(probs) if p > 1e-14}


def expectation_exact(circuit: Circuit, max_qubits: int = MAX_QUBITS) -> float:
    """Parity of all measured bits, averaged over the exact distribution."""
    if not circuit.measurements:
        raise ValueError("parity observable needs at least one measurement")
    dist = exact_distribution(circuit, max_qubits)
    return float(sum(parity(b) * p for b, p in dist.items()))


def estimate_output_size(circuit: Circuit, shots: int) -> int:
    """Upper bound on histogram entries: min(2**measurements, shots)."""
    m = circuit.num_measurements
    if m >= 63:
        return int(shots)
    return int(min(1 << m, shots))


def derive_seed(base: int, *keys: int) -> int:
    """Deterministic 64-bit sub-seed for ``keys`` under ``base``."""
    ss = np.random.SeedSequence(int(base), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


class StatevectorBackend:
    kind = "Statevector"

    def __init__(self, seed: int = 0, mode: str = "sample", max_qubits: int = MAX_QUBITS):
        if mode not in ("sample", "trajectory"):
            raise ValueError(f"unknown statevector mode {mode!r}")
        self.seed = int(seed)
        self.mode = mode
        self.max_qubits = max_qubits
        self._lock = threading.Lock()
        self.max_amplitudes = 0
        self.last_amplitudes = 0  # statevector size of the latest run

    def run(self, circuit: Circuit, shots: int, seed: int | None = None) -> Histogram:
        if shots < 1:
            raise ValueError(f"shots must be >= 1, got {shots}")
        if not self._lock.acquire(blocking=False):
            raise RuntimeError("backend is not reentrant: concurrent run() on one instance")
        try:
            rng = np.random.default_rng(self.seed if seed is None else seed)
            if self.mode == "trajectory":
                counts = self._run_trajectories(circuit, shots, rng)
            else:
                state = simulate(circuit, self.max_qubits)
                self._touch(state.size)
                counts = rng.multinomial(shots, _marginal(circuit, state))
        finally:
            self._lock.release()
        m = circuit.num_measurements
        hist = {_key(int(i), m): int(c) for i, c in zip(np.flatnonzero(counts), counts[counts > 0])}
        return Histogram(hist, shots, m)

    def _touch(self, size: int) -> None:
        self.last_amplitudes = size
        self.max_amplitudes = max(self.max_amplitudes, size)

    def _run_trajectories(self, circuit: Circuit, shots: int, rng) -> np.ndarray:
        counts = np.zeros(1 << circuit.num_measurements, dtype=np.int64)
        for _ in range(shots):
            state = simulate(circuit, self.max_qubits)
            self._touch(state.size)
            probs = _marginal(circuit, state)
            counts[rng.choice(probs.size, p=probs)] += 1
        return counts


class LatencyMockBackend:
    kind = "LatencyMock"

    def __init__(self, inner, delay: float = 0.0, jitter: float = 0.0, seed: int = 0):
        if delay < 0 or jitter < 0:
            raise ValueError("delay and jitter must be non-negative")
        if isinstance(inner, LatencyMockBackend):
            raise ValueError("a latency mock must wrap a non-mock backend")
        self.inner = inner
        self.delay = float(delay)
        self.jitter = float(jitter)
        self._timing_rng = np.random.default_rng(seed)

    @property
    def max_amplitudes(self) -> int:
        return self.inner.max_amplitudes

    @property
    def last_amplitudes(self) -> int:
        return self.inner.last_amplitudes

    def run(self, circuit: Circuit, shots: int, seed: int | None = None) -> Histogram:
        result = self.inner.run(circuit, shots, seed)
        pause = self.delay + (self._timing_rng.uniform(0, self.jitter) if self.jitter else 0.0)
        if pause:
            time.sleep(pause)
        return result


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "Statevector"
    seed: int = 0
    mode: str = "sample"
    inner: BackendConfig | None = None
    delay: float = 0.0
    jitter: float = 0.0

    def selector(self) -> str:
        if self.kind == "LatencyMock":
            opts = [f"delay={self.delay:g}"]
            if self.jitter:
                opts.append(f"jitter={self.jitter:g}")
            if self.seed:
                opts.append(f"seed={self.seed}")
            return f"mock({self.inner.selector()}):" + ",".join(opts)
        opts = []
        if self.seed:
            opts.append(f"seed={self.seed}")
        if self.mode != "sample":
            opts.append(f"mode={self.mode}")
        return "sv" + (":" + ",".join(opts) if opts else "")


_MOCK_RE = re.compile(r"^mock\((?P<inner>.+)\)(?::(?P<opts>.*))?$")


def _options(text: str | None, allowed: set[str], selector: str) -> dict[str, str]:
    opts: dict[str, str] = {}
    if not text:
        return opts
    for item in text.split(","):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in allowed:
            raise ValueError(f"bad option {item!r} in backend selector {selector!r}")
        opts[key] = value.strip()
    return opts


def parse_selector(selector: str) -> BackendConfig:
    """Parse ``sv``, ``sv:seed=N,mode=trajectory`` or ``mock(<inner>):delay=D,jitter=J``."""
    text = selector.strip()
    mock = _MOCK_RE.match(text)
    try:
        if mock:
            inner = parse_selector(mock.group("inner"))
            if inner.kind == "LatencyMock":
                raise ValueError("a latency mock must wrap a non-mock backend")
            opts = _options(mock.group("opts"), {"delay", "jitter", "seed"}, selector)
            delay = float(opts.get("delay", 0.0))
            jitter = float(opts.get("jitter", 0.0))
            if delay < 0 or jitter < 0:
                raise ValueError(f"negative delay in backend selector {selector!r}")
            return BackendConfig("LatencyMock", int(opts.get("seed", 0)), inner=inner,
                                 delay=delay, jitter=jitter)
        head, _, rest = text.partition(":")
        if head != "sv":
            raise ValueError(f"unknown backend {head!r} in selector {selector!r}")
        opts = _options(rest, {"seed", "mode"}, selector)
        mode = opts.get("mode", "sample")
        if mode not in ("sample", "trajectory"):
            raise ValueError(f"unknown statevector mode {mode!r}")
        seed = int(opts.get("seed", 0))
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed out of 64-bit range in {selector!r}")
        return BackendConfig("Statevector", seed, mode)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"invalid backend selector {selector!r}: {exc}") from None


Backend = Union[StatevectorBackend, LatencyMockBackend]


def make_backend(selector: str | BackendConfig) -> Backend:
    config = parse_selector(selector) if isinstance(selector, str) else selector
    if config.kind == "LatencyMock":
        return LatencyMockBackend(make_backend(config.inner), config.delay, config.jitter, config.seed)
    return StatevectorBackend(config.seed, config.mode)


def run(circuit: Circuit, shots: int, seed: int | None = None) -> Histogram:
    """Sample ``circuit`` on a fresh statevector backend."""
    return StatevectorBackend().run(circuit, shots, seed)

"""Task graph construction: tasks, memory objects and dependency edges."""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable

from ..errors import GraphError, NotReadyError
from ..qir import QirModule


class TaskState(str, enum.Enum):
    PENDING = "Pending"
    READY = "Ready"
    RUNNING = "Running"
    DONE = "Done"
    FAILED = "Failed"


_ALLOWED = {
    TaskState.PENDING: {TaskState.READY, TaskState.FAILED},
    TaskState.READY: {TaskState.RUNNING, TaskState.FAILED},
    TaskState.RUNNING: {TaskState.DONE, TaskState.FAILED},
    TaskState.DONE: set(),
    TaskState.FAILED: set(),
}


class MemObject:
    """Single-assignment buffer written by exactly one producing task."""

    def __init__(self, mem_id: int, producer: int):
        self.id = mem_id
        self.producer = producer
        self.size_hint: int | None = None
        self._payload: Any = None
        self._written = False
        self._lock = threading.Lock()

    @property
    def written(self) -> bool:
        return self._written

    def write(self, payload: Any) -> None:
        with self._lock:
            if self._written:
                raise GraphError(f"memory object {self.id} written twice")
            self._payload = payload
            self._written = True

    def read(self) -> Any:
        if not self._written:
            raise NotReadyError(f"memory object {self.id} has not been written")
        return self._payload


@dataclass
class QuantumKind:
    qir: str
    shots: int
    seed: int | None = None
    backend: str | None = None  # restrict to workers with this selector


@dataclass
class ClassicalKind:
    function: str
    params: dict = field(default_factory=dict)


@dataclass
class Task:
    id: int
    name: str
    kind: QuantumKind | ClassicalKind
    inputs: list[int]
    outputs: list[int]
    state: TaskState = TaskState.PENDING
    error: str | None = None

    @property
    def is_quantum(self) -> bool:
        return isinstance(self.kind, QuantumKind)

    def transition(self, new: TaskState) -> None:
        if new not in _ALLOWED[self.state]:
            raise GraphError(f"task {self.id} cannot go from {self.state.value} to {new.value}")
        self.state = new


class TaskGraph:
    def __init__(self):
        self.created_at = time.perf_counter()
        self.tasks: dict[int, Task] = {}
        self.mems: dict[int, MemObject] = {}
        self.edges: set[tuple[int, int]] = set()
        self.submitted = False

    def _check_open(self):
        if self.submitted:
            raise GraphError("graph was already submitted")

    def _new_task(self, name, kind, inputs, n_outputs) -> int:
        self._check_open()
        for mem in inputs:
            if mem not in self.mems:
                raise GraphError(f"unknown memory object {mem}")
        tid = len(self.tasks)
        outputs = []
        for _ in range(n_outputs):
            mid = len(self.mems)
            self.mems[mid] = MemObject(mid, tid)
            outputs.append(mid)
        self.tasks[tid] = Task(tid, name or f"task{tid}", kind, list(inputs), outputs)
        for mem in inputs:
            self.edges.add((self.mems[mem].producer, tid))
        return tid

    def add_quantum_task(self, qir: str | QirModule, shots: int, seed: int | None = None,
                         backend: str | None = None, name: str | None = None) -> int:
        if shots < 1:
            raise ValueError(f"shots must be >= 1, got {shots}")
        text = qir.text if isinstance(qir, QirModule) else qir
        return self._new_task(name, QuantumKind(text, int(shots), seed, backend), (), 1)

    def add_classical_task(self, function: str, inputs=(), params: dict | None = None,
                           outputs: int = 1, name: str | None = None) -> int:
        if function not in HOST_FUNCTIONS:
            raise GraphError(f"no host function registered as {function!r}")
        return self._new_task(name, ClassicalKind(function, dict(params or {})), inputs, outputs)

    def output(self, task_id: int, index: int = 0) -> int:
        return self.task(task_id).outputs[index]

    def task(self, task_id: int) -> Task:
        try:
            return self.tasks[task_id]
        except KeyError:
            raise GraphError(f"unknown task {task_id}") from None

    def add_dependency(self, before: int, after: int) -> None:
        self._check_open()
        self.task(before), self.task(after)
        if before == after or self._reaches(after, before):
            raise GraphError(f"dependency {before} -> {after} would create a cycle")
        self.edges.add((before, after))

    def successors(self, task_id: int) -> list[int]:
        return sorted(b for a, b in self.edges if a == task_id)

    def predecessors(self, task_id: int) -> list[int]:
        return sorted(a for a, b in self.edges if b == task_id)

    def _reaches(self, start: int, goal: int) -> bool:
        adj: dict[int, list[int]] = {}
        for a, b in self.edges:
            adj.setdefault(a, []).append(b)
        stack, seen = [start], {start}
        while stack:
            node = stack.pop()
            if node == goal:
                return True
            for nxt in adj.get(node, ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return False

    def sinks(self) -> list[int]:
        sources = {a for a, _ in self.edges}
        return [t for t in self.tasks if t not in sources]

    def initial_ready(self) -> list[int]:
        targets = {b for _, b in self.edges}
        return [t for t in self.tasks if t not in targets]


HOST_FUNCTIONS: dict[str, Callable] = {}


def host_function(name: str):
    """Register ``fn(inputs: list, **params)`` as a classical task kernel."""
    def register(fn):
        HOST_FUNCTIONS[name] = fn
        return fn
    return register


@host_function("noop")
def _noop(inputs, **params):
    return None


@host_function("collect")
def _collect(inputs, **params):
    return list(inputs)

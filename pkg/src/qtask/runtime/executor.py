"""Graph execution: policies, QPU drivers, host pool, results and timing.

Timing phases of a run:

* ``create``: graph construction up to the start of execution;
* ``exec_post``: start of execution until the last task is Done or Failed,
  classical post-processing included;
* ``retrieve``: time spent inside :func:`fetch_result`;
* ``full``: graph construction until the later of execution end and the last
  fetch.
"""

from __future__ import annotations

import logging
import os
import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Sequence

from ..backends import parse_selector
from ..circuit import Histogram
from ..errors import GraphError, NotReadyError, ProtocolError, TaskFailedError
from .graph import HOST_FUNCTIONS, TaskGraph, TaskState
from .protocol import SEQUENCE, Verb, WorkerMessage
from .worker import TRANSPORTS

log = logging.getLogger(__name__)


class RoundRobin:
    """Cycle ready quantum tasks over compatible workers, ``batch`` at a time."""

    lazy = False

    def __init__(self, batch: int = 1):
        if batch < 1:
            raise ValueError("batch size must be >= 1")
        self.batch = batch
        self._count = 0

    def choose(self, task, workers, load):
        pick = workers[(self._count // self.batch) % len(workers)]
        self._count += 1
        return pick


class LeastLoaded:
    """Send each ready task to the compatible worker with the fewest queued tasks.

    Tasks wait centrally while every compatible worker is busy, so no worker
    sits idle while a task it could run is waiting.
    """

    lazy = True

    def choose(self, task, workers, load):
        return min(workers, key=lambda w: (load[w], workers.index(w)))


class Affinity:
    """Pin tasks (by id or name) to workers; unpinned tasks fall back to RoundRobin."""

    lazy = False

    def __init__(self, mapping: Mapping[Any, str], batch: int = 1):
        self.mapping = dict(mapping)
        self._fallback = RoundRobin(batch)

    def choose(self, task, workers, load):
        wid = self.mapping.get(task.id, self.mapping.get(task.name))
        if wid is None:
            return self._fallback.choose(task, workers, load)
        if wid not in workers:
            raise GraphError(f"task {task.name} pinned to unavailable worker {wid!r}")
        return wid


POLICIES = {"roundrobin": RoundRobin, "leastloaded": LeastLoaded}


def make_policy(name: str, batch: int = 1):
    key = name.replace("-", "").replace("_", "").lower()
    if key == "roundrobin":
        return RoundRobin(batch)
    if key == "leastloaded":
        return LeastLoaded()
    raise ValueError(f"unknown scheduling policy {name!r}")


@dataclass
class TaskTiming:
    task: int
    name: str
    worker: str | None = None
    queued_at: float | None = None
    started_at: float | None = None
    finished_at: float | None = None
    state: str = TaskState.PENDING.value
    amplitudes: int | None = None  # statevector size simulated by a quantum task


@dataclass
class TimingReport:
    full: float
    create: float
    exec_post: float
    retrieve: float
    tasks: list[TaskTiming] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def default_worker_count(cap: int = 8) -> int:
    env = os.environ.get("QTASK_WORKERS")
    if env:
        count = int(env)
        if count < 1:
            raise ValueError(f"QTASK_WORKERS must be >= 1, got {env!r}")
        return count
    return max(1, min(os.cpu_count() or 1, cap))


def _normalize_workers(workers) -> list[tuple[str, str]]:
    if isinstance(workers, int):
        workers = ["sv"] * workers
    out = []
    for i, w in enumerate(workers):
        wid, selector = (f"qpu{i}", w) if isinstance(w, str) else w
        out.append((str(wid), selector))
    if not out:
        raise ValueError("at least one QPU worker is required")
    if len({w for w, _ in out}) != len(out):
        raise ValueError("worker ids must be unique")
    return out


class RunHandle:
    def __init__(self, graph: TaskGraph, workers: list[tuple[str, str]], policy):
        self.graph = graph
        self.workers = workers
        self.policy = policy
        self.assignments: dict[str, list[int]] = {w: [] for w, _ in workers}
        self.timings = {t.id: TaskTiming(t.id, t.name) for t in graph.tasks.values()}
        self.exec_start: float | None = None
        self.exec_end: float | None = None
        self.retrieve_seconds = 0.0
        self._last_fetch_end: float | None = None
        self._done = threading.Event()
        self._error: BaseException | None = None
        self._thread: threading.Thread | None = None

    @property
    def done(self) -> bool:
        return self._done.is_set()

    def wait(self, timeout: float | None = None) -> RunHandle:
        if not self._done.wait(timeout):
            raise TimeoutError("run did not finish in time")
        if self._error is not None:
            raise self._error
        return self

    def state(self, task_id: int) -> TaskState:
        return self.graph.task(task_id).state

    def failures(self) -> dict[int, str]:
        return {t.id: t.error for t in self.graph.tasks.values() if t.state == TaskState.FAILED}

    def fetch(self, mem_id: int):
        return fetch_result(self, mem_id)

    def timing_report(self) -> TimingReport:
        return timing_report(self)


def fetch_result(handle: RunHandle, mem_id: int):
    """Payload of a written memory object; the call time counts as retrieval."""
    start = time.perf_counter()
    try:
        mem = handle.graph.mems[mem_id]
    except KeyError:
        raise GraphError(f"unknown memory object {mem_id}") from None
    if not mem.written:
        raise NotReadyError(f"memory object {mem_id} is not written yet")
    value = mem.read()
    end = time.perf_counter()
    handle.retrieve_seconds += end - start
    handle._last_fetch_end = end
    return value


def timing_report(handle: RunHandle) -> TimingReport:
    if not handle.done or handle.exec_end is None:
        raise NotReadyError("run is still in progress")
    g0 = handle.graph.created_at
    create = handle.exec_start - g0
    exec_post = handle.exec_end - handle.exec_start
    end = max(handle.exec_end, handle._last_fetch_end or handle.exec_end)
    for t in handle.graph.tasks.values():
        handle.timings[t.id].state = t.state.value
    return TimingReport(end - g0, create, exec_post, handle.retrieve_seconds,
                        [handle.timings[t] for t in sorted(handle.timings)])


def _quantum_exchange(channel, task) -> tuple[Histogram, int, int]:
    """Drive one task through the five-verb sequence; raise on any error reply."""
    kind = task.kind
    payloads = {
        Verb.LOAD: {"qir": kind.qir},
        Verb.COMPILE: {},
        Verb.ESTIMATE_MEM: {"shots": kind.shots},
        Verb.RUN: {"shots": kind.shots, "seed": kind.seed},
        Verb.FETCH: {},
    }
    size_hint = amplitudes = None
    hist = None
    for verb in SEQUENCE:
        reply = channel.request(WorkerMessage(verb, task.id, payloads[verb]))
        if not reply.ok:
            raise TaskFailedError(f"{verb.name} failed: {reply.payload.get('error')}")
        if verb == Verb.ESTIMATE_MEM:
            size_hint = int(reply.payload["entries"])
        elif verb == Verb.RUN:
            amplitudes = reply.payload.get("amplitudes")
        elif verb == Verb.FETCH:
            hist = Histogram.from_dict(reply.payload["histogram"])
    return hist, size_hint, amplitudes


class _Executor:
    def __init__(self, handle: RunHandle, transport: str, host_workers: int):
        self.h = handle
        self.g = handle.graph
        self.transport = TRANSPORTS[transport]
        self.host_workers = host_workers
        self.events: queue.Queue = queue.Queue()
        self.worker_queues: dict[str, queue.Queue] = {}
        self.load: dict[str, int] = {w: 0 for w, _ in handle.workers}
        self.held: list[int] = []  # ready quantum tasks awaiting a lazy dispatch
        self.succ = {t: [] for t in self.g.tasks}
        self.missing = {t: 0 for t in self.g.tasks}
        for a, b in self.g.edges:
            self.succ[a].append(b)
            self.missing[b] += 1

    def now(self) -> float:
        return time.perf_counter() - self.h.exec_start

    def compatible(self, task) -> list[str]:
        want = task.kind.backend
        return [w for w, sel in self.h.workers if want is None or sel == want]

    def run(self):
        channels, drivers = {}, []
        pool = ThreadPoolExecutor(max_workers=self.host_workers, thread_name_prefix="host")
        try:
            for wid, selector in self.h.workers:
                channels[wid] = self.transport(selector, wid)
                q = queue.Queue()
                self.worker_queues[wid] = q
                th = threading.Thread(target=self._drive, args=(wid, channels[wid], q),
                                      name=f"driver-{wid}", daemon=True)
                th.start()
                drivers.append(th)
            self.h.exec_start = time.perf_counter()
            self._loop(pool)
            self.h.exec_end = time.perf_counter()
        finally:
            for q in self.worker_queues.values():
                q.put(None)
            for th in drivers:
                th.join(timeout=30)
            for ch in channels.values():
                ch.close()
            pool.shutdown(wait=True)

    def _loop(self, pool):
        remaining = len(self.g.tasks)
        for tid in self.g.initial_ready():
            self._make_ready(tid, pool)
        while remaining:
            tid, ok, result, wid = self.events.get()
            task = self.g.tasks[tid]
            timing = self.h.timings[tid]
            timing.finished_at = self.now()
            if wid is not None:
                self.load[wid] -= 1
            if ok:
                try:
                    self._store(task, result)
                except Exception as exc:
                    ok, result = False, f"output error: {exc}"
            if ok:
                task.transition(TaskState.DONE)
                remaining -= 1
                for nxt in sorted(self.succ[tid]):
                    self.missing[nxt] -= 1
                    if self.missing[nxt] == 0 and self.g.tasks[nxt].state == TaskState.PENDING:
                        self._make_ready(nxt, pool)
            else:
                task.error = str(result)
                task.transition(TaskState.FAILED)
                remaining -= 1
                remaining -= self._fail_descendants(tid)
            self._dispatch_held()

    def _store(self, task, result):
        if task.is_quantum:
            hist, size_hint, amplitudes = result
            self.h.timings[task.id].amplitudes = amplitudes
            mem = self.g.mems[task.outputs[0]]
            mem.size_hint = size_hint
            mem.write(hist)
            return
        outs = task.outputs
        values = [result] if len(outs) == 1 else list(result or [])
        if len(values) != len(outs):
            raise ValueError(f"host function returned {len(values)} outputs, expected {len(outs)}")
        for mid, value in zip(outs, values):
            self.g.mems[mid].write(value)

    def _fail_descendants(self, tid) -> int:
        count, stack = 0, list(self.succ[tid])
        while stack:
            nxt = stack.pop()
            task = self.g.tasks[nxt]
            if task.state in (TaskState.PENDING, TaskState.READY):
                task.error = f"upstream task {self.g.tasks[tid].name} failed"
                task.transition(TaskState.FAILED)
                self.h.timings[nxt].state = TaskState.FAILED.value
                count += 1
                stack.extend(self.succ[nxt])
        return count

    def _make_ready(self, tid, pool):
        task = self.g.tasks[tid]
        task.transition(TaskState.READY)
        self.h.timings[tid].queued_at = self.now()
        if not task.is_quantum:
            pool.submit(self._run_host, tid)
            return
        workers = self.compatible(task)
        if not workers:
            task.error = f"no worker runs backend {task.kind.backend!r}"
            self.events.put((tid, False, task.error, None))
            # The failure event decrements load for wid=None, nothing else to undo.
            return
        if self.h.policy.lazy:
            self.held.append(tid)
            self._dispatch_held()
        else:
            self._assign(tid, self.h.policy.choose(task, workers, self.load))

    def _dispatch_held(self):
        still = []
        for tid in self.held:
            task = self.g.tasks[tid]
            idle = [w for w in self.compatible(task) if self.load[w] == 0]
            if idle:
                self._assign(tid, self.h.policy.choose(task, idle, self.load))
            else:
                still.append(tid)
        self.held = still

    def _assign(self, tid, wid):
        self.load[wid] += 1
        self.h.assignments[wid].append(tid)
        self.h.timings[tid].worker = wid
        self.worker_queues[wid].put(tid)

    def _drive(self, wid, channel, q):
        while True:
            tid = q.get()
            if tid is None:
                return
            task = self.g.tasks[tid]
            task.transition(TaskState.RUNNING)
            self.h.timings[tid].started_at = self.now()
            try:
                result = _quantum_exchange(channel, task)
                self.events.put((tid, True, result, wid))
            except (TaskFailedError, ProtocolError) as exc:
                self.events.put((tid, False, str(exc), wid))
            except Exception as exc:
                log.exception("driver %s crashed on task %s", wid, task.name)
                self.events.put((tid, False, f"{type(exc).__name__}: {exc}", wid))

    def _run_host(self, tid):
        task = self.g.tasks[tid]
        task.transition(TaskState.RUNNING)
        self.h.timings[tid].worker = "host"
        self.h.timings[tid].started_at = self.now()
        try:
            inputs = [self.g.mems[m].read() for m in task.inputs]
            fn = HOST_FUNCTIONS[task.kind.function]
            self.events.put((tid, True, fn(inputs, **task.kind.params), None))
        except Exception as exc:
            self.events.put((tid, False, f"{type(exc).__name__}: {exc}", None))


def submit(graph: TaskGraph, workers: Sequence | int, policy=None, wait: bool = True,
           transport: str = "memory", host_workers: int = 1) -> RunHandle:
    """Execute ``graph`` on the given QPU workers.

    ``workers`` is a count of default statevector workers or a list of
    selectors / ``(worker id, selector)`` pairs. Task failures are recorded on
    the handle; they do not raise.
    """
    if graph.submitted:
        raise GraphError("graph was already submitted")
    workers = _normalize_workers(workers)
    for _, selector in workers:
        parse_selector(selector)
    if transport not in TRANSPORTS:
        raise ValueError(f"unknown transport {transport!r}")
    policy = policy or RoundRobin()
    if isinstance(policy, str):
        policy = make_policy(policy)
    graph.submitted = True
    handle = RunHandle(graph, workers, policy)
    executor = _Executor(handle, transport, host_workers)

    def target():
        try:
            executor.run()
        except BaseException as exc:
            handle._error = exc
            if handle.exec_end is None:
                handle.exec_end = time.perf_counter()
            if handle.exec_start is None:
                handle.exec_start = handle.exec_end
        finally:
            handle._done.set()

    handle._thread = threading.Thread(target=target, name="coordinator", daemon=True)
    handle._thread.start()
    if wait:
        handle.wait()
    return handle

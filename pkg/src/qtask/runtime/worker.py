"""Isolated QPU worker: one non-reentrant backend behind a serial message loop.

The coordinator talks to a worker only through a channel. Two transports
are provided:

* :class:`InMemoryChannel` pairs, with the loop on a thread (default);
* :class:`ProcessChannel`, which starts ``python -m qtask.runtime <selector>``
  and exchanges length-prefixed frames over its stdin/stdout.

Either way the worker handles one message at a time, so two RUNs never
overlap on one backend.
"""

from __future__ import annotations

import logging
import queue
import subprocess
import sys
import threading
import time
from dataclasses import dataclass

from ..backends import estimate_output_size, make_backend
from ..circuit import Circuit, Histogram
from ..errors import ProtocolError
from ..qir import QirParseError, parse_qir
from .protocol import SEQUENCE, Verb, WorkerMessage, read_frame, write_frame

log = logging.getLogger(__name__)


@dataclass
class _Session:
    expect: Verb = Verb.COMPILE
    qir: str = ""
    circuit: Circuit | None = None
    result: Histogram | None = None


class WorkerServer:
    """Per-session verb state machine over one backend."""

    def __init__(self, backend):
        self.backend = backend
        self.sessions: dict[int, _Session] = {}
        self.runs: list[tuple[int, float, float]] = []  # (session, start, end)

    def handle(self, msg: WorkerMessage) -> WorkerMessage:
        if msg.verb == Verb.LOAD:
            qir = msg.payload.get("qir")
            if not isinstance(qir, str):
                return msg.error("LOAD needs a 'qir' text payload")
            self.sessions[msg.session] = _Session(qir=qir)
            return msg.reply({"bytes": len(qir.encode("utf-8"))})

        session = self.sessions.get(msg.session)
        if session is None or session.expect != msg.verb:
            expected = "LOAD" if session is None else session.expect.name
            return msg.error(f"protocol error: got {msg.verb.name}, expected {expected}")

        try:
            reply = getattr(self, f"_on_{msg.verb.name.lower()}")(msg, session)
        except QirParseError as exc:
            self.sessions.pop(msg.session, None)
            return msg.error(str(exc), diagnostics=[
                {"line": d.line, "severity": d.severity, "message": d.message}
                for d in exc.diagnostics])
        except Exception as exc:  # backend failures become error replies
            log.debug("worker error on %s", msg.verb.name, exc_info=True)
            self.sessions.pop(msg.session, None)
            return msg.error(f"{type(exc).__name__}: {exc}")
        position = SEQUENCE.index(msg.verb)
        if position + 1 < len(SEQUENCE):
            session.expect = SEQUENCE[position + 1]
        else:
            self.sessions.pop(msg.session, None)
        return reply

    def _on_compile(self, msg, session):
        session.circuit = parse_qir(session.qir)
        c = session.circuit
        return msg.reply({"num_qubits": c.num_qubits, "num_measurements": c.num_measurements,
                          "num_gates": len(c.gates)})

    def _on_estimate_mem(self, msg, session):
        shots = int(msg.payload.get("shots", 1))
        return msg.reply({"entries": estimate_output_size(session.circuit, shots)})

    def _on_run(self, msg, session):
        shots = int(msg.payload["shots"])
        seed = msg.payload.get("seed")
        start = time.perf_counter()
        session.result = self.backend.run(session.circuit, shots, seed)
        self.runs.append((msg.session, start, time.perf_counter()))
        return msg.reply({"shots": shots,
                          "amplitudes": int(getattr(self.backend, "last_amplitudes", 0))})

    def _on_fetch(self, msg, session):
        return msg.reply({"histogram": session.result.to_dict()})


def worker_loop(channel, backend) -> WorkerServer:
    """Serve messages until the channel closes or SHUTDOWN arrives."""
    server = WorkerServer(backend)
    while True:
        try:
            msg = channel.recv()
        except ProtocolError as exc:
            log.warning("dropping worker channel: %s", exc)
            break
        if msg is None or msg.verb == Verb.SHUTDOWN:
            break
        channel.send(server.handle(msg))
    return server


class _QueueEnd:
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        self._in, self._out = inbox, outbox

    def send(self, msg: WorkerMessage) -> None:
        self._out.put(msg)

    def recv(self, timeout: float | None = None) -> WorkerMessage | None:
        return self._in.get(timeout=timeout)

    def close(self) -> None:
        self._out.put(None)


class InMemoryChannel:
    """Coordinator end of a worker running ``worker_loop`` on a thread."""

    def __init__(self, selector: str, name: str = "qpu"):
        to_worker, to_coord = queue.Queue(), queue.Queue()
        self._coord = _QueueEnd(to_coord, to_worker)
        worker_end = _QueueEnd(to_worker, to_coord)
        backend = make_backend(selector)
        self.server: WorkerServer | None = None

        def target():
            self.server = worker_loop(worker_end, backend)

        self._thread = threading.Thread(target=target, name=f"worker-{name}", daemon=True)
        self._thread.start()

    def request(self, msg: WorkerMessage) -> WorkerMessage:
        self._coord.send(msg)
        reply = self._coord.recv()
        if reply is None:
            raise ProtocolError("worker closed its channel")
        return reply

    def close(self) -> None:
        self._coord.close()
        self._thread.join(timeout=5)


class ProcessChannel:
    """Coordinator end of a worker in a child process, framed over pipes."""

    def __init__(self, selector: str, name: str = "qpu"):
        self.name = name
        self._proc = subprocess.Popen(
            [sys.executable, "-m", "qtask.runtime", selector],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE)

    def request(self, msg: WorkerMessage) -> WorkerMessage:
        try:
            write_frame(self._proc.stdin, msg)
            reply = read_frame(self._proc.stdout)
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"worker process {self.name} unreachable: {exc}") from None
        if reply is None:
            raise ProtocolError(f"worker process {self.name} exited (code {self._proc.poll()})")
        return reply

    def close(self) -> None:
        try:
            write_frame(self._proc.stdin, WorkerMessage(Verb.SHUTDOWN))
            self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()
        self._proc.stdout.close()


class _StreamEnd:
    def __init__(self, inbox, outbox):
        self._in, self._out = inbox, outbox

    def recv(self):
        return read_frame(self._in)

    def send(self, msg):
        write_frame(self._out, msg)


TRANSPORTS = {"memory": InMemoryChannel, "pipe": ProcessChannel}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m qtask.runtime <backend selector>", file=sys.stderr)
        return 2
    backend = make_backend(argv[0])
    worker_loop(_StreamEnd(sys.stdin.buffer, sys.stdout.buffer), backend)
    return 0

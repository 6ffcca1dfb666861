"""Task-graph runtime for quantum and classical tasks."""

from .executor import (Affinity, LeastLoaded, RoundRobin, RunHandle, TimingReport,
                       default_worker_count, fetch_result, make_policy, submit, timing_report)
from .graph import HOST_FUNCTIONS, MemObject, Task, TaskGraph, TaskState, host_function
from .manifest import graph_from_manifest, graph_to_manifest, result_dump
from .protocol import Verb, WorkerMessage
from .worker import InMemoryChannel, ProcessChannel, WorkerServer, worker_loop

__all__ = [
    "Affinity", "LeastLoaded", "RoundRobin", "RunHandle", "TimingReport", "default_worker_count",
    "fetch_result", "make_policy", "submit", "timing_report", "HOST_FUNCTIONS", "MemObject",
    "Task", "TaskGraph", "TaskState", "host_function", "graph_from_manifest", "graph_to_manifest",
    "result_dump", "Verb", "WorkerMessage", "InMemoryChannel", "ProcessChannel", "WorkerServer",
    "worker_loop",
]

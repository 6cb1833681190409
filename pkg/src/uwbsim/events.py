"""Event queue and abstract mesh message bus for the single-threaded scheduler."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Callable


class EventQueue:
    """Time-ordered callbacks; equal times pop in insertion order."""

    def __init__(self, start: float = 0.0):
        self._heap: list = []
        self._seq = itertools.count()
        self.now = start
        self.executed = 0

    def __len__(self):
        return len(self._heap)

    def push(self, time: float, callback: Callable, *args: Any) -> None:
        if time < self.now:
            raise ValueError(f"cannot schedule at {time} before current time {self.now}")
        heapq.heappush(self._heap, (time, next(self._seq), callback, args))

    def peek_time(self) -> float | None:
        return self._heap[0][0] if self._heap else None

    def pop(self):
        time, _, callback, args = heapq.heappop(self._heap)
        self.now = time
        return time, callback, args

    def run(self, until: float | None = None) -> None:
        while self._heap:
            if until is not None and self._heap[0][0] > until:
                break
            _, callback, args = self.pop()
            self.executed += 1
            callback(*args)
        if until is not None and until > self.now:
            self.now = until


@dataclass
class MeshBus:
    """Delivers payloads between node ids after a latency.

    ``latency`` is either a constant (seconds) or ``(low, high)`` for a uniform
    draw.  Delivery order is preserved per (sender, receiver) pair.
    """

    queue: EventQueue
    latency: float | tuple[float, float] = 0.05
    rng: Any = None
    subscribers: dict = field(default_factory=dict)
    _last_delivery: dict = field(default_factory=dict)
    delivered: int = 0

    def subscribe(self, node_id: int, handler: Callable) -> None:
        self.subscribers[node_id] = handler

    def _draw_latency(self) -> float:
        if isinstance(self.latency, (tuple, list)):
            low, high = self.latency
            return float(self.rng.uniform(low, high))
        return float(self.latency)

    def send(self, source: int, dest: int, payload: Any) -> float:
        if dest not in self.subscribers:
            raise KeyError(f"no mesh subscriber with id {dest}")
        at = self.queue.now + self._draw_latency()
        at = max(at, self._last_delivery.get((source, dest), at))
        self._last_delivery[(source, dest)] = at
        self.queue.push(at, self._deliver, source, dest, payload)
        return at

    def _deliver(self, source, dest, payload):
        self.delivered += 1
        self.subscribers[dest](source, payload)

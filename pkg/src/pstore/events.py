"""Minimal discrete-event kernel: futures, generator processes, a time-ordered queue.

Processes are generators that ``yield`` a :class:`Future` and are resumed with
its value (or have its error thrown in). Events fire in time order with ties
broken by insertion sequence, so a run is a pure function of its inputs.
"""

from __future__ import annotations

import heapq
import itertools
from typing import Any, Callable, Generator, Iterable, Optional


class Deadlock(RuntimeError):
    pass


class Future:
    __slots__ = ("loop", "done", "value", "error", "_callbacks")

    def __init__(self, loop: "EventLoop"):
        self.loop = loop
        self.done = False
        self.value: Any = None
        self.error: Optional[BaseException] = None
        self._callbacks: list[Callable[["Future"], None]] = []

    def set_result(self, value: Any = None) -> bool:
        if self.done:
            return False
        self.done, self.value = True, value
        self._fire()
        return True

    def set_error(self, error: BaseException) -> bool:
        if self.done:
            return False
        self.done, self.error = True, error
        self._fire()
        return True

    def result(self) -> Any:
        if not self.done:
            raise RuntimeError("future not resolved")
        if self.error is not None:
            raise self.error
        return self.value

    def add_callback(self, fn: Callable[["Future"], None]) -> None:
        if self.done:
            self.loop.call_soon(fn, self)
        else:
            self._callbacks.append(fn)

    def _fire(self) -> None:
        callbacks, self._callbacks = self._callbacks, []
        for fn in callbacks:
            self.loop.call_soon(fn, self)


class Process(Future):
    """Drives a generator; resolves with its return value."""

    __slots__ = ("gen",)

    def __init__(self, loop: "EventLoop", gen: Generator):
        super().__init__(loop)
        self.gen = gen
        loop.call_soon(self._resume, None)

    def _resume(self, fut: Optional[Future]) -> None:
        try:
            if fut is None:
                yielded = self.gen.send(None)
            elif fut.error is not None:
                yielded = self.gen.throw(fut.error)
            else:
                yielded = self.gen.send(fut.value)
        except StopIteration as stop:
            self.set_result(stop.value)
            return
        except Exception as exc:  # noqa: BLE001 - surfaced through the future
            self.set_error(exc)
            return
        if not isinstance(yielded, Future):
            self.gen.close()
            self.set_error(TypeError(f"process yielded {yielded!r}, expected a Future"))
            return
        yielded.add_callback(self._resume)


class EventLoop:
    """Time-ordered event queue."""

    def __init__(self) -> None:
        self.now = 0.0
        self._queue: list = []
        self._seq = itertools.count()
        self._driving = False

    # scheduling
    def schedule(self, at: float, fn: Callable, *args: Any) -> None:
        if at < self.now:
            raise ValueError("cannot schedule into the past")
        heapq.heappush(self._queue, (at, next(self._seq), fn, args))

    def call_soon(self, fn: Callable, *args: Any) -> None:
        self.schedule(self.now, fn, *args)

    def future(self) -> Future:
        return Future(self)

    def start(self, gen: Generator) -> Process:
        return Process(self, gen)

    def timeout(self, delay: float, value: Any = None) -> Future:
        fut = Future(self)
        self.schedule(self.now + delay, fut.set_result, value)
        return fut

    def any_of(self, futures: Iterable[Future]) -> Future:
        """Resolves with the first of ``futures`` to complete (errors included)."""
        out = Future(self)
        futures = list(futures)
        if not futures:
            raise ValueError("any_of needs at least one future")
        for f in futures:
            f.add_callback(lambda f, out=out: out.set_result(f))
        return out

    def all_of(self, futures: Iterable[Future]) -> Future:
        """Resolves with the list of futures once every one has completed."""
        futures = list(futures)
        out = Future(self)
        if not futures:
            out.set_result([])
            return out
        remaining = [len(futures)]

        def _one(_f: Future) -> None:
            remaining[0] -= 1
            if remaining[0] == 0:
                out.set_result(futures)

        for f in futures:
            f.add_callback(_one)
        return out

    # driving
    @property
    def pending(self) -> int:
        return len(self._queue)

    def peek_time(self) -> Optional[float]:
        return self._queue[0][0] if self._queue else None

    def step(self) -> bool:
        if not self._queue:
            return False
        at, _seq, fn, args = heapq.heappop(self._queue)
        self.now = at
        fn(*args)
        return True

    def run_until(self, t: float) -> int:
        """Process every event with time <= t, then set the clock to t."""
        n = 0
        while self._queue and self._queue[0][0] <= t:
            self.step()
            n += 1
        self.now = max(self.now, t)
        return n

    def run_future(self, fut: Future, limit: Optional[float] = None) -> Any:
        """Drive the queue until ``fut`` resolves; return its result."""
        if self._driving:
            raise RuntimeError("run_future called re-entrantly from inside the simulation")
        self._driving = True
        try:
            while not fut.done:
                if limit is not None and self._queue and self._queue[0][0] > limit:
                    break
                if not self.step():
                    break
        finally:
            self._driving = False
        if not fut.done:
            raise Deadlock("event queue exhausted before the awaited future resolved")
        return fut.result()

    def run(self, gen: Generator) -> Any:
        return self.run_future(self.start(gen))


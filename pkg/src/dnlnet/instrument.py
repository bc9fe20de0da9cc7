"""Multiply-add instrumentation.

Kernels report their cost through `record_madds` while a trace is active.
Each kernel charges according to the package-wide MAdds convention (see
complexity module docs); with no active trace the call is a no-op.

A trace is confined to the context that opened it (ContextVar-backed), so
concurrent inferences on different threads never share counters.
"""

from __future__ import annotations

from contextlib import contextmanager
from contextvars import ContextVar
from typing import Iterator


class MaddsTrace:
    """Accumulates multiply-add counts per named layer scope."""

    def __init__(self) -> None:
        self.counts: dict[str, int] = {}
        self._stack: list[str] = []

    @contextmanager
    def scope(self, name: str) -> Iterator[None]:
        self._stack.append(name)
        try:
            yield
        finally:
            self._stack.pop()

    def add(self, n: int) -> None:
        key = self._stack[-1] if self._stack else ""
        self.counts[key] = self.counts.get(key, 0) + int(n)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def get(self, name: str) -> int:
        return self.counts.get(name, 0)


_ACTIVE: ContextVar[MaddsTrace | None] = ContextVar("dnlnet_madds_trace", default=None)


@contextmanager
def trace_madds() -> Iterator[MaddsTrace]:
    """Activate a fresh trace for the enclosed forward pass."""
    trace = MaddsTrace()
    token = _ACTIVE.set(trace)
    try:
        yield trace
    finally:
        _ACTIVE.reset(token)


def record_madds(n: int) -> None:
    trace = _ACTIVE.get()
    if trace is not None:
        trace.add(n)


@contextmanager
def layer_scope(name: str) -> Iterator[None]:
    """Attribute enclosed kernel costs to `name`; no-op without a trace."""
    trace = _ACTIVE.get()
    if trace is None:
        yield
    else:
        with trace.scope(name):
            yield


def active_trace() -> MaddsTrace | None:
    return _ACTIVE.get()

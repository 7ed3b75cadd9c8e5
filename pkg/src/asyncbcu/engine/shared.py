"""Shared-memory primitives for the threaded runner."""

from __future__ import annotations

import threading
import time
from contextlib import contextmanager

import numpy as np


class AtomicCounter:
    """Integer counter with atomic fetch-and-add."""

    def __init__(self, value: int = 0):
        self._value = value
        self._lock = threading.Lock()

    @property
    def value(self) -> int:
        return self._value

    def fetch_add(self, d: int = 1) -> int:
        """Add ``d`` and return the value held before the addition."""
        with self._lock:
            old = self._value
            self._value = old + d
            return old


class SeqLock:
    """Sequence lock: one writer at a time, optimistic retrying readers.

    The sequence number is odd while a write is in progress. A reader copies
    the protected data and retries if the number was odd or changed during
    the copy, so a successful read never mixes two writes.
    """

    def __init__(self):
        self._seq = 0
        self._wlock = threading.Lock()
        self.retries = 0

    @contextmanager
    def write(self):
        with self._wlock:
            self._seq += 1
            try:
                yield
            finally:
                self._seq += 1

    def read(self, fn):
        while True:
            s0 = self._seq
            if s0 & 1:
                time.sleep(0)
                self.retries += 1
                continue
            out = fn()
            if self._seq == s0:
                return out
            self.retries += 1


class SharedIterate:
    """The shared vector, the global iteration counter and an optional gradient cache.

    The counter is advanced by exactly one per completed block write. Under
    ``consistent_snapshot`` the write, cache update and counter increment
    happen inside one seqlock write section, so a snapshot is always some
    realised iterate ``x^k`` together with its ``k``.
    """

    def __init__(self, x0: np.ndarray, cache=None):
        self.x = np.array(x0, dtype=float, copy=True)
        self.cache = cache
        self.counter = AtomicCounter(0)
        self.seqlock = SeqLock()
        self.cache_lock = threading.Lock()

    def snapshot(self, with_cache: bool = False):
        """Consistent ``(k, x copy, cache copy or None)``."""

        def grab():
            c = self.cache.copy() if with_cache else None
            return self.counter.value, self.x.copy(), c

        return self.seqlock.read(grab)

    def relaxed_read(self, with_cache: bool = False):
        k = self.counter.value
        c = self.cache.copy() if with_cache else None
        return k, self.x.copy(), c

from __future__ import annotations

import threading
import time


class VirtualClock:
    """Simulation time in epoch nanoseconds.

    Time only moves through :meth:`advance_to`. With ``paced`` set, an advance
    of ``dt`` virtual seconds blocks for ``dt / warp`` wall seconds; unpaced,
    it returns at once. Either way the virtual timeline is identical.
    """

    def __init__(self, epoch_ns: int, warp: float = 60.0, paced: bool = True):
        if warp < 1:
            raise ValueError("warp factor must be >= 1")
        self._now = int(epoch_ns)
        self.warp = float(warp)
        self.paced = paced
        self._lock = threading.Lock()

    def now_ns(self) -> int:
        with self._lock:
            return self._now

    def advance_to(self, target_ns: int) -> int:
        target_ns = int(target_ns)
        with self._lock:
            delta = target_ns - self._now
        if delta > 0 and self.paced:
            time.sleep(delta * 1e-9 / self.warp)
        with self._lock:
            # concurrent advances never move time backwards
            self._now = max(self._now, target_ns)
            return self._now

    def advance(self, seconds: float) -> int:
        return self.advance_to(self.now_ns() + int(round(seconds * 1e9)))

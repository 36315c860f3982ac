"""Real-valued operation tallies for the linear-algebra kernels.

Kernels in :mod:`mmse_lab.linalg` report every arithmetic step they execute
to the tally that is active in the current context.  Outside a
:func:`count_ops` block the reports go to a no-op sink.

Counting convention (fixed, no strength reduction):

* complex x complex multiply: 4 real multiplications, 2 real additions
* real x complex multiply:    2 real multiplications
* ``|z|**2``:                 2 real multiplications, 1 real addition
* complex addition:           2 real additions
* reciprocal or square root:  1 entry in ``real_divs``

Sign flips and complex conjugation are free.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass


@dataclass
class OpCountLedger:
    real_mults: int = 0
    real_adds: int = 0
    real_divs: int = 0

    def __add__(self, other: "OpCountLedger") -> "OpCountLedger":
        return OpCountLedger(
            self.real_mults + other.real_mults,
            self.real_adds + other.real_adds,
            self.real_divs + other.real_divs,
        )

    def as_dict(self) -> dict:
        return {
            "real_mults": self.real_mults,
            "real_adds": self.real_adds,
            "real_divs": self.real_divs,
        }


class Tally(OpCountLedger):
    """Mutable ledger with one recording method per primitive."""

    def cmul(self, n: int = 1) -> None:
        self.real_mults += 4 * n
        self.real_adds += 2 * n

    def rcmul(self, n: int = 1) -> None:
        self.real_mults += 2 * n

    def rmul(self, n: int = 1) -> None:
        self.real_mults += n

    def abs2(self, n: int = 1) -> None:
        self.real_mults += 2 * n
        self.real_adds += n

    def cadd(self, n: int = 1) -> None:
        self.real_adds += 2 * n

    def radd(self, n: int = 1) -> None:
        self.real_adds += n

    def div(self, n: int = 1) -> None:
        self.real_divs += n

    def snapshot(self) -> OpCountLedger:
        return OpCountLedger(self.real_mults, self.real_adds, self.real_divs)


class _NullTally(Tally):
    def cmul(self, n=1):
        pass

    def rcmul(self, n=1):
        pass

    def rmul(self, n=1):
        pass

    def abs2(self, n=1):
        pass

    def cadd(self, n=1):
        pass

    def radd(self, n=1):
        pass

    def div(self, n=1):
        pass


_NULL = _NullTally()
_active: contextvars.ContextVar[Tally] = contextvars.ContextVar("mmse_lab_tally", default=_NULL)


def active() -> Tally:
    """Return the tally that kernels should report to."""
    return _active.get()


@contextlib.contextmanager
def count_ops():
    """Collect operation counts from kernels executed inside the block.

    Usage::

        with count_ops() as tally:
            invert_via_cholesky(a)
        print(tally.real_mults)
    """
    tally = Tally()
    token = _active.set(tally)
    try:
        yield tally
    finally:
        _active.reset(token)

"""Stop-gradient that can be frozen for finite-difference checks.

Straight-through estimators and argmax selections are not differentiable
functions of the parameters, so a finite-difference probe of the raw loss
disagrees with the analytic gradient by design. Under a ``StopGradTape`` every
``sg`` call records its value on the first evaluation and replays that value
afterwards, turning the loss into the smooth surrogate whose exact gradient is
what backprop computes.
"""

from __future__ import annotations

import contextlib

import torch

_active: "StopGradTape | None" = None


class StopGradTape:
    def __init__(self):
        self.values: list[torch.Tensor] = []
        self._pos = 0
        self._replay = False

    @contextlib.contextmanager
    def record(self):
        self.values.clear()
        self._replay = False
        with _activate(self):
            yield self

    @contextlib.contextmanager
    def replay(self):
        self._replay = True
        self._pos = 0
        with _activate(self):
            yield self
        if self._pos != len(self.values):
            raise RuntimeError(f"replay consumed {self._pos} of {len(self.values)} recorded values")

    def _next(self, x: torch.Tensor) -> torch.Tensor:
        if not self._replay:
            v = x.detach().clone()
            self.values.append(v)
            return v
        v = self.values[self._pos]
        self._pos += 1
        if v.shape != x.shape:
            raise RuntimeError("replayed stop-gradient value has a different shape")
        return v


@contextlib.contextmanager
def _activate(tape: StopGradTape):
    global _active
    prev, _active = _active, tape
    try:
        yield
    finally:
        _active = prev


def sg(x: torch.Tensor) -> torch.Tensor:
    if _active is None:
        return x.detach()
    return _active._next(x)

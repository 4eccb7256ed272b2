"""Per-iteration records shared by all iterative solvers."""

from __future__ import annotations

import time
from dataclasses import dataclass, field


@dataclass
class IterationTrace:
    """Per-iteration error/residual history for one solver run."""

    method: str
    errors: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    fine_solves: int = 0
    meta: dict = field(default_factory=dict)
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def record(self, error=None, residual=None, fine_solves=0):
        if error is not None:
            self.errors.append(float(error))
        if residual is not None:
            self.residuals.append(float(residual))
        self.wall_times.append(time.perf_counter() - self._t0)
        self.fine_solves += fine_solves

    @property
    def iterations(self) -> int:
        return max(len(self.errors), len(self.residuals))

    def converged_at(self, tol: float) -> int:
        """First iteration index whose error is below tol, or -1."""
        for k, e in enumerate(self.errors):
            if e < tol:
                return k
        return -1

    def contraction_factors(self, use="errors"):
        seq = self.errors if use == "errors" else self.residuals
        return [b / a for a, b in zip(seq[:-1], seq[1:]) if a > 0]

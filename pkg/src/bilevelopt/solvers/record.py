from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..oracle import JointState


@dataclass
class RunRecord:
    """Logged metric rows of one run.

    Each row has ``t``, the evaluator's metrics (``h``, ``grad_norm2``,
    ``delta_z``, ``delta_v`` and, when defined, ``subopt`` / ``test_error``), the
    running mean and running infimum of ``grad_norm2`` over logged ``t >= 1``
    (when the evaluator reports it),
    cumulative ``grad_calls`` / ``hvp_calls`` / ``oracle_calls`` and solver-only
    ``wall_time`` in seconds.
    """

    method: str
    seed: int
    rows: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""
    final_state: JointState | None = None
    extras: dict = field(default_factory=dict)

    _gsum: float = 0.0
    _gcount: int = 0
    _ginf: float = float("inf")

    def log(self, t: int, metrics: dict, grad_calls: int, hvp_calls: int, wall: float) -> dict:
        row = {"t": int(t), **metrics}
        if "grad_norm2" in metrics:
            g = metrics["grad_norm2"]
            if t >= 1:
                self._gsum += g
                self._gcount += 1
                self._ginf = min(self._ginf, g)
                row["grad_norm2_avg"], row["grad_norm2_inf"] = self._gsum / self._gcount, self._ginf
            else:
                row["grad_norm2_avg"] = row["grad_norm2_inf"] = g
        row.update(grad_calls=int(grad_calls), hvp_calls=int(hvp_calls),
                   oracle_calls=int(grad_calls + hvp_calls), wall_time=float(wall))
        self.rows.append(row)
        return row

    @property
    def metric_names(self) -> list[str]:
        skip = {"t", "grad_calls", "hvp_calls", "oracle_calls", "wall_time"}
        return [k for k in self.rows[0] if k not in skip] if self.rows else []

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows])

    @property
    def final(self) -> dict:
        return self.rows[-1]

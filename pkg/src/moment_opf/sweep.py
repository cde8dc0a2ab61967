"""Feasible-space sweep over the two generator outputs.

Every grid point pins the active output of the first two generators and asks
each relaxation order whether the pinned problem is feasible and, if so, what
its relaxed cost is. Cells are independent, so they are farmed out to a process
pool and gathered back in row-major order (first output outer, second inner).
"""

from __future__ import annotations

import csv
import io
import math
import os
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .lasserre import build_relaxation, interpret
from .netmodel import Network
from .poly import quadratic_cost
from .sdpcore import FAILURE, OPTIMAL, Presolved, SolverSettings, presolve

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
ERROR = "error"

CSV_HEADER = ["pg1_mw", "pg2_mw", "order1_status", "order1_cost", "order2_status", "order2_cost", "true_cost"]
JOBS_ENV = "MOMENT_OPF_JOBS"


@dataclass(frozen=True)
class SweepSpec:
    p1: tuple[float, float]
    p2: tuple[float, float]
    step: float = 0.5
    orders: tuple[int, ...] = (1, 2)
    jobs: int | None = None

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        for name, (lo, hi) in (("p1", self.p1), ("p2", self.p2)):
            if not lo <= hi:
                raise ValueError(f"{name} range is empty")
        if not self.orders or any(k not in (1, 2) for k in self.orders):
            raise ValueError("orders must be a non-empty subset of {1, 2}")
        object.__setattr__(self, "orders", tuple(sorted(set(self.orders))))

    def axis(self, lo: float, hi: float) -> np.ndarray:
        # Integer counts avoid drift from repeated float addition.
        n = int(math.floor((hi - lo) / self.step + 1e-9)) + 1
        return np.round(lo + self.step * np.arange(n), 9)

    def grid(self) -> list[tuple[float, float]]:
        return [(float(a), float(b)) for a in self.axis(*self.p1) for b in self.axis(*self.p2)]


@dataclass
class SweepCell:
    p1: float
    p2: float
    status: dict[int, str] = field(default_factory=dict)
    cost: dict[int, float | None] = field(default_factory=dict)
    true_cost: float = math.nan
    margin: dict[int, float] = field(default_factory=dict)

    def feasible(self, order: int) -> bool:
        return self.status.get(order) == FEASIBLE


def resolve_jobs(jobs: int | None) -> int:
    """Explicit ``jobs``, else the environment fallback, else one worker."""
    if jobs is None:
        env = os.environ.get(JOBS_ENV, "").strip()
        jobs = int(env) if env else 1
    if jobs < 1:
        raise ValueError("jobs must be at least 1")
    return jobs


class _Evaluator:
    """Per-process cache of the presolved, unpinned relaxations."""

    def __init__(self, net: Network, orders: Sequence[int], settings: SolverSettings | None = None):
        self.net = net
        self.settings = settings or SolverSettings()
        self.problems = {k: build_relaxation(net, k) for k in orders}
        self.base: dict[int, Presolved] = {k: presolve(pb.to_conic(), self.settings) for k, pb in self.problems.items()}
        self.buses = [g.bus for g in net.generators[:2]]

    def cell(self, p1: float, p2: float) -> SweepCell:
        out = SweepCell(p1, p2, true_cost=quadratic_cost(self.net, [p1, p2]))
        for k, pb in self.problems.items():
            try:
                rows = [pb.p_lift[b] for b in self.buses]
                rhs = [p / pb.net.s_base for p in (p1, p2)]
                pre = self.base[k].with_equalities(np.array(rows), np.array(rhs))
                out.margin[k] = float(pre.margin)
                if pre.status == FAILURE:
                    out.status[k], out.cost[k] = ERROR, None
                    continue
                if not pre.feasible:
                    out.status[k], out.cost[k] = INFEASIBLE, None
                    continue
                res = interpret(pb, pre.solve())
                if res.status == OPTIMAL:
                    out.status[k], out.cost[k] = FEASIBLE, res.relaxed_cost
                else:
                    out.status[k], out.cost[k] = ERROR, None
            except Exception:  # a single bad cell must not abort the sweep
                out.status[k], out.cost[k] = ERROR, None
        return out


_WORKER: _Evaluator | None = None


def _init_worker(net, orders, settings):
    global _WORKER
    _WORKER = _Evaluator(net, orders, settings)


def _run_chunk(points):
    return [_WORKER.cell(a, b) for a, b in points]


def run_sweep(net: Network, spec: SweepSpec, settings: SolverSettings | None = None) -> list[SweepCell]:
    """Evaluate every grid cell; the result is ordered like ``spec.grid()``."""
    if len(net.generators) < 2:
        raise ValueError("the sweep needs at least two generators")
    points = spec.grid()
    jobs = min(resolve_jobs(spec.jobs), max(1, len(points)))
    if jobs == 1:
        ev = _Evaluator(net, spec.orders, settings)
        return [ev.cell(a, b) for a, b in points]
    size = max(1, math.ceil(len(points) / (4 * jobs)))
    chunks = [points[i : i + size] for i in range(0, len(points), size)]
    with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(net, spec.orders, settings)) as pool:
        # map() yields in submission order, so completion order cannot leak into the output.
        return [cell for part in pool.map(_run_chunk, chunks) for cell in part]


def feasible_region_inclusion(cells: Sequence[SweepCell], inner: int = 2, outer: int = 1) -> bool:
    """True iff every cell feasible at order ``inner`` is feasible at order ``outer``."""
    return not inclusion_violations(cells, inner, outer)


def inclusion_violations(cells: Sequence[SweepCell], inner: int = 2, outer: int = 1) -> list[SweepCell]:
    return [c for c in cells if c.feasible(inner) and c.status.get(outer) is not None and not c.feasible(outer)]


def _num(v: float | None) -> str:
    return "" if v is None or not math.isfinite(v) else f"{v:.6g}"


def cells_to_csv(cells: Sequence[SweepCell]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for c in cells:
        row = [_num(c.p1), _num(c.p2)]
        for k in (1, 2):
            row += [c.status.get(k, ""), _num(c.cost.get(k))]
        row.append(_num(c.true_cost))
        w.writerow(row)
    return buf.getvalue()


def write_csv(cells: Sequence[SweepCell], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(cells_to_csv(cells))


def read_csv(path) -> list[SweepCell]:
    """Parse a sweep CSV back into cells (statuses and costs only)."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            cell = SweepCell(float(row["pg1_mw"]), float(row["pg2_mw"]), true_cost=float(row["true_cost"] or "nan"))
            for k in (1, 2):
                status = row[f"order{k}_status"]
                if status:
                    cell.status[k] = status
                    cost = row[f"order{k}_cost"]
                    cell.cost[k] = float(cost) if cost else None
            out.append(cell)
    return out


def best_cell(cells: Sequence[SweepCell], order: int = 2) -> SweepCell | None:
    """Feasible cell with the lowest relaxed cost at ``order``."""
    feas = [c for c in cells if c.feasible(order) and c.cost.get(order) is not None]
    return min(feas, key=lambda c: c.cost[order]) if feas else None

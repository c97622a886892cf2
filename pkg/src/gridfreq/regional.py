"""Distributed MPC over an operator partition.

Each region runs the receding-horizon layer on its own induced subgraph.
Flows on boundary edges enter its prediction as constant injections read at
the region's own sampling instant; regions never exchange anything else.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .mpc import MpcConfig, MpcResult, Snapshot, solve
from .network import NetworkModel, Partition, Region, subnetwork
from .plant import SystemState


@dataclass(frozen=True)
class SamplingSchedule:
    """Uniform sampling ``offset, offset + period, ...``."""

    period: float = 1.0
    offset: float = 0.0

    def grid(self, h: float) -> tuple[int, int]:
        """(stride, first step) on an integrator grid of step ``h``."""
        stride = round(self.period / h)
        first = round(self.offset / h)
        if stride < 1 or abs(stride * h - self.period) > 1e-9 * max(1.0, self.period):
            raise ValueError(f"sampling period {self.period} is not a multiple of h={h}")
        if abs(first * h - self.offset) > 1e-9 * max(1.0, self.offset):
            raise ValueError(f"sampling offset {self.offset} is not on the h={h} grid")
        return stride, first

    def instants(self, t_end: float) -> np.ndarray:
        k = np.arange(0, int(np.floor((t_end - self.offset) / self.period + 1e-9)) + 1)
        return self.offset + k * self.period


def boundary_injection_forecast(net: NetworkModel, region: Region, f_now: np.ndarray) -> np.ndarray:
    """Net inflow over boundary edges per region bus (ordered as ``region.nodes``)."""
    pos = {b: k for k, b in enumerate(region.nodes)}
    out = np.zeros(len(region.nodes))
    for a, b in region.boundary:
        flow = f_now[net.edges.index((a, b))]
        if a in pos:
            out[pos[a]] -= flow
        else:
            out[pos[b]] += flow
    return out


def restrict_state(net: NetworkModel, region: Region, s: SystemState) -> SystemState:
    node_pos = [net.index[i] for i in region.nodes]
    edge_pos = [net.edges.index(e) for e in region.edges]
    return SystemState(s.f[edge_pos], s.omega[node_pos], s.alpha_mpc[node_pos])


def regional_snapshot(
    net: NetworkModel,
    partition: Partition,
    beta: int,
    s: SystemState,
    p_fcst: Callable[[float], np.ndarray],
    t: float,
    cfg: MpcConfig,
) -> Snapshot:
    """Region ``beta``'s view at time ``t``: restricted state plus nodal
    forecast and the (constant) boundary-flow injections."""
    region = partition[beta]
    node_pos = [net.index[i] for i in region.nodes]
    rs = restrict_state(net, region, s)
    extra = boundary_injection_forecast(net, region, s.f)
    P = np.array([np.asarray(p_fcst(t + k * cfg.step))[node_pos] for k in range(cfg.N)]) + extra
    return Snapshot(float(t), rs.f.copy(), rs.omega.copy(), rs.alpha_mpc.copy(), P)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("GRIDFREQ_THREADS", "0")) or (os.cpu_count() or 1))
    except ValueError:
        return 1


class RegionalMpc:
    """Zero-order-hold table of the bottom-layer MPC output over all buses.

    ``penalties`` optionally overrides the violation penalty per region.
    """

    def __init__(
        self,
        net: NetworkModel,
        partition: Partition,
        cfg: MpcConfig,
        schedules: Sequence[SamplingSchedule] | None = None,
        penalties: Sequence[float | None] | None = None,
        parallel: bool = False,
    ):
        self.net = net
        self.partition = partition
        self.subnets = [subnetwork(net, r) for r in partition]
        self.schedules = list(schedules) if schedules is not None else [SamplingSchedule()] * len(partition)
        if len(self.schedules) != len(partition):
            raise ValueError("one sampling schedule per region required")
        penalties = penalties or [None] * len(partition)
        self.configs = [cfg if d is None else cfg.with_penalty(d) for d in penalties]
        for sub, c in zip(self.subnets, self.configs):
            c.validate(sub)
        self.parallel = parallel
        self.u = np.zeros(net.n)
        self.last: dict[int, MpcResult] = {}
        self._targets = [np.array([net.index[i] for i in r.controlled], dtype=int) for r in partition]

    def due(self, step: int, h: float) -> list[int]:
        out = []
        for k, sch in enumerate(self.schedules):
            stride, first = sch.grid(h)
            if step >= first and (step - first) % stride == 0:
                out.append(k)
        return out

    def solve_regions(self, regions: Sequence[int], s: SystemState, p_fcst, t: float) -> list[MpcResult]:
        snaps = [regional_snapshot(self.net, self.partition, b, s, p_fcst, t, self.configs[b]) for b in regions]

        def work(k):
            b = regions[k]
            return solve(self.subnets[b], self.configs[b], snaps[k])

        if self.parallel and len(regions) > 1:
            with ThreadPoolExecutor(max_workers=min(_threads(), len(regions))) as ex:
                return list(ex.map(work, range(len(regions))))
        return [work(k) for k in range(len(regions))]

    def update(self, regions: Sequence[int], s: SystemState, p_fcst, t: float) -> np.ndarray:
        """Re-solve the listed regions at ``t`` and refresh their held outputs."""
        results = self.solve_regions(regions, s, p_fcst, t)
        for b, res in zip(regions, results):
            sub = self.subnets[b]
            self.u[self._targets[b]] = res.u[sub.controlled_idx]
            self.last[b] = res
        return self.u


def distributed_update(
    net: NetworkModel,
    partition: Partition,
    schedules: Sequence[SamplingSchedule],
    state: SystemState,
    t: float,
    cfg: MpcConfig,
    p_fcst: Callable[[float], np.ndarray],
    u_prev: np.ndarray | None = None,
    h: float = 1e-3,
) -> np.ndarray:
    """One round of the distributed layer at time ``t``.

    Regions whose schedule hits ``t`` re-solve; the others keep their entries
    of ``u_prev``.
    """
    ctl = RegionalMpc(net, partition, cfg, schedules)
    if u_prev is not None:
        ctl.u = np.array(u_prev, dtype=float)
    return ctl.update(ctl.due(round(t / h), h), state, p_fcst, t).copy()

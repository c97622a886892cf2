"""Closed-loop simulation of the double-layered controller.

Continuous dynamics (swing equations and low-pass filters) are advanced by
fixed-step RK4. At each region's sampling instants the MPC output is
refreshed and held; the stability filter and the direct-feedback layer are
re-evaluated at every RK4 stage from the stage state.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .control import BARRIER_CLAMP, SafetySpec, barrier_feedback, filter_condition_slack
from .mpc import MpcConfig
from .network import NetworkModel, Partition, whole_network_partition
from .plant import InjectionProfile, SystemState, equilibrium
from .regional import RegionalMpc, SamplingSchedule

log = logging.getLogger(__name__)

FULL = "full"
TOP_ONLY = "top-only"
OFF = "off"


class SimulationError(RuntimeError):
    pass


@dataclass
class Scenario:
    profile: InjectionProfile
    t_end: float
    mpc: MpcConfig
    safety: SafetySpec
    initial: SystemState | None = None  # None: equilibrium flows of p(0), zero frequency
    h: float = 1e-3
    partition: Partition | None = None  # None: one region covering the network
    schedules: Sequence[SamplingSchedule] | None = None
    penalties: Sequence[float | None] | None = None
    forecast: Callable[[float], np.ndarray] | None = None  # None: exact forecast
    mode: str = FULL
    enable_at: float = 0.0
    record_stride: int = 1
    parallel_regions: bool = False

    def validate(self, net: NetworkModel) -> None:
        if self.h <= 0 or self.t_end <= 0:
            raise ValueError("h and t_end must be positive")
        if abs(round(self.t_end / self.h) * self.h - self.t_end) > 1e-9 * self.t_end:
            raise ValueError("t_end must be a multiple of h")
        if not 0 <= self.enable_at <= self.t_end:
            raise ValueError("enable time must lie within the horizon")
        if self.mode not in (FULL, TOP_ONLY, OFF):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.mode != OFF:
            self.mpc.validate(net)
            self.safety.validate(net.monitored)
        for sch in self.schedules or []:
            sch.grid(self.h)


@dataclass
class SafetyReport:
    bus: int
    invariance_held: bool
    entry_time: float | None
    violations_after_entry: int
    min_omega: float
    max_omega: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SimTrace:
    """Recorded trajectories (every ``stride``-th grid point) and monitors
    accumulated on every grid point."""

    net: NetworkModel = field(repr=False)
    t: np.ndarray
    f: np.ndarray
    omega: np.ndarray
    alpha_mpc: np.ndarray
    u_mpc: np.ndarray
    uhat: np.ndarray
    alpha_df: np.ndarray
    alpha: np.ndarray
    p: np.ndarray
    V: np.ndarray
    sampled: np.ndarray
    # cumulative trapezoid integrals from t = 0, full grid resolution
    cum_alpha_sq: np.ndarray
    cum_abs_alpha: np.ndarray
    cum_abs_df: np.ndarray
    cum_abs_mpc: np.ndarray
    # whole-grid monitors
    omega_min: np.ndarray
    omega_max: np.ndarray
    # band monitoring starts when the controller becomes available
    entry_time: np.ndarray  # per monitored bus, nan if never inside
    violations_after_entry: np.ndarray
    filter_slack_min: float
    dissipation_max: float
    lyapunov_max_increase: float  # after the injections settle
    h: float = 1e-3
    stride: int = 1
    observed_from: float = 0.0
    band: dict | None = None

    def column(self, name: str, bus: int) -> np.ndarray:
        return getattr(self, name)[:, self.net.index[bus]]

    def window(self, t0: float, t1: float) -> slice:
        i0 = int(np.searchsorted(self.t, t0 - 1e-9))
        i1 = int(np.searchsorted(self.t, t1 + 1e-9))
        return slice(i0, i1)


def lyapunov(net: NetworkModel, s: SystemState, f_inf: np.ndarray) -> float:
    """Energy of a state relative to the equilibrium ``(f_inf, 0, 0)``.

    The flow term is weighted by the inverse line susceptances, which is the
    weighting that makes the function nonincreasing along closed-loop
    trajectories (it reduces to the plain squared norm for unit
    susceptances).
    """
    df = s.f - f_inf
    return 0.5 * float(df @ (df / net.susceptance)) + 0.5 * float(s.omega @ (net.inertia * s.omega)) + 0.5 * float(
        s.alpha_mpc @ s.alpha_mpc
    )


_CHUNK = 2048


def run_closed_loop(net: NetworkModel, sc: Scenario) -> SimTrace:
    sc.validate(net)
    m, n, h = net.m, net.n, sc.h
    steps = round(sc.t_end / h)
    D = net.incidence
    b, M, E = net.susceptance, net.inertia, net.damping
    u_idx, w_idx = net.controlled_idx, net.monitored_idx
    nu, nw = len(u_idx), len(w_idx)
    # position of each monitored bus within the controlled block
    w_in_u = np.array([list(u_idx).index(k) for k in w_idx], dtype=int)

    eps = sc.mpc.values("epsilon", net.controlled) if sc.mode != OFF else np.zeros(nu)
    tau = sc.mpc.values("filter_tau", net.controlled) if sc.mode != OFF else np.ones(nu)
    lim = sc.safety.arrays(net.monitored)
    lthr_l, uthr_l = lim["lower_thr"].tolist(), lim["upper_thr"].tolist()
    lim_l = list(zip(*(lim[k].tolist() for k in ("lower", "upper", "lower_thr", "upper_thr", "gamma_lower", "gamma_upper"))))
    Dt_w = np.ascontiguousarray(D.T[w_idx])
    E_w = E[w_idx]
    invM = 1.0 / M
    invM_w = invM[w_idx]

    # linear part on z = (f, omega, a), a = filter states on the controlled buses
    dim = m + n + nu
    wpos = m + w_idx
    apos = slice(m + n, dim)
    A_lin = np.zeros((dim, dim))
    A_lin[:m, m : m + n] = b[:, None] * D
    A_lin[m : m + n, :m] = -D.T / M[:, None]
    A_lin[m : m + n, m : m + n] = np.diag(-E / M)
    A_lin[m + u_idx, m + n + np.arange(nu)] = 1.0 / M[u_idx]
    A_lin[m + n + np.arange(nu), m + n + np.arange(nu)] = -1.0 / tau
    A_lin[m + n + np.arange(nu), m + u_idx] = -1.0
    A_plant = A_lin.copy()
    A_plant[m + n :, :] = 0.0  # filters pinned at zero

    profile = sc.profile
    p_fcst = sc.forecast or profile
    aff = profile.affine()
    if aff is not None:
        shape = aff[2]
        pb, pd = aff[0] * invM, aff[1] * invM
        pb_w, pd_w = aff[0][w_idx], aff[1][w_idx]

    partition = sc.partition or whole_network_partition(net)
    regional = None
    if sc.mode == FULL:
        regional = RegionalMpc(net, partition, sc.mpc, sc.schedules, sc.penalties, sc.parallel_regions)
    u_mpc = np.zeros(nu)
    zero_u, zero_w = np.zeros(nu), np.zeros(nw)

    def stage(t, z, use_mpc, use_df):
        """Vector field plus the filtered MPC signal and the direct feedback."""
        if aff is not None:
            s = shape(t)
            pM = pb if s == 0.0 else pb + s * pd
            p_w = pb_w + s * pd_w
        else:
            p = profile(t)
            pM, p_w = p * invM, p[w_idx]
        dz = (A_lin if use_mpc else A_plant) @ z
        dz[m : m + n] += pM
        uhat, df = zero_u, zero_w
        if use_mpc:
            band = eps * np.abs(z[apos])
            uhat = np.minimum(np.maximum(u_mpc, -band), band)
            dz[apos] += uhat
        if use_df:
            ww = z[wpos]
            wl = ww.tolist()
            if any(x < lo or x > hi for x, lo, hi in zip(wl, lthr_l, uthr_l)):
                v = (E_w * ww + Dt_w @ z[:m] - p_w - z[apos][w_in_u]).tolist()
                df = np.array(_barrier_scalar(wl, v, lim_l))
                dz[wpos] += df * invM_w
        return dz, uhat, df

    # initial state and equilibrium used by the energy function
    p0 = profile(0.0)
    if sc.initial is None:
        f_start = equilibrium(net, np.zeros(m), p0)[0] if abs(p0.sum()) < 1e-9 else np.zeros(m)
        s0 = SystemState(f_start, np.zeros(n), np.zeros(n))
    else:
        s0 = sc.initial
        s0.check(net)
    f_inf = equilibrium(net, s0.f, profile.terminal)[0]
    z = np.concatenate([s0.f, s0.omega, s0.alpha_mpc[u_idx]])
    if sc.mode != FULL or sc.enable_at > 0:
        z[m + n :] = 0.0

    mon = _Monitors(net, sc, f_inf, eps, lim, w_in_u, steps)
    buf_z = np.empty((_CHUNK, dim))
    buf_uh = np.empty((_CHUNK, nu))
    buf_df = np.empty((_CHUNK, nw))
    buf_u = np.empty((_CHUNK, nu))
    buf_mpc = np.zeros(_CHUNK, dtype=bool)
    buf_s = np.zeros(_CHUNK, dtype=bool)
    k0 = 0
    r = 0
    enable_step = round(sc.enable_at / h)

    for k in range(steps + 1):
        t = k * h
        active = sc.mode != OFF and k >= enable_step
        use_mpc = active and sc.mode == FULL
        use_df = active
        sampled = False
        if use_mpc:
            due = regional.due(k - enable_step, h)
            if due:
                a_full = np.zeros(n)
                a_full[u_idx] = z[apos]
                s_now = SystemState(z[:m].copy(), z[m : m + n].copy(), a_full)
                try:
                    u_full = regional.update(due, s_now, p_fcst, t)
                except Exception as exc:
                    raise SimulationError(f"MPC solve failed at t={t:g}: {exc}") from exc
                u_mpc = u_full[u_idx].copy()
                sampled = True

        if k < steps:
            k1, uhat, df = stage(t, z, use_mpc, use_df)
        else:
            _, uhat, df = stage(t, z, use_mpc, use_df)
        buf_z[r] = z
        buf_uh[r] = uhat
        buf_df[r] = df
        buf_u[r] = u_mpc if use_mpc else 0.0
        buf_mpc[r] = use_mpc
        buf_s[r] = sampled
        r += 1
        if r == _CHUNK or k == steps:
            mon.flush(k0, buf_z[:r], buf_uh[:r], buf_df[:r], buf_u[:r], buf_mpc[:r], buf_s[:r])
            k0 += r
            r = 0
        if k == steps:
            break

        # classical RK4; the mode over a step is the one at its start
        k2 = stage(t + 0.5 * h, z + 0.5 * h * k1, use_mpc, use_df)[0]
        k3 = stage(t + 0.5 * h, z + 0.5 * h * k2, use_mpc, use_df)[0]
        k4 = stage(t + h, z + h * k3, use_mpc, use_df)[0]
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not use_mpc:
            z[m + n :] = 0.0
        if not np.all(np.isfinite(z)):
            bad = np.flatnonzero(~np.isfinite(z[m : m + n]))
            raise SimulationError(f"nonfinite state at step {k + 1} (t={t + h:g}), buses {[net.ids[i] for i in bad]}")

    return mon.trace()


def _barrier_scalar(w, v, lim):
    """Scalar twin of ``control.barrier_feedback`` for a handful of buses
    (same floating-point operations, much less call overhead)."""
    out = []
    for x, vi, (lo, hi, lthr, uthr, glo, ghi) in zip(w, v, lim):
        if x > uthr:
            out.append(min(0.0, min(ghi * (hi - x) / (x - uthr), BARRIER_CLAMP) + vi))
        elif x < lthr:
            out.append(max(0.0, min(glo * (lo - x) / (lthr - x), BARRIER_CLAMP) + vi))
        else:
            out.append(0.0)
    return out


class _Monitors:
    """Consumes blocks of consecutive grid points; keeps whole-grid monitors
    and the recorded (strided) rows."""

    def __init__(self, net, sc, f_inf, eps, lim, w_in_u, steps):
        self.net, self.sc, self.f_inf, self.eps, self.lim = net, sc, f_inf, eps, lim
        self.w_in_u = w_in_u
        self.steps = steps
        self.h = sc.h
        n, nw = net.n, len(net.monitored_idx)
        self.omega_min = np.full(n, np.inf)
        self.omega_max = np.full(n, -np.inf)
        self.entry = np.full(nw, np.nan)
        self.viol = np.zeros(nw, dtype=int)
        self.slack_min = np.inf
        self.diss_max = -np.inf
        self.v_inc_max = -np.inf
        self.prev_vals = None
        self.prev_V = None
        self.run = np.zeros((4, len(net.controlled_idx)))
        self.rows: dict[str, list] = {k: [] for k in ("k", "z", "uh", "df", "u", "V", "s", "cum")}

    def flush(self, k0, Z, UH, DF, U, MPC, S):
        net, h = self.net, self.h
        m, n = net.m, net.n
        u_idx, w_idx = net.controlled_idx, net.monitored_idx
        ks = k0 + np.arange(len(Z))
        t = ks * h
        W = Z[:, m : m + n]
        A = Z[:, m + n :]
        Ww = W[:, w_idx]
        self.omega_min = np.minimum(self.omega_min, W.min(axis=0))
        self.omega_max = np.maximum(self.omega_max, W.max(axis=0))

        inside = (Ww >= self.lim["lower"]) & (Ww <= self.lim["upper"])
        watched = t >= self.sc.enable_at - 1e-12
        inside, tw = inside[watched], t[watched]
        for j in range(Ww.shape[1]):
            col = inside[:, j]
            if np.isnan(self.entry[j]):
                hit = np.flatnonzero(col)
                if hit.size == 0:
                    continue
                self.entry[j] = tw[hit[0]]
                col = col[hit[0] :]
            self.viol[j] += int(np.count_nonzero(~col))

        if MPC.any():
            slack = filter_condition_slack(A[MPC], UH[MPC], self.eps)
            self.slack_min = min(self.slack_min, float(slack.min(initial=np.inf)))
        if DF.size:
            self.diss_max = max(self.diss_max, float((Ww * DF).max()))

        alpha = A.copy()
        alpha[:, self.w_in_u] += DF
        dfu = np.zeros_like(A)
        dfu[:, self.w_in_u] = DF
        vals = np.stack([alpha**2, np.abs(alpha), np.abs(dfu), np.abs(A)], axis=1)  # (rows, 4, nu)
        first = self.prev_vals is None
        vals_ext = np.concatenate([(vals[0] if first else self.prev_vals)[None], vals])
        inc = 0.5 * h * (vals_ext[1:] + vals_ext[:-1])
        if first:
            inc[0] = 0.0
        cum = self.run + np.cumsum(inc, axis=0)
        self.run = cum[-1].copy()
        self.prev_vals = vals[-1].copy()

        dF = Z[:, :m] - self.f_inf
        V = 0.5 * np.einsum("ij,ij->i", dF, dF / net.susceptance)
        V += 0.5 * np.einsum("ij,ij->i", W, W * net.inertia) + 0.5 * np.einsum("ij,ij->i", A, A)
        V_ext = V if self.prev_V is None else np.concatenate([[self.prev_V], V])
        t_ext = t if self.prev_V is None else np.concatenate([[t[0] - h], t])
        inc = np.diff(V_ext)
        after = t_ext[:-1] >= self.sc.profile.settle_time - 1e-12
        if np.any(after):
            self.v_inc_max = max(self.v_inc_max, float(inc[after].max()))
        self.prev_V = float(V[-1])

        keep = (ks % self.sc.record_stride == 0) | (ks == self.steps)
        for key, arr in (("k", ks), ("z", Z), ("uh", UH), ("df", dfu), ("u", U), ("V", V), ("s", S), ("cum", cum)):
            self.rows[key].append(arr[keep].copy())

    def trace(self) -> SimTrace:
        net = self.net
        m, n = net.m, net.n
        u_idx = net.controlled_idx
        R = {k: np.concatenate(v) for k, v in self.rows.items()}
        t = R["k"] * self.h
        Z = R["z"]

        def spread(block):
            out = np.zeros((len(t), n))
            out[:, u_idx] = block
            return out

        a_mpc = spread(Z[:, m + n :])
        a_df = spread(R["df"])
        return SimTrace(
            net=net,
            t=t,
            f=Z[:, :m],
            omega=Z[:, m : m + n],
            alpha_mpc=a_mpc,
            u_mpc=spread(R["u"]),
            uhat=spread(R["uh"]),
            alpha_df=a_df,
            alpha=a_mpc + a_df,
            p=np.array([self.sc.profile(tt) for tt in t]),
            V=R["V"],
            sampled=R["s"],
            cum_alpha_sq=spread(R["cum"][:, 0]),
            cum_abs_alpha=spread(R["cum"][:, 1]),
            cum_abs_df=spread(R["cum"][:, 2]),
            cum_abs_mpc=spread(R["cum"][:, 3]),
            omega_min=self.omega_min,
            omega_max=self.omega_max,
            entry_time=self.entry,
            violations_after_entry=self.viol,
            filter_slack_min=self.slack_min,
            dissipation_max=self.diss_max,
            lyapunov_max_increase=self.v_inc_max,
            h=self.h,
            stride=self.sc.record_stride,
            observed_from=self.sc.enable_at,
            band={k: self.lim[k] for k in ("lower", "upper")},
        )


def control_cost(trace: SimTrace, c: np.ndarray | dict, window: tuple[float, float] | None = None, buses=None) -> float:
    """Weighted control effort ``sum_i c_i * integral(alpha_i^2)`` over ``window``.

    Uses the full-resolution trapezoid accumulated during the run, so the
    window ends must be recorded times.
    """
    net = trace.net
    if window is None:
        window = (trace.t[0], trace.t[-1])
    t0, t1 = window
    if not t1 > t0:
        raise ValueError("empty cost window")
    i0, i1 = _time_index(trace, t0), _time_index(trace, t1)
    buses = net.controlled if buses is None else buses
    idx = [net.index[i] for i in buses]
    w = np.array([c[i] for i in buses]) if isinstance(c, dict) else np.asarray(c, float)[idx]
    return float(w @ (trace.cum_alpha_sq[i1, idx] - trace.cum_alpha_sq[i0, idx]))


def _time_index(trace: SimTrace, t: float) -> int:
    i = int(np.argmin(np.abs(trace.t - t)))
    if abs(trace.t[i] - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"time {t} is not a recorded grid point")
    return i


def share_of_direct_feedback(trace: SimTrace, bus: int, window: tuple[float, float] | None = None) -> float:
    """``integral |alpha_df| / integral |alpha|`` at one bus."""
    i = trace.net.index[bus]
    t0, t1 = window or (trace.t[0], trace.t[-1])
    i0, i1 = _time_index(trace, t0), _time_index(trace, t1)
    tot = trace.cum_abs_alpha[i1, i] - trace.cum_abs_alpha[i0, i]
    return float((trace.cum_abs_df[i1, i] - trace.cum_abs_df[i0, i]) / tot) if tot > 0 else 0.0


def safety_report(trace: SimTrace, spec: SafetySpec) -> list[SafetyReport]:
    """Per monitored bus: first time inside the band and violations after it.

    Monitoring starts at ``trace.observed_from`` (the controller enable
    time). When ``spec`` has the band the run was monitored with, the
    whole-grid counters are used; otherwise the recorded samples.
    """
    net = trace.net
    lim = spec.arrays(net.monitored)
    same = trace.band is not None and all(np.array_equal(lim[k], trace.band[k]) for k in ("lower", "upper"))
    watched = trace.t >= trace.observed_from - 1e-12
    out = []
    for j, bus in enumerate(net.monitored):
        k = net.index[bus]
        if same:
            entry = None if np.isnan(trace.entry_time[j]) else float(trace.entry_time[j])
            viol = int(trace.violations_after_entry[j])
        else:
            w = trace.omega[watched, k]
            inside = (w >= lim["lower"][j]) & (w <= lim["upper"][j])
            hit = np.flatnonzero(inside)
            entry = float(trace.t[watched][hit[0]]) if hit.size else None
            viol = int(np.count_nonzero(~inside[hit[0] :])) if hit.size else 0
        held = entry is not None and viol == 0
        out.append(SafetyReport(bus, held, entry, viol, float(trace.omega_min[k]), float(trace.omega_max[k])))
    return out


def write_trace_csv(trace: SimTrace, path: str | Path) -> None:
    net = trace.net
    header = ["t"] + [f"omega_{i}" for i in net.ids] + [f"f_{a}_{b}" for a, b in net.edges]
    for name in ("alpha", "alpha_mpc", "alpha_df", "u_mpc"):
        header += [f"{name}_{i}" for i in net.controlled]
    header.append("V")
    u = net.controlled_idx
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for r in range(len(trace.t)):
            row = [trace.t[r], *trace.omega[r], *trace.f[r]]
            for name in ("alpha", "alpha_mpc", "alpha_df", "u_mpc"):
                row += list(getattr(trace, name)[r, u])
            row.append(trace.V[r])
            wr.writerow([f"{x:.9g}" for x in row])


def metrics(trace: SimTrace, spec: SafetySpec, weights: dict | None = None) -> dict:
    net = trace.net
    out = {
        "t_end": float(trace.t[-1]),
        "safety": [r.to_dict() for r in safety_report(trace, spec)],
        "min_omega": {str(i): float(trace.omega_min[net.index[i]]) for i in net.ids},
        "max_omega": {str(i): float(trace.omega_max[net.index[i]]) for i in net.ids},
        "final_omega_inf_norm": float(np.abs(trace.omega[-1]).max()),
        "filter_condition_min_slack": trace.filter_slack_min,
        "lyapunov_max_increase_after_settle": trace.lyapunov_max_increase,
    }
    if weights is not None:
        out["cost"] = control_cost(trace, weights)
        out["direct_feedback_share"] = {str(i): share_of_direct_feedback(trace, i) for i in net.monitored}
    return out

"""Linearized swing dynamics, injection profiles and RK4 integration."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .network import NetworkModel

BALANCE_TOL = 1e-9


@dataclass(frozen=True)
class SystemState:
    """Line flows ``f`` (pu), frequency deviations ``omega`` (Hz) and the
    low-pass filter states ``alpha_mpc`` (pu, zero off the controlled set)."""

    f: np.ndarray
    omega: np.ndarray
    alpha_mpc: np.ndarray

    @classmethod
    def zeros(cls, net: NetworkModel) -> "SystemState":
        return cls(np.zeros(net.m), np.zeros(net.n), np.zeros(net.n))

    def check(self, net: NetworkModel) -> None:
        if self.f.shape != (net.m,) or self.omega.shape != (net.n,) or self.alpha_mpc.shape != (net.n,):
            raise ValueError("state dimensions do not match network")
        off = np.ones(net.n, dtype=bool)
        off[net.controlled_idx] = False
        if np.any(self.alpha_mpc[off] != 0):
            raise ValueError("alpha_mpc must vanish off the controlled set")

    def replace(self, **kw) -> "SystemState":
        return replace(self, **kw)


class InjectionProfile:
    """Power injection p(t) that is constant from ``settle_time`` on.

    ``p(t) = base + shape(t) * direction``; ``shape`` must vanish (or be
    constant) after ``settle_time``. The terminal injection must be
    balanced across all buses.
    """

    def __init__(
        self,
        base: np.ndarray,
        direction: np.ndarray | None = None,
        shape: Callable[[float], float] | None = None,
        settle_time: float = 0.0,
        check_balance: bool = True,
    ):
        self.base = np.asarray(base, dtype=float)
        self.direction = np.zeros_like(self.base) if direction is None else np.asarray(direction, float)
        self.shape = shape if shape is not None else (lambda t: 0.0)
        self.settle_time = float(settle_time)
        if self.settle_time < 0:
            raise ValueError("settle_time must be nonnegative")
        if check_balance and abs(self.terminal.sum()) > BALANCE_TOL:
            raise ValueError(
                f"terminal injections are unbalanced (sum = {self.terminal.sum():.3e})"
            )

    def __call__(self, t: float) -> np.ndarray:
        s = self.shape(t)
        if s == 0.0:
            return self.base.copy()
        return self.base + s * self.direction

    @property
    def terminal(self) -> np.ndarray:
        return self(self.settle_time)

    def affine(self):
        """``(base, direction, shape)`` if ``p(t) = base + shape(t) direction``, else None."""
        return self.base, self.direction, self.shape


class PiecewiseProfile(InjectionProfile):
    """Piecewise-constant injections: ``values[k]`` holds on ``[starts[k], starts[k+1])``."""

    def __init__(self, starts: Sequence[float], values: Sequence[np.ndarray], check_balance: bool = True):
        starts = [float(s) for s in starts]
        if not starts or starts[0] != 0.0 or any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("segment starts must begin at 0 and increase strictly")
        self.starts = np.array(starts)
        self.values = [np.asarray(v, dtype=float) for v in values]
        if len(self.values) != len(starts):
            raise ValueError("one value vector per segment required")
        super().__init__(self.values[-1], settle_time=starts[-1], check_balance=check_balance)

    def __call__(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.starts, t, side="right")) - 1
        return self.values[max(k, 0)].copy()

    def affine(self):
        return None


def load_ramp(t: float, amplitude: float = 0.2, ramp: float = 25.0, hold: float = 125.0, end: float = 150.0) -> float:
    """Load-scaling disturbance: sine ramp up, plateau, sine ramp down, then zero."""
    if t < 0:
        return 0.0
    period = 4.0 * ramp
    if t <= ramp:
        return amplitude * math.sin(2.0 * math.pi * t / period)
    if t <= hold:
        return amplitude
    if t <= end:
        return amplitude * math.sin(2.0 * math.pi * (t - (hold - ramp)) / period)
    return 0.0


def scaled_load_profile(
    net: NetworkModel,
    p0: np.ndarray,
    buses: Sequence[int],
    amplitude: float = 0.2,
    ramp: float = 25.0,
    hold: float = 125.0,
    end: float = 150.0,
) -> InjectionProfile:
    """``p_i(t) = (1 + delta(t)) p_i(0)`` for the listed buses, others fixed."""
    p0 = np.asarray(p0, dtype=float)
    mask = np.zeros(net.n)
    mask[[net.index[i] for i in buses]] = 1.0
    return InjectionProfile(
        p0,
        direction=mask * p0,
        shape=lambda t: load_ramp(t, amplitude, ramp, hold, end),
        settle_time=end,
    )


def _check_alpha(net: NetworkModel, alpha: np.ndarray) -> None:
    off = np.ones(net.n, dtype=bool)
    off[net.controlled_idx] = False
    if np.any(alpha[off] != 0):
        bad = [net.ids[k] for k in np.flatnonzero(off & (alpha != 0))]
        raise ValueError(f"control input nonzero at uncontrolled nodes {bad}")


def derivative(
    net: NetworkModel, s: SystemState, p: np.ndarray, alpha: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand side of the linearized swing dynamics: ``(fdot, omegadot)``."""
    p = np.asarray(p, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if s.f.shape != (net.m,) or s.omega.shape != (net.n,) or p.shape != (net.n,) or alpha.shape != (net.n,):
        raise ValueError("dimension mismatch")
    _check_alpha(net, alpha)
    D = net.incidence
    fdot = net.susceptance * (D @ s.omega)
    wdot = (-net.damping * s.omega - D.T @ s.f + p + alpha) / net.inertia
    return fdot, wdot


def rk4(fun: Callable[[float, np.ndarray], np.ndarray], t: float, z: np.ndarray, h: float) -> np.ndarray:
    k1 = fun(t, z)
    k2 = fun(t + 0.5 * h, z + 0.5 * h * k1)
    k3 = fun(t + 0.5 * h, z + 0.5 * h * k2)
    k4 = fun(t + h, z + h * k3)
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(
    net: NetworkModel,
    s: SystemState,
    p: np.ndarray | Callable[[float], np.ndarray],
    alpha: np.ndarray,
    h: float,
    t: float = 0.0,
    filter_input: np.ndarray | None = None,
    filter_tau: np.ndarray | None = None,
) -> SystemState:
    """One classical RK4 step of the swing dynamics.

    ``alpha`` is held over the step. When ``filter_input`` (the filtered MPC
    signal) and ``filter_tau`` are given, the low-pass states are integrated
    jointly and added to the injected control; otherwise they are carried
    through unchanged. ``p`` may be a fixed vector or a function of time.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    m, n = net.m, net.n
    alpha = np.asarray(alpha, dtype=float)
    _check_alpha(net, alpha)
    D = net.incidence
    pfun = p if callable(p) else (lambda _t, _p=np.asarray(p, float): _p)
    u_idx = net.controlled_idx
    integrate_filter = filter_input is not None
    if integrate_filter:
        uhat = np.asarray(filter_input, float)[u_idx]
        tau = np.asarray(filter_tau, float)[u_idx]

    def fun(tt: float, z: np.ndarray) -> np.ndarray:
        f, w, a = z[:m], z[m : m + n], z[m + n :]
        dz = np.zeros_like(z)
        dz[:m] = net.susceptance * (D @ w)
        inj = pfun(tt) + alpha
        if integrate_filter:
            inj = inj + a
            dz[m + n + u_idx] = -a[u_idx] / tau - w[u_idx] + uhat
        dz[m : m + n] = (-net.damping * w - D.T @ f + inj) / net.inertia
        return dz

    z = np.concatenate([s.f, s.omega, s.alpha_mpc])
    z = rk4(fun, t, z, h)
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("nonfinite state after integration step")
    return SystemState(z[:m], z[m : m + n], z[m + n :])


def equilibrium(net: NetworkModel, f0: np.ndarray, p_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Equilibrium ``(f_inf, 0)`` reached from initial flows ``f0``.

    Flows can only move within ``f0 + range(Yb D)``, so ``f_inf`` is the
    point of that affine set with ``D^T f_inf = p_star``.
    """
    p_star = np.asarray(p_star, dtype=float)
    f0 = np.asarray(f0, dtype=float)
    if abs(p_star.sum()) > BALANCE_TOL:
        raise ValueError(f"p_star is unbalanced (sum = {p_star.sum():.3e})")
    D = net.incidence
    L = net.laplacian()
    xi = np.linalg.lstsq(L, p_star - D.T @ f0, rcond=None)[0]
    f_inf = f0 + net.susceptance * (D @ xi)
    return f_inf, np.zeros(net.n)


def dc_flows(net: NetworkModel, p: np.ndarray) -> np.ndarray:
    """Tree-free equilibrium flows for balanced ``p`` (starting from zero flow)."""
    return equilibrium(net, np.zeros(net.m), p)[0]


def node_vector(net: NetworkModel, values: Mapping[int, float] | float, nodes: Sequence[int] | None = None) -> np.ndarray:
    """Spread a scalar or a ``{bus: value}`` mapping onto an n-vector."""
    out = np.zeros(net.n)
    nodes = net.ids if nodes is None else nodes
    for i in nodes:
        out[net.index[i]] = values if np.isscalar(values) else values[i]
    return out

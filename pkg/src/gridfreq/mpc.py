"""Receding-horizon allocation layer.

At a sampling instant the controller predicts the network over ``N`` Euler
steps of length ``T`` under a constant input ``u`` (restricted to the
controlled buses), and picks the cheapest ``u`` that keeps the predicted
monitored frequencies inside their band, up to a penalized slack ``beta``.
The dynamics are eliminated by forward substitution, so the QP only has
``|I_u| + 1`` variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .network import NetworkModel
from .qp import OPTIMAL, QpProblem, QpSolution, solve_qp


class MpcError(RuntimeError):
    pass


@dataclass(frozen=True)
class MpcConfig:
    """Per-bus parameters are keyed by bus id; scalars apply to every bus."""

    weights: Mapping[int, float] | float
    epsilon: Mapping[int, float] | float = 1.9
    filter_tau: Mapping[int, float] | float = 0.5
    lower: Mapping[int, float] | float = -0.2
    upper: Mapping[int, float] | float = 0.2
    penalty_d: float = 100.0
    horizon: float = 2.0
    step: float = 0.02
    qp_tol: float = 1e-8
    qp_max_iter: int = 100

    @property
    def N(self) -> int:
        return max(1, math.ceil(self.horizon / self.step - 1e-9))

    def value(self, name: str, bus: int) -> float:
        v = getattr(self, name)
        return float(v) if np.isscalar(v) else float(v[bus])

    def values(self, name: str, buses) -> np.ndarray:
        return np.array([self.value(name, i) for i in buses], dtype=float)

    def with_penalty(self, d: float) -> "MpcConfig":
        return replace(self, penalty_d=float(d))

    def validate(self, net: NetworkModel) -> None:
        if self.horizon <= 0 or self.step <= 0:
            raise ValueError("horizon and step must be positive")
        if self.penalty_d < 0:
            raise ValueError("penalty_d must be nonnegative")
        for i in net.controlled:
            c, eps, tau = (self.value(k, i) for k in ("weights", "epsilon", "filter_tau"))
            if c <= 0 or eps <= 0 or tau <= 0:
                raise ValueError(f"bus {i}: weight, epsilon and filter time constant must be positive")
            if eps * tau >= 1:
                raise ValueError(f"bus {i}: epsilon * T_i = {eps * tau:g} must be < 1")
        for i in net.monitored:
            if not self.value("lower", i) < self.value("upper", i):
                raise ValueError(f"bus {i}: lower frequency bound must be below upper")


@dataclass
class Snapshot:
    time: float
    f: np.ndarray
    omega: np.ndarray
    alpha_mpc: np.ndarray
    forecast: np.ndarray  # (N, n): forecast[k] = p(time + k T)

    def vector(self) -> np.ndarray:
        """Flattened (forecast, f, omega, alpha_mpc)."""
        return np.concatenate([self.forecast.ravel(), self.f, self.omega, self.alpha_mpc])

    @classmethod
    def from_vector(cls, z: np.ndarray, time: float, N: int, m: int, n: int) -> "Snapshot":
        k = N * n
        return cls(time, z[k : k + m], z[k + m : k + m + n], z[k + m + n :], z[:k].reshape(N, n))

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "f": self.f.tolist(),
            "omega": self.omega.tolist(),
            "alpha_mpc": self.alpha_mpc.tolist(),
            "forecast": self.forecast.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Snapshot":
        return cls(
            float(d["time"]),
            np.asarray(d["f"], float),
            np.asarray(d["omega"], float),
            np.asarray(d["alpha_mpc"], float),
            np.asarray(d["forecast"], float),
        )


@dataclass
class MpcResult:
    u: np.ndarray  # n-vector, zero off the controlled set
    beta: float
    F: np.ndarray = field(repr=False)  # (N+1, m)
    Omega: np.ndarray = field(repr=False)  # (N+1, n)
    A: np.ndarray = field(repr=False)  # (N+1, n)
    objective: float = 0.0
    qp: QpSolution | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "u": self.u.tolist(),
            "beta": self.beta,
            "objective": self.objective,
            "F": self.F.tolist(),
            "Omega": self.Omega.tolist(),
            "A": self.A.tolist(),
            "qp_status": None if self.qp is None else self.qp.status,
            "qp_iterations": None if self.qp is None else self.qp.iterations,
        }


def make_snapshot(
    net: NetworkModel, cfg: MpcConfig, t: float, f, omega, alpha_mpc, p_forecast: Callable[[float], np.ndarray]
) -> Snapshot:
    """Sample a forecast function at ``t + k T`` (left endpoints)."""
    P = np.array([p_forecast(t + k * cfg.step) for k in range(cfg.N)]).reshape(cfg.N, net.n)
    return Snapshot(float(t), np.array(f, float), np.array(omega, float), np.array(alpha_mpc, float), P)


def _check(net: NetworkModel, cfg: MpcConfig, snap: Snapshot) -> None:
    cfg.validate(net)
    if snap.forecast.shape != (cfg.N, net.n):
        raise ValueError(f"forecast must have shape {(cfg.N, net.n)}, got {snap.forecast.shape}")
    if snap.f.shape != (net.m,) or snap.omega.shape != (net.n,) or snap.alpha_mpc.shape != (net.n,):
        raise ValueError("snapshot state does not match network dimensions")
    off = np.ones(net.n, dtype=bool)
    off[net.controlled_idx] = False
    if np.any(snap.alpha_mpc[off] != 0):
        raise ValueError("snapshot alpha_mpc nonzero off the controlled set")


def predict(net: NetworkModel, cfg: MpcConfig, snap: Snapshot, u: np.ndarray):
    """Euler prediction under constant input ``u`` (n-vector).

    Returns ``(F, Omega, A)`` with ``N + 1`` rows each.
    """
    T, N = cfg.step, cfg.N
    D = net.incidence
    b, M, E = net.susceptance, net.inertia, net.damping
    tau = np.ones(net.n)
    ctrl = np.zeros(net.n, dtype=bool)
    ctrl[net.controlled_idx] = True
    tau[ctrl] = cfg.values("filter_tau", net.controlled)
    F = np.empty((N + 1, net.m))
    W = np.empty((N + 1, net.n))
    A = np.empty((N + 1, net.n))
    F[0], W[0], A[0] = snap.f, snap.omega, snap.alpha_mpc
    for k in range(N):
        F[k + 1] = F[k] + T * b * (D @ W[k])
        W[k + 1] = W[k] + T * (-E * W[k] - D.T @ F[k] + snap.forecast[k] + u) / M
        A[k + 1] = np.where(ctrl, A[k] + T * (-A[k] / tau - W[k] + u), 0.0)
    return F, W, A


def _input_response(net: NetworkModel, cfg: MpcConfig) -> np.ndarray:
    """Sensitivity of predicted omega(k), k = 1..N, to each controlled input.

    Shape ``(N, n, |I_u|)``.
    """
    T, N = cfg.step, cfg.N
    D = net.incidence
    b, M, E = net.susceptance, net.inertia, net.damping
    u_idx = net.controlled_idx
    nu = len(u_idx)
    Bw = np.zeros((net.n, nu))
    Bw[u_idx, np.arange(nu)] = T / M[u_idx]
    Fk = np.zeros((net.m, nu))
    Wk = np.zeros((net.n, nu))
    out = np.empty((N, net.n, nu))
    for k in range(N):
        Fk, Wk = Fk + T * b[:, None] * (D @ Wk), Wk + T * (-E[:, None] * Wk - D.T @ Fk) / M[:, None] + Bw
        out[k] = Wk
    return out


@dataclass
class _Condensed:
    problem: QpProblem
    free: tuple[np.ndarray, np.ndarray, np.ndarray]
    sens: np.ndarray  # (N, n, nu)


def _condense(net: NetworkModel, cfg: MpcConfig, snap: Snapshot) -> _Condensed:
    _check(net, cfg, snap)
    N = cfg.N
    u_idx, w_idx = net.controlled_idx, net.monitored_idx
    nu, nw = len(u_idx), len(w_idx)
    free = predict(net, cfg, snap, np.zeros(net.n))
    sens = _input_response(net, cfg)
    Wfree = free[1][1:, w_idx]  # (N, nw)
    S = sens[:, w_idx, :]  # (N, nw, nu)
    lo = cfg.values("lower", net.monitored)
    hi = cfg.values("upper", net.monitored)
    eps = cfg.values("epsilon", net.controlled)
    a0 = np.abs(snap.alpha_mpc[u_idx])

    nv = nu + 1
    rows, rhs = [], []
    Su = S.reshape(N * nw, nu)
    ones = np.ones((N * nw, 1))
    rows.append(np.hstack([Su, -ones]))
    rhs.append((hi[None, :] - Wfree).ravel())
    rows.append(np.hstack([-Su, -ones]))
    rhs.append((Wfree - lo[None, :]).ravel())
    I = np.eye(nu, nv)
    rows += [I, -I]
    rhs += [eps * a0, eps * a0]
    beta_row = np.zeros((1, nv))
    beta_row[0, -1] = -1.0
    rows.append(beta_row)
    rhs.append(np.zeros(1))
    K = np.diag(np.concatenate([cfg.values("weights", net.controlled), [cfg.penalty_d]]))
    prob = QpProblem(K, np.zeros(nv), np.vstack(rows), np.concatenate(rhs))
    return _Condensed(prob, free, sens)


def build_problem(net: NetworkModel, cfg: MpcConfig, snap: Snapshot) -> QpProblem:
    """Condensed QP over ``(u restricted to I_u, beta)``.

    Rows: upper then lower frequency rows for every (k, monitored bus),
    then ``u_i <= eps_i |alpha_i|``, ``-u_i <= eps_i |alpha_i|``, ``-beta <= 0``.
    """
    return _condense(net, cfg, snap).problem


def solve(net: NetworkModel, cfg: MpcConfig, snap: Snapshot, x0: np.ndarray | None = None) -> MpcResult:
    c = _condense(net, cfg, snap)
    u_idx = net.controlled_idx
    nu = len(u_idx)
    if cfg.penalty_d == 0:
        # beta is free of charge: u = 0 and beta is the smallest feasible slack
        Wfree = c.free[1][1:, net.monitored_idx]
        lo = cfg.values("lower", net.monitored)
        hi = cfg.values("upper", net.monitored)
        viol = np.concatenate([(Wfree - hi).ravel(), (lo - Wfree).ravel(), [0.0]])
        x, sol = np.concatenate([np.zeros(nu), [viol.max()]]), None
    else:
        sol = solve_qp(c.problem, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter, x0=x0)
        if sol.status != OPTIMAL:
            raise MpcError(f"QP {sol.status} at t={snap.time:g}")
        x = sol.x
    u = np.zeros(net.n)
    u[u_idx] = x[:nu]
    F, W, A = predict(net, cfg, snap, u)
    return MpcResult(u, float(x[-1]), F, W, A, c.problem.objective(x), sol)


def lipschitz_probe(
    net: NetworkModel,
    cfg: MpcConfig,
    base: Snapshot,
    radius: float,
    trials: int,
    rng: np.random.Generator | int | None = 0,
) -> float:
    """Largest observed ``|u*(z1) - u*(z2)| / |z1 - z2|`` over random pairs
    drawn uniformly from the ball of ``radius`` around the base snapshot."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if radius == 0:
        return 0.0
    rng = np.random.default_rng(rng)
    z0 = base.vector()
    mask = _perturbable(net, cfg)
    best = 0.0
    for _ in range(trials):
        d1, d2 = (_ball(rng, mask, radius) for _ in range(2))
        dist = np.linalg.norm(d1 - d2)
        if dist == 0:
            continue
        u1 = _u_of(net, cfg, z0 + d1, base.time)
        u2 = _u_of(net, cfg, z0 + d2, base.time)
        best = max(best, float(np.linalg.norm(u1 - u2) / dist))
    return best


def difference_quotients(
    net: NetworkModel, cfg: MpcConfig, base: Snapshot, direction: np.ndarray, scales
) -> np.ndarray:
    """``|u*(z + s d) - u*(z)| / |s d|`` for each scale ``s``."""
    z0 = base.vector()
    u0 = _u_of(net, cfg, z0, base.time)
    d = direction * _perturbable(net, cfg)
    return np.array(
        [np.linalg.norm(_u_of(net, cfg, z0 + s * d, base.time) - u0) / (s * np.linalg.norm(d)) for s in scales]
    )


def _perturbable(net: NetworkModel, cfg: MpcConfig) -> np.ndarray:
    alpha_mask = np.zeros(net.n)
    alpha_mask[net.controlled_idx] = 1.0
    return np.concatenate([np.ones(cfg.N * net.n + net.m + net.n), alpha_mask])


def _ball(rng: np.random.Generator, mask: np.ndarray, radius: float) -> np.ndarray:
    k = int(mask.sum())
    g = rng.standard_normal(k)
    g *= radius * rng.uniform() ** (1.0 / k) / np.linalg.norm(g)
    out = np.zeros(mask.size)
    out[mask > 0] = g
    return out


def _u_of(net: NetworkModel, cfg: MpcConfig, z: np.ndarray, t: float) -> np.ndarray:
    snap = Snapshot.from_vector(z, t, cfg.N, net.m, net.n)
    return solve(net, cfg, snap).u[net.controlled_idx]

"""Dense convex QP solver (primal-dual interior point, Mehrotra steps).

Problem form::

    minimize    c' K c + q' c
    subject to  G c <= w
                A c == b          (optional)

Opposing inequality pairs that pin a row to a single value (``g c <= w1``
and ``-g c <= -w1``) are merged into equalities before the interior-point
iterations, since such pairs leave no strictly feasible interior. After
convergence the active set is re-solved exactly ("polishing"), which makes
piecewise-affine structure of the optimizer visible to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max-iterations"


class QpError(RuntimeError):
    pass


@dataclass
class QpProblem:
    K: np.ndarray
    q: np.ndarray
    G: np.ndarray
    w: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self):
        self.K = np.atleast_2d(np.asarray(self.K, dtype=float))
        nv = self.K.shape[0]
        self.q = np.zeros(nv) if self.q is None else np.asarray(self.q, dtype=float)
        self.G = np.asarray(self.G, dtype=float).reshape(-1, nv)
        self.w = np.asarray(self.w, dtype=float).reshape(-1)
        if self.A is None:
            self.A = np.zeros((0, nv))
            self.b = np.zeros(0)
        else:
            self.A = np.asarray(self.A, dtype=float).reshape(-1, nv)
            self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.K.shape != (nv, nv) or self.q.shape != (nv,):
            raise ValueError("K must be square and match q")
        if self.G.shape[0] != self.w.shape[0] or self.A.shape[0] != self.b.shape[0]:
            raise ValueError("constraint matrix and right-hand side disagree")
        if not np.allclose(self.K, self.K.T, rtol=0, atol=1e-12 * max(1.0, np.abs(self.K).max())):
            raise ValueError("K must be symmetric")

    @property
    def n_vars(self) -> int:
        return self.K.shape[0]

    def objective(self, c: np.ndarray) -> float:
        return float(c @ self.K @ c + self.q @ c)

    def to_dict(self) -> dict:
        return {
            "K": self.K.tolist(),
            "q": self.q.tolist(),
            "G": self.G.tolist(),
            "w": self.w.tolist(),
            "A": self.A.tolist(),
            "b": self.b.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QpProblem":
        A = d.get("A") or None
        return cls(d["K"], d["q"], d["G"], d["w"], A, d.get("b") if A else None)


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float
    z: np.ndarray = field(repr=False, default=None)
    polished: bool = False


def _row_key(v):
    # + 0.0 folds -0.0 into 0.0 so opposite rows hash consistently
    return (np.round(v, 12) + 0.0).tobytes()


def _merge_pinned_rows(G, w, tol):
    """Split ``G c <= w`` into remaining inequalities plus pinned equalities."""
    norms = np.linalg.norm(G, axis=1)
    keys = {}
    for r in range(G.shape[0]):
        if norms[r] == 0:
            continue
        keys.setdefault(_row_key(G[r] / norms[r]), []).append(r)
    pinned = set()
    eq_rows, eq_rhs, pairs = [], [], []
    for r in range(G.shape[0]):
        if r in pinned or norms[r] == 0:
            continue
        for s in keys.get(_row_key(-G[r] / norms[r]), []):
            if s in pinned or s == r:
                continue
            # g c <= w_r and -g' c <= w_s with g' = (n_s/n_r) g
            ratio = norms[s] / norms[r]
            lo, hi = -w[s] / ratio, w[r]
            width = hi - lo
            if width <= tol * max(1.0, abs(hi), abs(lo)):
                if width < -tol * max(1.0, abs(hi), abs(lo)):
                    continue  # contradictory pair, leave it for infeasibility detection
                pinned.update((r, s))
                pairs.append((r, s, ratio))
                eq_rows.append(G[r])
                eq_rhs.append(0.5 * (hi + lo))
                break
    keep = np.array([r for r in range(G.shape[0]) if r not in pinned], dtype=int)
    return keep, np.array(eq_rows).reshape(-1, G.shape[1]), np.array(eq_rhs), pairs


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def solve_qp(
    prob: QpProblem,
    tol: float = 1e-8,
    max_iter: int = 100,
    x0: np.ndarray | None = None,
    polish: bool = True,
) -> QpSolution:
    """Solve a convex QP to KKT tolerance ``tol``; deterministic for fixed input."""
    nv = prob.n_vars
    H = 2.0 * prob.K
    q = prob.q
    keep, Aeq_p, beq_p, pairs = _merge_pinned_rows(prob.G, prob.w, tol)
    G, h = prob.G[keep], prob.w[keep]
    A = np.vstack([prob.A, Aeq_p])
    b = np.concatenate([prob.b, beq_p])
    mi, me = G.shape[0], A.shape[0]

    scale = 1.0 + max(np.abs(q).max(initial=0.0), np.abs(h).max(initial=0.0), np.abs(b).max(initial=0.0))
    x = np.zeros(nv) if x0 is None else np.asarray(x0, dtype=float).copy()
    s = np.maximum(h - G @ x, 1.0)
    z = np.ones(mi)
    y = np.zeros(me)

    status = MAX_ITER
    it = 0
    rp_n = rd_n = gap = np.inf
    for it in range(1, max_iter + 1):
        rd = H @ x + q + G.T @ z + A.T @ y
        rp = G @ x + s - h
        re = A @ x - b
        mu = float(s @ z) / mi if mi else 0.0
        rd_n = np.abs(rd).max(initial=0.0)
        rp_n = max(np.abs(rp).max(initial=0.0), np.abs(re).max(initial=0.0))
        gap = mu
        if rd_n <= tol * scale and rp_n <= tol * scale and mu <= tol:
            status = OPTIMAL
            break
        # primal infeasibility certificate: G'z + A'y ~ 0 while h'z + b'y < 0
        if mi and it > 5:
            zn = np.abs(z).max() + np.abs(y).max(initial=0.0)
            cert = np.abs(G.T @ z + A.T @ y).max(initial=0.0)
            if zn > 1e6 and cert <= 1e-6 * zn and (h @ z + b @ y) < -1e-6 * zn:
                status = INFEASIBLE
                break

        W = z / s
        Hh = H + G.T @ (W[:, None] * G)
        if me:
            KKT = np.block([[Hh, A.T], [A, np.zeros((me, me))]])
        else:
            KKT = Hh

        def newton(rc):
            rhs_x = -rd - G.T @ (W * rp) + G.T @ (rc / s)
            if me:
                sol = np.linalg.solve(KKT, np.concatenate([rhs_x, -re]))
                dx, dy = sol[:nv], sol[nv:]
            else:
                dx, dy = np.linalg.solve(KKT, rhs_x), np.zeros(0)
            dz = W * (G @ dx + rp) - rc / s
            ds = -rp - G @ dx
            return dx, dy, ds, dz

        try:
            # predictor
            dx, dy, ds, dz = newton(s * z)
            a_aff = min(_max_step(s, ds), _max_step(z, dz))
            mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / mi if mi else 0.0
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            # corrector
            dx, dy, ds, dz = newton(s * z + ds * dz - sigma * mu)
        except np.linalg.LinAlgError as exc:
            raise QpError(f"singular Newton system at iteration {it}") from exc
        a = 0.99 * min(_max_step(s, ds), _max_step(z, dz))
        a = min(a, 1.0)
        x = x + a * dx
        y = y + a * dy
        s = s + a * ds
        z = z + a * dz
        s = np.maximum(s, 1e-300)
        z = np.maximum(z, 1e-300)

    polished = False
    if polish and status in (OPTIMAL, MAX_ITER):
        out = _polish(prob, H, q, G, h, A, b, s, z, tol)
        if out is not None:
            x, z, y = out
            polished = True
            if status == MAX_ITER:
                status = OPTIMAL

    z_full = np.zeros(prob.G.shape[0])
    z_full[keep] = z
    # multipliers of merged pairs back onto their two inequality rows
    y_pin = y[prob.A.shape[0] :]
    for (r, s_, ratio), yk in zip(pairs, y_pin):
        z_full[r] = max(yk, 0.0)
        z_full[s_] = max(-yk, 0.0) / ratio
    return QpSolution(
        x=x,
        objective=prob.objective(x),
        status=status,
        iterations=it,
        primal_residual=float(rp_n),
        dual_residual=float(rd_n),
        gap=float(gap),
        z=z_full,
        polished=polished,
    )


def _polish(prob, H, q, G, h, A, b, s, z, tol):
    """Re-solve with the inferred active set as equalities.

    Returns ``(x, z, y)`` or None if the candidate is rejected."""
    nv = H.shape[0]
    active = z > s
    Ga = np.vstack([A, G[active]])
    ga = np.concatenate([b, h[active]])
    na = Ga.shape[0]
    KKT = np.block([[H, Ga.T], [Ga, np.zeros((na, na))]])
    rhs = np.concatenate([-q, ga])
    sol = np.linalg.lstsq(KKT, rhs, rcond=None)[0]
    x = sol[:nv]
    lam = sol[nv + A.shape[0]:]
    feas_tol = 10 * tol * (1.0 + np.abs(prob.w).max(initial=0.0))
    if np.any(G @ x - h > feas_tol) or np.any(np.abs(A @ x - b) > feas_tol):
        return None
    stat = H @ x + q + Ga.T @ sol[nv:]
    if np.abs(stat).max(initial=0.0) > 1e-6 * (1.0 + np.abs(q).max(initial=0.0)):
        return None
    if lam.size and lam.min() < -1e-6 * (1.0 + np.abs(lam).max()):
        return None
    z_new = np.zeros(G.shape[0])
    z_new[active] = np.maximum(lam, 0.0)
    return x, z_new, sol[nv : nv + A.shape[0]]


def kkt_residuals(prob: QpProblem, x: np.ndarray, z: np.ndarray) -> tuple[float, float]:
    """Primal violation and stationarity residual ``|2Kx + q + G'z|`` (no equalities)."""
    primal = max(0.0, float(np.max(prob.G @ x - prob.w, initial=0.0)))
    stat = float(np.abs(2.0 * prob.K @ x + prob.q + prob.G.T @ z).max(initial=0.0))
    return primal, stat

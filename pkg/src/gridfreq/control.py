"""Real-time control path: stability filter, low-pass filter and the
direct-feedback barrier layer, plus their composition."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .network import NetworkModel
from .plant import SystemState

BARRIER_CLAMP = 1e12


@dataclass(frozen=True)
class SafetySpec:
    """Frequency band, activation thresholds and gains per monitored bus.

    Scalars apply to every monitored bus; mappings are keyed by bus id.
    """

    lower: Mapping[int, float] | float = -0.2
    upper: Mapping[int, float] | float = 0.2
    lower_thr: Mapping[int, float] | float = -0.1
    upper_thr: Mapping[int, float] | float = 0.1
    gamma_lower: Mapping[int, float] | float = 1.0
    gamma_upper: Mapping[int, float] | float = 1.0

    def arrays(self, buses) -> dict[str, np.ndarray]:
        out = {}
        for name in ("lower", "upper", "lower_thr", "upper_thr", "gamma_lower", "gamma_upper"):
            v = getattr(self, name)
            out[name] = np.array([float(v) if np.isscalar(v) else float(v[i]) for i in buses])
        return out

    def validate(self, buses) -> None:
        a = self.arrays(buses)
        ok = (a["lower"] < a["lower_thr"]) & (a["lower_thr"] < 0) & (0 < a["upper_thr"]) & (a["upper_thr"] < a["upper"])
        if not np.all(ok):
            bad = [b for b, good in zip(buses, ok) if not good]
            raise ValueError(f"thresholds must satisfy lower < lower_thr < 0 < upper_thr < upper (buses {bad})")
        if np.any(a["gamma_lower"] <= 0) or np.any(a["gamma_upper"] <= 0):
            raise ValueError("barrier gains must be positive")


def stability_filter(alpha_mpc: np.ndarray, u_mpc: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Clip ``u_mpc`` into ``[-eps |alpha_mpc|, eps |alpha_mpc|]`` elementwise.

    ``eps`` is per entry; entries off the controlled set carry zero
    ``alpha_mpc`` and so come out as zero.
    """
    band = eps * np.abs(alpha_mpc)
    return np.minimum(np.maximum(u_mpc, -band), band)


def filter_condition_slack(alpha_mpc: np.ndarray, uhat: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """``eps a^2 - a uhat`` evaluated as ``(eps |a|) |a| - a uhat`` (never negative
    for filtered signals, also in floating point)."""
    a = np.abs(alpha_mpc)
    return (eps * a) * a - alpha_mpc * uhat


def lowpass_derivative(alpha_mpc: np.ndarray, omega: np.ndarray, uhat: np.ndarray, tau: np.ndarray, controlled: np.ndarray) -> np.ndarray:
    """Filter dynamics ``-alpha/T_i - omega_i + uhat_i`` on the controlled
    entries (boolean mask or index array ``controlled``); zero elsewhere."""
    tau = np.asarray(tau, dtype=float)
    out = np.zeros_like(np.asarray(alpha_mpc, dtype=float))
    idx = np.flatnonzero(controlled) if np.asarray(controlled).dtype == bool else np.asarray(controlled)
    if np.any(tau[idx] <= 0):
        raise ValueError("filter time constants must be positive")
    out[idx] = -alpha_mpc[idx] / tau[idx] - omega[idx] + uhat[idx]
    return out


def barrier_feedback(omega: np.ndarray, v: np.ndarray, lim: Mapping[str, np.ndarray]) -> np.ndarray:
    """Direct-feedback law on the monitored buses, given ``v`` per bus.

    Above the upper threshold the output is ``min(0, barrier + v)``, below
    the lower one ``max(0, barrier + v)``, zero in between. The barrier term
    is clamped at ``BARRIER_CLAMP`` so it stays finite as omega approaches
    a threshold; the clamp never changes the min/max outcome.
    """
    hi = omega > lim["upper_thr"]
    lo = omega < lim["lower_thr"]
    out = np.zeros_like(omega)
    if np.any(hi):
        den = omega[hi] - lim["upper_thr"][hi]
        bar = np.minimum(lim["gamma_upper"][hi] * (lim["upper"][hi] - omega[hi]) / den, BARRIER_CLAMP)
        out[hi] = np.minimum(0.0, bar + v[hi])
    if np.any(lo):
        den = lim["lower_thr"][lo] - omega[lo]
        bar = np.minimum(lim["gamma_lower"][lo] * (lim["lower"][lo] - omega[lo]) / den, BARRIER_CLAMP)
        out[lo] = np.maximum(0.0, bar + v[lo])
    return out


def top_layer(net: NetworkModel, s: SystemState, p: np.ndarray, spec: SafetySpec) -> np.ndarray:
    """Direct-feedback control ``alpha_df`` (n-vector, zero off the monitored set)."""
    idx = net.monitored_idx
    v = (
        net.damping[idx] * s.omega[idx]
        + net.incidence.T[idx] @ s.f
        - np.asarray(p)[idx]
        - s.alpha_mpc[idx]
    )
    out = np.zeros(net.n)
    out[idx] = barrier_feedback(s.omega[idx], v, spec.arrays(net.monitored))
    return out


def compose(alpha_mpc: np.ndarray, alpha_df: np.ndarray) -> np.ndarray:
    return alpha_mpc + alpha_df

"""Scenario files: JSON description of a network, controller and disturbance.

Relative paths inside a scenario file resolve against the file's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .control import SafetySpec
from .mpc import MpcConfig
from .network import NetworkError, NetworkModel, Partition, load_network, validate_partition, whole_network_partition
from .plant import InjectionProfile, PiecewiseProfile, scaled_load_profile
from .regional import SamplingSchedule
from .sim import Scenario

_PER_BUS = ("weights", "epsilon", "filter_tau", "lower", "upper")
_SAFETY_KEYS = ("lower", "upper", "lower_thr", "upper_thr", "gamma_lower", "gamma_upper")
_MPC_KEYS = _PER_BUS + ("penalty_d", "horizon", "step", "qp_tol", "qp_max_iter")


class ScenarioError(ValueError):
    pass


def bundled_path(name: str = "ieee39_scenario.json") -> Path:
    return Path(str(resources.files("gridfreq") / "data" / name))


@dataclass
class LoadedScenario:
    net: NetworkModel
    scenario: Scenario
    p0: np.ndarray
    raw: dict
    path: Path | None = None

    def with_mode(self, mode: str, enable_at: float | None = None) -> "LoadedScenario":
        sc = replace(self.scenario, mode=mode)
        if enable_at is not None:
            sc = replace(sc, enable_at=float(enable_at))
        return replace(self, scenario=sc)

    def with_penalties(self, penalties) -> "LoadedScenario":
        return replace(self, scenario=replace(self.scenario, penalties=list(penalties)))

    def with_(self, **kw) -> "LoadedScenario":
        return replace(self, scenario=replace(self.scenario, **kw))


def _per_bus(value: Any, key: str):
    if isinstance(value, dict):
        try:
            return {int(k): float(v) for k, v in value.items()}
        except (TypeError, ValueError):
            raise ScenarioError(f"{key}: per-bus values must map bus ids to numbers") from None
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    raise ScenarioError(f"{key}: expected a number or a bus -> number mapping")


def _check_buses(value, allowed, key: str) -> None:
    if isinstance(value, dict):
        bad = sorted(set(value) - set(allowed))
        if bad:
            raise ScenarioError(f"{key}: buses {bad} are not in the required set")
        missing = sorted(set(allowed) - set(value))
        if missing:
            raise ScenarioError(f"{key}: no value for buses {missing}")


def mpc_config(d: dict, net: NetworkModel) -> MpcConfig:
    unknown = set(d) - set(_MPC_KEYS)
    if unknown:
        raise ScenarioError(f"mpc: unknown keys {sorted(unknown)}")
    if "weights" not in d:
        raise ScenarioError("mpc: weights are required")
    kw = {}
    for k, v in d.items():
        if k in _PER_BUS:
            kw[k] = _per_bus(v, f"mpc.{k}")
            scope = net.monitored if k in ("lower", "upper") else net.controlled
            _check_buses(kw[k], scope, f"mpc.{k}")
        elif k == "qp_max_iter":
            kw[k] = int(v)
        else:
            kw[k] = float(v)
    cfg = MpcConfig(**kw)
    try:
        cfg.validate(net)
    except ValueError as exc:
        raise ScenarioError(f"mpc: {exc}") from None
    return cfg


def safety_spec(d: dict, net: NetworkModel) -> SafetySpec:
    unknown = set(d) - set(_SAFETY_KEYS)
    if unknown:
        raise ScenarioError(f"safety: unknown keys {sorted(unknown)}")
    kw = {k: _per_bus(v, f"safety.{k}") for k, v in d.items()}
    for k, v in kw.items():
        _check_buses(v, net.monitored, f"safety.{k}")
    spec = SafetySpec(**kw)
    try:
        spec.validate(net.monitored)
    except ValueError as exc:
        raise ScenarioError(f"safety: {exc}") from None
    return spec


def disturbance(d: dict, net: NetworkModel, p0: np.ndarray) -> InjectionProfile:
    kind = d.get("kind")
    if kind == "load-ramp":
        buses = [int(i) for i in d.get("buses", net.ids)]
        bad = [i for i in buses if i not in net.index]
        if bad:
            raise ScenarioError(f"disturbance: unknown buses {bad}")
        pars = {k: float(d[k]) for k in ("amplitude", "ramp", "hold", "end") if k in d}
        if not 0 <= pars.get("ramp", 25.0) <= pars.get("hold", 125.0) <= pars.get("end", 150.0):
            raise ScenarioError("disturbance: need 0 <= ramp <= hold <= end")
        return scaled_load_profile(net, p0, buses, **pars)
    if kind == "piecewise":
        segs = d.get("segments") or []
        starts, values = [], []
        for s in segs:
            starts.append(float(s["start"]))
            vec = p0.copy()
            for k, v in (s.get("injections") or {}).items():
                if int(k) not in net.index:
                    raise ScenarioError(f"disturbance: unknown bus {k}")
                vec[net.index[int(k)]] = float(v)
            values.append(vec)
        if not segs:
            return InjectionProfile(p0)
        return PiecewiseProfile(starts, values)
    if kind in (None, "none"):
        return InjectionProfile(p0)
    raise ScenarioError(f"disturbance: unknown kind {kind!r}")


def _partition(raw, net: NetworkModel, base: Path) -> Partition:
    if raw is None:
        return whole_network_partition(net)
    data = json.loads((base / raw).read_text()) if isinstance(raw, str) else raw
    return validate_partition(net, data["regions"], data.get("edges"))


def load_scenario(path: str | Path | None = None, data: dict | None = None) -> LoadedScenario:
    """Parse and validate a scenario file (bundled 39-bus scenario by default)."""
    if data is None:
        path = Path(path) if path is not None else bundled_path()
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: {exc}") from None
        base = path.parent
    else:
        base = Path(path).parent if path is not None else Path(".")
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    for key in ("network", "mpc", "t_end"):
        if key not in data:
            raise ScenarioError(f"missing required key {key!r}")
    try:
        net_raw = data["network"]
        if isinstance(net_raw, str):
            net_path = base / net_raw
            net = load_network(net_path)
            net_data = json.loads(net_path.read_text())
        else:
            from .network import build_network

            net_data = net_raw
            net = build_network(net_data["nodes"], net_data["edges"], net_data.get("controlled", ()), net_data.get("monitored", ()))
        p0 = np.array([float(nd.get("p0", 0.0)) for nd in net_data["nodes"]])
        partition = _partition(data.get("partition"), net, base)
    except NetworkError as exc:
        raise ScenarioError(str(exc)) from None
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"malformed network or partition: {exc}") from None

    cfg = mpc_config(data["mpc"], net)
    spec = safety_spec(data.get("safety", {}), net)
    try:
        profile = disturbance(data.get("disturbance", {"kind": "none"}), net, p0)
    except ValueError as exc:
        raise ScenarioError(f"disturbance: {exc}") from None

    schedules = None
    if "schedules" in data:
        schedules = [SamplingSchedule(float(s.get("period", 1.0)), float(s.get("offset", 0.0))) for s in data["schedules"]]
        if len(schedules) != len(partition):
            raise ScenarioError("one sampling schedule per region required")
    penalties = data.get("penalties")
    if penalties is not None:
        if len(penalties) != len(partition):
            raise ScenarioError("one penalty per region required")
        penalties = [None if d is None else float(d) for d in penalties]
        if any(d is not None and d < 0 for d in penalties):
            raise ScenarioError("penalties must be nonnegative")

    sc = Scenario(
        profile=profile,
        t_end=float(data["t_end"]),
        mpc=cfg,
        safety=spec,
        h=float(data.get("h", 1e-3)),
        partition=partition,
        schedules=schedules,
        penalties=penalties,
        enable_at=float(data.get("enable_at", 0.0)),
        record_stride=int(data.get("record_stride", 1)),
    )
    try:
        sc.validate(net)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    return LoadedScenario(net, sc, p0, data, Path(path) if path is not None else None)

"""Power-network graph, incidence structure and operator partitions.

Bus identifiers are whatever the dataset uses (1-based for IEEE-39);
every array in :class:`NetworkModel` is indexed by internal position,
with ``net.index[bus_id]`` giving that position.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class NetworkError(ValueError):
    """Raised for malformed networks or partitions."""


@dataclass(frozen=True, eq=False)
class NetworkModel:
    ids: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    susceptance: np.ndarray
    inertia: np.ndarray
    damping: np.ndarray
    controlled: tuple[int, ...]
    monitored: tuple[int, ...]
    incidence: np.ndarray = field(repr=False)
    index: Mapping[int, int] = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def Yb(self) -> np.ndarray:
        return np.diag(self.susceptance)

    @property
    def controlled_idx(self) -> np.ndarray:
        return np.array([self.index[i] for i in self.controlled], dtype=int)

    @property
    def monitored_idx(self) -> np.ndarray:
        return np.array([self.index[i] for i in self.monitored], dtype=int)

    def edge_position(self, a: int, b: int) -> int:
        """Row of edge ``{a, b}`` in the incidence matrix, either orientation."""
        for k, (u, v) in enumerate(self.edges):
            if (u, v) == (a, b) or (u, v) == (b, a):
                return k
        raise KeyError((a, b))

    def laplacian(self) -> np.ndarray:
        D = self.incidence
        return D.T @ (self.susceptance[:, None] * D)


def _incidence(ids: Sequence[int], edges: Sequence[tuple[int, int]]) -> np.ndarray:
    index = {b: i for i, b in enumerate(ids)}
    D = np.zeros((len(edges), len(ids)))
    for k, (a, b) in enumerate(edges):
        D[k, index[a]] = 1.0
        D[k, index[b]] = -1.0
    return D


def _connected(ids: Sequence[int], edges: Iterable[tuple[int, int]]) -> bool:
    adj: dict[int, list[int]] = {i: [] for i in ids}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = {ids[0]}
    queue = deque([ids[0]])
    while queue:
        for nb in adj[queue.popleft()]:
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return len(seen) == len(ids)


def _assemble(
    ids: Sequence[int],
    edges: Sequence[tuple[int, int]],
    b: Sequence[float],
    M: Sequence[float],
    E: Sequence[float],
    controlled: Iterable[int],
    monitored: Iterable[int],
    require_connected: bool,
) -> NetworkModel:
    ids = tuple(int(i) for i in ids)
    if not ids:
        raise NetworkError("network has no nodes")
    if len(set(ids)) != len(ids):
        raise NetworkError("duplicate node ids")
    index = {bus: i for i, bus in enumerate(ids)}
    edges = tuple((int(a), int(c)) for a, c in edges)
    seen: set[frozenset[int]] = set()
    for a, c in edges:
        if a not in index or c not in index:
            raise NetworkError(f"edge ({a},{c}) references unknown node")
        if a == c:
            raise NetworkError(f"self-loop at node {a}")
        key = frozenset((a, c))
        if key in seen:
            raise NetworkError(f"duplicate edge ({a},{c})")
        seen.add(key)
    b = np.asarray(b, dtype=float)
    M = np.asarray(M, dtype=float)
    E = np.asarray(E, dtype=float)
    if b.shape != (len(edges),) or M.shape != (len(ids),) or E.shape != (len(ids),):
        raise NetworkError("parameter arrays do not match node/edge counts")
    if np.any(b <= 0) or np.any(M <= 0) or np.any(E <= 0):
        raise NetworkError("susceptances, inertias and dampings must be strictly positive")
    controlled = set(int(i) for i in controlled)
    monitored = set(int(i) for i in monitored)
    unknown = sorted((controlled | monitored) - set(index))
    if unknown:
        raise NetworkError(f"controlled/monitored nodes {unknown} not in network")
    controlled = tuple(sorted(controlled, key=index.get))
    monitored = tuple(sorted(monitored, key=index.get))
    if not set(monitored) <= set(controlled):
        extra = sorted(set(monitored) - set(controlled))
        raise NetworkError(f"monitored nodes {extra} are not controlled")
    if require_connected and not _connected(ids, edges):
        raise NetworkError("network graph is disconnected")
    D = _incidence(ids, edges)
    for arr in (D, b, M, E):
        arr.setflags(write=False)
    return NetworkModel(ids, edges, b, M, E, controlled, monitored, D, index)


def build_network(
    nodes: Sequence[Mapping],
    edges: Sequence[Mapping],
    controlled: Iterable[int] = (),
    monitored: Iterable[int] = (),
) -> NetworkModel:
    """Validate and assemble a network.

    ``nodes`` are mappings with keys ``id``, ``M``, ``E``; ``edges`` carry
    ``from``, ``to``, ``b``. The ``from`` end of each edge becomes its
    positive end in the incidence matrix.
    """
    if not nodes or not edges:
        raise NetworkError("node and edge lists must be nonempty")
    try:
        ids = [nd["id"] for nd in nodes]
        M = [nd["M"] for nd in nodes]
        E = [nd["E"] for nd in nodes]
        pairs = [(e["from"], e["to"]) for e in edges]
        b = [e["b"] for e in edges]
    except KeyError as exc:
        raise NetworkError(f"missing parameter {exc}") from None
    return _assemble(ids, pairs, b, M, E, controlled, monitored, require_connected=True)


def load_network(path: str | Path) -> NetworkModel:
    data = json.loads(Path(path).read_text())
    return build_network(
        data["nodes"], data["edges"], data.get("controlled", ()), data.get("monitored", ())
    )


def network_to_dict(net: NetworkModel) -> dict:
    return {
        "nodes": [
            {"id": i, "M": float(net.inertia[k]), "E": float(net.damping[k])}
            for k, i in enumerate(net.ids)
        ],
        "edges": [
            {"from": a, "to": b, "b": float(net.susceptance[k])}
            for k, (a, b) in enumerate(net.edges)
        ],
        "controlled": list(net.controlled),
        "monitored": list(net.monitored),
    }


@dataclass(frozen=True)
class Region:
    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    boundary: tuple[tuple[int, int], ...]
    controlled: tuple[int, ...]
    monitored: tuple[int, ...]


@dataclass(frozen=True)
class Partition:
    regions: tuple[Region, ...]

    def __len__(self) -> int:
        return len(self.regions)

    def __iter__(self):
        return iter(self.regions)

    def __getitem__(self, k: int) -> Region:
        return self.regions[k]

    def owner(self, node: int) -> int:
        """Region index hosting controlled ``node``."""
        for k, r in enumerate(self.regions):
            if node in r.controlled:
                return k
        raise KeyError(node)

    @property
    def region_count(self) -> int:
        return len(self.regions)


def validate_partition(
    net: NetworkModel,
    regions: Sequence[Iterable[int]] | Partition,
    region_edges: Sequence[Iterable[tuple[int, int]]] | None = None,
) -> Partition:
    """Check regions against the partition rules and derive their edge sets.

    Every controlled node must sit in exactly one region. Regions are induced
    subgraphs, so internal edges are derived from the node sets; if
    ``region_edges`` is given, each listed set must equal the induced one.
    """
    if isinstance(regions, Partition):
        regions = [r.nodes for r in regions.regions]
    node_sets = []
    for k, r in enumerate(regions):
        r = [int(i) for i in r]
        if not r:
            raise NetworkError(f"region {k + 1} is empty")
        unknown = [i for i in r if i not in net.index]
        if unknown:
            raise NetworkError(f"region {k + 1} has unknown nodes {unknown}")
        if len(set(r)) != len(r):
            raise NetworkError(f"region {k + 1} lists a node twice")
        node_sets.append(tuple(sorted(r, key=net.index.get)))
    if not node_sets:
        raise NetworkError("partition has no regions")

    owners: dict[int, int] = {}
    for k, ns in enumerate(node_sets):
        for i in ns:
            if i in net.controlled:
                if i in owners:
                    raise NetworkError(
                        f"controlled node {i} shared by regions {owners[i] + 1} and {k + 1}"
                    )
                owners[i] = k
    uncovered = [i for i in net.controlled if i not in owners]
    if uncovered:
        raise NetworkError(f"controlled nodes {uncovered} are in no region")

    out = []
    for k, ns in enumerate(node_sets):
        inside = set(ns)
        internal = tuple(e for e in net.edges if e[0] in inside and e[1] in inside)
        boundary = tuple(e for e in net.edges if (e[0] in inside) != (e[1] in inside))
        if region_edges is not None:
            given = {frozenset(e) for e in region_edges[k]}
            if given != {frozenset(e) for e in internal}:
                raise NetworkError(f"region {k + 1} does not induce its listed edge set")
        out.append(
            Region(
                nodes=ns,
                edges=internal,
                boundary=boundary,
                controlled=tuple(i for i in ns if i in net.controlled),
                monitored=tuple(i for i in ns if i in net.monitored),
            )
        )
    return Partition(tuple(out))


def whole_network_partition(net: NetworkModel) -> Partition:
    return validate_partition(net, [net.ids])


def load_partition(net: NetworkModel, path: str | Path) -> Partition:
    data = json.loads(Path(path).read_text())
    return validate_partition(net, data["regions"])


def subnetwork(net: NetworkModel, region: Region) -> NetworkModel:
    """Region as a standalone model (induced subgraph, no connectivity check)."""
    pos = [net.index[i] for i in region.nodes]
    rows = [net.edges.index(e) for e in region.edges]
    return _assemble(
        region.nodes,
        region.edges,
        net.susceptance[rows],
        net.inertia[pos],
        net.damping[pos],
        region.controlled,
        region.monitored,
        require_connected=False,
    )

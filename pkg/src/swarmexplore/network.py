"""Range-gated communication: link graph, payload codecs, delayed delivery.

Agents in range exchange LiDAR scans every step and full map snapshots on
(re)connection. Delivery is delayed by payload size over per-link
bandwidth with a one-step floor; events on links that break before
delivery are dropped. multi_hop floods delivered events onward with
deduplication by (origin, kind, created_step).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .sensing import LidarScan

MODES = ("off", "one_hop", "multi_hop")

KIND_LIDAR = "lidar_share"
KIND_MAP = "map_share"
_KIND_ORDER = {KIND_LIDAR: 0, KIND_MAP: 1}


@dataclass(frozen=True)
class CommConfig:
    mode: str = "one_hop"
    range: float = 4.0
    bandwidth: float = 250000.0  # bytes/second per link; inf supported
    max_hops: int = 0  # multi_hop only; 0 means number of agents

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.range <= 0:
            raise ValueError("range must be positive")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")


@dataclass(frozen=True)
class CommGraph:
    step: int
    n_agents: int
    edges: frozenset  # of (i, j) pairs with i < j

    def has_edge(self, i: int, j: int) -> bool:
        if i == j:
            return False
        return (min(i, j), max(i, j)) in self.edges

    def neighbors(self, i: int):
        out = [b if a == i else a for a, b in self.edges if i in (a, b)]
        return sorted(out)


def build_graph(positions, config: CommConfig, step: int = 0) -> CommGraph:
    """Symmetric, irreflexive adjacency by the boundary-inclusive range rule."""
    n = len(positions)
    if n < 1:
        raise ValueError("at least one agent required")
    edges = set()
    if config.mode != "off":
        for i in range(n):
            xi, yi = positions[i][0], positions[i][1]
            for j in range(i + 1, n):
                dx = xi - positions[j][0]
                dy = yi - positions[j][1]
                if math.hypot(dx, dy) <= config.range:
                    edges.add((i, j))
    return CommGraph(step=step, n_agents=n, edges=frozenset(edges))


@dataclass
class CommEvent:
    kind: str
    sender: int
    receiver: int
    payload_bytes: int
    created_step: int
    deliver_step: int
    hop_count: int
    origin: int
    origin_step: int  # creation step of the original event; dedup key part
    payload: bytes
    carriers: tuple = ()


# --- payload codecs (bit-exact; these define the byte metrics) ---

_LIDAR_HEADER = struct.Struct("<BBHI")  # kind, version, ray_count, created_step
_POSE = struct.Struct("<fff")


def encode_lidar_payload(scan: LidarScan, created_step: int) -> bytes:
    n = scan.ranges.shape[0]
    header = _LIDAR_HEADER.pack(1, 1, n, created_step & 0xFFFFFFFF)
    pose = _POSE.pack(scan.origin[0], scan.origin[1], scan.origin_heading)
    ranges = np.asarray(scan.ranges, dtype="<f4").tobytes()
    flags = np.asarray(scan.hit_flags, dtype=np.uint8).tobytes()
    return header + pose + ranges + flags


def lidar_payload_size(ray_count: int) -> int:
    return _LIDAR_HEADER.size + _POSE.size + 5 * ray_count


def decode_lidar_payload(data: bytes, field_of_view: float, max_range: float) -> LidarScan:
    _, _, n, _ = _LIDAR_HEADER.unpack_from(data, 0)
    off = _LIDAR_HEADER.size
    x, y, heading = _POSE.unpack_from(data, off)
    off += _POSE.size
    ranges = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float64)
    off += 4 * n
    flags = np.frombuffer(data, dtype=np.uint8, count=n, offset=off).astype(bool)
    return LidarScan(
        origin=(float(x), float(y)),
        origin_heading=float(heading),
        ranges=ranges,
        hit_flags=flags,
        field_of_view=field_of_view,
        max_range=max_range,
    )


def delay_steps(payload_bytes: int, config: CommConfig, dt: float) -> int:
    """Delivery latency in steps: size over link bandwidth, floored at one."""
    if math.isinf(config.bandwidth):
        return 1
    return max(1, int(math.ceil(payload_bytes / (config.bandwidth * dt))))


@dataclass
class MessageLayer:
    """Owns the in-flight event queue and per-episode traffic accounting."""

    config: CommConfig
    n_agents: int
    dt: float
    pending: list = field(default_factory=list)
    prev_graph: CommGraph = None
    bytes_sent: dict = field(default_factory=lambda: {KIND_LIDAR: 0, KIND_MAP: 0})
    events_dropped: int = 0
    _seen: list = None

    def __post_init__(self):
        if self.prev_graph is None:
            self.prev_graph = CommGraph(step=-1, n_agents=self.n_agents, edges=frozenset())
        self._seen = [set() for _ in range(self.n_agents)]

    def _max_hops(self) -> int:
        return self.config.max_hops if self.config.max_hops > 0 else self.n_agents

    def _enqueue(
        self, kind, sender, receiver, payload, created_step, hop_count, origin, origin_step, carriers
    ):
        event = CommEvent(
            kind=kind,
            sender=sender,
            receiver=receiver,
            payload_bytes=len(payload),
            created_step=created_step,
            deliver_step=created_step + delay_steps(len(payload), self.config, self.dt),
            hop_count=hop_count,
            origin=origin,
            origin_step=origin_step,
            payload=payload,
            carriers=carriers,
        )
        self.bytes_sent[kind] += event.payload_bytes
        self.pending.append(event)

    def tick(self, step: int, graph: CommGraph, lidar_payloads, map_snapshot_fn):
        """Advance one step; returns delivered events in deterministic order.

        lidar_payloads: per-agent encoded scan bytes for this step.
        map_snapshot_fn(i): encoded map snapshot for agent i (called only
        for reconnection edges, at most once per agent per tick).
        """
        # drop in-flight events whose link no longer exists
        kept = []
        for ev in self.pending:
            if graph.has_edge(ev.sender, ev.receiver):
                kept.append(ev)
            else:
                self.events_dropped += 1
        self.pending = kept

        if self.config.mode != "off":
            edges = sorted(graph.edges)
            snapshots = {}
            for i, j in edges:
                for a, b in ((i, j), (j, i)):
                    self._enqueue(
                        KIND_LIDAR, a, b, lidar_payloads[a], step, 1, a, step, carriers=(a,)
                    )
                if not self.prev_graph.has_edge(i, j):
                    for a, b in ((i, j), (j, i)):
                        if a not in snapshots:
                            snapshots[a] = map_snapshot_fn(a)
                        self._enqueue(
                            KIND_MAP, a, b, snapshots[a], step, 1, a, step, carriers=(a,)
                        )

        due = [ev for ev in self.pending if ev.deliver_step <= step]
        self.pending = [ev for ev in self.pending if ev.deliver_step > step]
        due.sort(
            key=lambda ev: (
                ev.deliver_step,
                ev.sender,
                ev.receiver,
                _KIND_ORDER[ev.kind],
                ev.origin_step,
                ev.origin,
            )
        )
        delivered = []
        for ev in due:
            key = (ev.origin, ev.kind, ev.origin_step)
            if key in self._seen[ev.receiver]:
                continue
            self._seen[ev.receiver].add(key)
            delivered.append(ev)
            if self.config.mode == "multi_hop" and ev.hop_count < self._max_hops():
                carriers = ev.carriers + (ev.receiver,)
                for nbr in graph.neighbors(ev.receiver):
                    if nbr in carriers:
                        continue
                    self._enqueue(
                        ev.kind,
                        ev.receiver,
                        nbr,
                        ev.payload,
                        step,
                        ev.hop_count + 1,
                        ev.origin,
                        ev.origin_step,
                        carriers,
                    )
        self.prev_graph = graph
        return delivered

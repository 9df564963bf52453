"""Virtual-time star-topology message bus.

All cross-node traffic travels between the coordinator and an agent; there
are no agent-to-agent links, and an attempt to use one is a hard failure.
Each directed link owns an RNG stream derived from the scenario seed and the
link's name, so adding links never perturbs the draws of existing ones.
Delivery is a deterministic total order: (deliver_time, seq, src, dst).
"""

from __future__ import annotations

import heapq
import zlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidInputError, TopologyViolationError
from .logfmt import fmt9

WATCHER_ID = "watcher"


class MsgType(Enum):
    POSE_UPDATE = "pose"
    SETPOINT_UPDATE = "setpoint"
    CONSTRAINT_UPDATE = "constraints"
    LANDING_SIGNAL = "landing_signal"
    TOUCHDOWN_ACK = "touchdown_ack"


@dataclass
class Message:
    msg_type: MsgType
    src: str
    dst: str
    send_time: float
    deliver_time: float
    seq: int          # strictly increasing per (src, dst)
    payload: object = None


@dataclass(frozen=True)
class LinkModel:
    base_latency: float = 0.0
    jitter: float = 0.0        # uniform half-width added to the latency
    drop_prob: float = 0.0

    def validate(self) -> None:
        if self.base_latency < 0 or self.jitter < 0:
            raise InvalidInputError("latency and jitter must be non-negative")
        if not 0.0 <= self.drop_prob < 1.0:
            raise InvalidInputError("drop_prob must be in [0, 1)")


@dataclass
class LinkStats:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    bytes: int = 0


def _payload_bytes(payload) -> int:
    """Nominal wire size: 8 bytes per scalar, strings as utf-8, 16B header."""
    if payload is None:
        return 16
    if isinstance(payload, (int, float)):
        return 16 + 8
    if isinstance(payload, str):
        return 16 + len(payload.encode())
    if isinstance(payload, np.ndarray):
        return 16 + payload.size * 8
    if isinstance(payload, (tuple, list)):
        return 16 + sum(_payload_bytes(item) - 16 for item in payload)
    nbytes = getattr(payload, "wire_bytes", None)
    if callable(nbytes):
        return 16 + nbytes()
    return 16 + 64


class StarBus:
    """Event-queued message transport restricted to agent <-> watcher links."""

    def __init__(self, agent_ids: list[str], link: LinkModel, seed: int,
                 trace: list[str] | None = None):
        link.validate()
        self.link = link
        self.agents = set(agent_ids)
        self.trace = trace
        self._seq: dict[tuple[str, str], int] = {}
        self._rng: dict[tuple[str, str], np.random.Generator] = {}
        self._stats: dict[str, LinkStats] = {}
        self._queue: list[tuple[float, int, str, str, Message]] = []
        self._seed = seed

    def _check_link(self, src: str, dst: str) -> str:
        """Returns the agent endpoint naming the star link."""
        if src == WATCHER_ID and dst in self.agents:
            return dst
        if dst == WATCHER_ID and src in self.agents:
            return src
        raise TopologyViolationError(
            f"link {src} -> {dst} is not part of the star topology"
        )

    def _link_rng(self, src: str, dst: str) -> np.random.Generator:
        key = (src, dst)
        rng = self._rng.get(key)
        if rng is None:
            tag = zlib.crc32(f"{src}->{dst}".encode())
            rng = np.random.default_rng(np.random.SeedSequence([self._seed, tag]))
            self._rng[key] = rng
        return rng

    def send(self, msg_type: MsgType, src: str, dst: str, payload,
             now: float) -> Message | None:
        """Schedule a message; returns None when the link model drops it."""
        agent = self._check_link(src, dst)
        stats = self._stats.setdefault(agent, LinkStats())
        key = (src, dst)
        seq = self._seq.get(key, 0) + 1
        self._seq[key] = seq
        rng = self._link_rng(src, dst)
        stats.sent += 1
        stats.bytes += _payload_bytes(payload)
        if self.link.drop_prob > 0.0 and rng.uniform() < self.link.drop_prob:
            stats.dropped += 1
            if self.trace is not None:
                self.trace.append(f"drop t={fmt9(now)} src={src} dst={dst} "
                                  f"type={msg_type.value} seq={seq}")
            return None
        latency = self.link.base_latency
        if self.link.jitter > 0.0:
            latency += rng.uniform(-self.link.jitter, self.link.jitter)
        deliver = max(now, now + latency)
        msg = Message(msg_type=msg_type, src=src, dst=dst, send_time=now,
                      deliver_time=deliver, seq=seq, payload=payload)
        heapq.heappush(self._queue, (deliver, seq, src, dst, msg))
        if self.trace is not None:
            self.trace.append(f"send t={fmt9(now)} src={src} dst={dst} "
                              f"type={msg_type.value} seq={seq} due={fmt9(deliver)}")
        return msg

    def deliver_due(self, now: float) -> list[Message]:
        """Pop every message due by `now` in (deliver_time, seq, link) order."""
        out = []
        while self._queue and self._queue[0][0] <= now:
            _, _, _, _, msg = heapq.heappop(self._queue)
            self._stats[self._check_link(msg.src, msg.dst)].delivered += 1
            if self.trace is not None:
                self.trace.append(f"deliver t={fmt9(now)} src={msg.src} dst={msg.dst} "
                                  f"type={msg.msg_type.value} seq={msg.seq} "
                                  f"sent={fmt9(msg.send_time)}")
            out.append(msg)
        return out

    def pending(self) -> int:
        return len(self._queue)

    def link_stats(self) -> dict[str, LinkStats]:
        """Per-agent-link counters; only links that carried traffic appear."""
        return dict(sorted(self._stats.items()))

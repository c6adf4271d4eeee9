"""Synchronous, lossless message passing restricted to graph edges.

Every message goes through :func:`send`, which checks that sender and
receiver are adjacent. Offending messages are recorded as violations instead
of being delivered so that audits can assert a clean run afterwards.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ProtocolError
from .topology import Adjacency


class MessageKind(str, enum.Enum):
    SPLIT_ANNOUNCEMENT = "split_announcement"
    PUBLIC_KEY = "public_key"
    MASKED_MODEL = "masked_model"


@dataclass(frozen=True)
class Message:
    src: int
    dst: int
    iteration: int
    kind: MessageKind
    payload: Any = None
    relay_hub: int | None = None


@dataclass(frozen=True)
class Violation:
    message: Message
    reason: str


@dataclass
class TransportLog:
    """Ordered record of delivered messages.

    With ``keep_messages=False`` only counters and violations are retained,
    which keeps long simulations cheap while still auditing every send.
    ``bypassed`` counts delivered public keys whose leg does not touch their
    relay hub.
    """

    keep_messages: bool = True
    messages: list[Message] = field(default_factory=list)
    violations: list[Violation] = field(default_factory=list)
    counts: Counter = field(default_factory=Counter)
    bypassed: int = 0

    def send(self, msg: Message, adj: Adjacency) -> Message | None:
        return send(self, msg, adj)

    @property
    def delivered(self) -> int:
        return sum(self.counts.values())

    def of_kind(self, kind: MessageKind) -> list[Message]:
        return [m for m in self.messages if m.kind == kind]

    def dump(self) -> str:
        """Line per message: ``i kind src dst hub`` with 1-based agents, ``-`` for no hub."""
        lines = []
        for m in self.messages:
            hub = "-" if m.relay_hub is None else str(m.relay_hub + 1)
            lines.append(f"{m.iteration} {m.kind.value} {m.src + 1} {m.dst + 1} {hub}\n")
        return "".join(lines)

    def write(self, path) -> None:
        Path(path).write_text(self.dump())


def send(log: TransportLog, msg: Message, adj: Adjacency) -> Message | None:
    """Deliver ``msg`` if its endpoints share an edge, else record a violation.

    Returns the delivered message or ``None``.
    """
    reason = None
    if not adj.is_adjacent(msg.src, msg.dst):
        reason = f"agent {msg.dst} is not a neighbour of agent {msg.src}"
    elif msg.relay_hub is not None and not (
            adj.is_adjacent(msg.relay_hub, msg.src) and adj.is_adjacent(msg.relay_hub, msg.dst)):
        reason = f"relay leg {msg.src}->{msg.dst} leaves the neighbourhood of hub {msg.relay_hub}"
    if reason is not None:
        log.violations.append(Violation(msg, reason))
        return None
    log.counts[msg.kind] += 1
    if msg.kind == MessageKind.PUBLIC_KEY and msg.relay_hub not in (msg.src, msg.dst):
        log.bypassed += 1
    if log.keep_messages:
        log.messages.append(msg)
    return msg


def relay_pair_exchange(log: TransportLog, adj: Adjacency, hub: int, left: int, right: int,
                        left_keys: Any, right_keys: Any, iteration: int = 0) -> tuple[Any, Any]:
    """Swap public keys between two neighbours of ``hub`` through the hub.

    Four legs are logged: left->hub, hub->right, right->hub, hub->left, all
    tagged with ``relay_hub=hub``. The hub forwards payloads untouched, even
    when the two parties happen to be adjacent themselves.

    Returns ``(keys received by left, keys received by right)``.
    """
    if left == right:
        raise ProtocolError(f"agent {left} cannot exchange keys with itself")
    for a in (left, right):
        if a == hub or not adj.is_adjacent(hub, a):
            raise ProtocolError(f"agent {a} is not a neighbour of hub {hub}")

    def leg(src, dst, payload):
        return send(log, Message(src, dst, iteration, MessageKind.PUBLIC_KEY, payload, hub), adj)

    leg(left, hub, left_keys)
    to_right = leg(hub, right, left_keys)
    leg(right, hub, right_keys)
    to_left = leg(hub, left, right_keys)
    return (None if to_left is None else to_left.payload,
            None if to_right is None else to_right.payload)


def direct_key_messages(log: TransportLog) -> list[Message]:
    """Public-key messages that bypassed their hub (neither endpoint is the hub)."""
    return [m for m in log.of_kind(MessageKind.PUBLIC_KEY)
            if m.relay_hub is None or m.relay_hub not in (m.src, m.dst)]

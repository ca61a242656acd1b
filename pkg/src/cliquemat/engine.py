"""Synchronous congested-clique execution engine.

``n`` fully connected nodes exchange point-to-point messages in rounds; each
ordered pair may carry at most one message of at most W payload bits per
round.  Headers (src, dst, tag, seq) travel out of band and are not charged
against W.  The ledger tracks rounds, messages, payload bits, and per-node
work units; posting a message charges W work to the sender and delivering it
charges W to the receiver.

Two execution styles share the engine:

* step protocols (:meth:`CliqueEngine.run_protocol`) call one per-node
  function every round until all nodes report done in the same round;
* phase-driven protocols drive the engine directly through
  :meth:`local` phases and the routing primitives in :mod:`cliquemat.routing`.

In ``accounted`` routing mode the primitives bypass per-round scheduling and
charge their published analytic round costs instead; the engine exposes
:meth:`charge_rounds` and the direct-delivery helpers for that path.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, NamedTuple

import numpy as np

from .errors import (
    CapacityError,
    IsolationError,
    MaxRoundsError,
    PairConflictError,
)

SIMULATED = "simulated"
ACCOUNTED = "accounted"


class Message(NamedTuple):
    src: int
    dst: int
    tag: int
    seq: int
    payload: int
    nbits: int
    meta: Any = None


@dataclass(frozen=True)
class CliqueConfig:
    """Model parameters for one run.

    ``w`` is the payload capacity in bits; with ``strict`` the capacity is
    forced to ceil(log2 n) + 16 instead.  ``c_idt`` is the round charge for
    one relaxed information-distribution task in accounted mode.
    """

    n: int
    w: int = 64
    strict: bool = False
    seed: int = 0
    routing: str = SIMULATED
    c_idt: int = 16
    max_rounds: int = 1_000_000

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError(f"need at least 2 nodes, got {self.n}")
        if self.routing not in (SIMULATED, ACCOUNTED):
            raise ValueError(f"unknown routing mode {self.routing!r}")
        if self.c_idt < 1:
            raise ValueError("c_idt must be positive")
        floor = math.ceil(math.log2(self.n)) + 1
        if self.payload_bits < floor:
            raise ValueError(
                f"payload capacity {self.payload_bits} below minimum {floor} for n={self.n}"
            )

    @property
    def payload_bits(self) -> int:
        if self.strict:
            return math.ceil(math.log2(self.n)) + 16
        return self.w


@dataclass
class RoundLedger:
    """Monotone counters for one run."""

    n: int
    rounds: int = 0
    messages: int = 0
    bits: int = 0
    work: list[int] = field(default_factory=list)
    primitive_rounds: dict[str, int] = field(default_factory=dict)
    step_rounds: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.work:
            self.work = [0] * (self.n + 1)  # index 0 unused

    @property
    def work_total(self) -> int:
        return sum(self.work)

    @property
    def work_max_node(self) -> int:
        return max(self.work[1:])

    def add_primitive_rounds(self, label: str, rounds: int) -> None:
        if label:
            self.primitive_rounds[label] = self.primitive_rounds.get(label, 0) + rounds

    def as_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "messages": self.messages,
            "bits": self.bits,
            "work_total": self.work_total,
            "work_max_node": self.work_max_node,
            "primitive_rounds": dict(sorted(self.primitive_rounds.items())),
            "step_rounds": dict(self.step_rounds),
        }


class _Storage(dict):
    """Node-private key/value store with an optional access audit."""

    __slots__ = ("_engine", "_owner")

    def __init__(self, engine: "CliqueEngine", owner: int) -> None:
        super().__init__()
        self._engine = engine
        self._owner = owner

    def _check(self) -> None:
        eng = self._engine
        if eng.audit and eng._active is not None and eng._active != self._owner:
            raise IsolationError(
                f"node {eng._active} touched storage of node {self._owner}"
            )

    def __getitem__(self, key):
        self._check()
        return super().__getitem__(key)

    def __setitem__(self, key, value):
        self._check()
        super().__setitem__(key, value)

    def get(self, key, default=None):
        self._check()
        return super().get(key, default)

    def setdefault(self, key, default=None):
        self._check()
        return super().setdefault(key, default)

    def pop(self, key, *args):
        self._check()
        return super().pop(key, *args)

    def __contains__(self, key):
        self._check()
        return super().__contains__(key)


class NodeState:
    """One clique node: id, last-round inbox, private storage, RNG stream."""

    __slots__ = ("id", "inbox", "storage", "done", "_rng", "_engine")

    def __init__(self, engine: "CliqueEngine", node_id: int) -> None:
        self.id = node_id
        self.inbox: list[Message] = []
        self.storage = _Storage(engine, node_id)
        self.done = False
        self._rng: np.random.Generator | None = None
        self._engine = engine

    @property
    def rng(self) -> np.random.Generator:
        """Private random stream derived from (master seed, node id)."""
        if self._rng is None:
            seq = np.random.SeedSequence(
                entropy=self._engine.cfg.seed, spawn_key=(self.id,)
            )
            self._rng = np.random.Generator(np.random.PCG64(seq))
        return self._rng


class NodeApi:
    """Per-node handle passed to step-protocol functions."""

    __slots__ = ("_engine", "_node")

    def __init__(self, engine: "CliqueEngine", node: NodeState) -> None:
        self._engine = engine
        self._node = node

    @property
    def me(self) -> int:
        return self._node.id

    @property
    def n(self) -> int:
        return self._engine.cfg.n

    @property
    def w(self) -> int:
        return self._engine.w

    @property
    def inbox(self) -> list[Message]:
        return self._node.inbox

    @property
    def storage(self) -> _Storage:
        return self._node.storage

    @property
    def rng(self) -> np.random.Generator:
        return self._node.rng

    def send(self, dst: int, payload: int, nbits: int, tag: int = 0, seq: int = 0) -> None:
        self._engine.post_message(
            Message(self._node.id, dst, tag, seq, payload, nbits)
        )

    def charge(self, units: int) -> None:
        self._engine.charge_work(self._node.id, units)


class CliqueEngine:
    """Round-synchronous executor with message, bit and work accounting."""

    def __init__(self, cfg: CliqueConfig) -> None:
        self.cfg = cfg
        self.w = cfg.payload_bits
        self.accounted = cfg.routing == ACCOUNTED
        self.ledger = RoundLedger(cfg.n)
        self.nodes: list[NodeState | None] = [None] + [
            NodeState(self, i) for i in range(1, cfg.n + 1)
        ]
        self.audit = False
        self._active: int | None = None
        self._buffer: dict[tuple[int, int], Message] = {}

    # -- node access --------------------------------------------------------

    @property
    def n(self) -> int:
        return self.cfg.n

    def node(self, i: int) -> NodeState:
        if not 1 <= i <= self.cfg.n:
            raise ValueError(f"node id {i} outside 1..{self.cfg.n}")
        return self.nodes[i]

    def node_ids(self) -> range:
        return range(1, self.cfg.n + 1)

    def local(self, fn: Callable[[NodeState], None], ids: Iterable[int] | None = None) -> None:
        """Run ``fn`` once per node, ascending, with access auditing scoped
        to that node."""
        for i in sorted(ids) if ids is not None else self.node_ids():
            node = self.node(i)
            self._active = i
            try:
                fn(node)
            finally:
                self._active = None

    @contextmanager
    def as_node(self, i: int):
        prev = self._active
        self._active = i
        try:
            yield self.node(i)
        finally:
            self._active = prev

    # -- messaging ----------------------------------------------------------

    def post_message(self, m: Message) -> None:
        if m.src == m.dst:
            raise ValueError("src and dst must differ")
        if not (1 <= m.src <= self.cfg.n and 1 <= m.dst <= self.cfg.n):
            raise ValueError(f"endpoints outside 1..{self.cfg.n}: {m.src}->{m.dst}")
        if m.nbits < 1:
            raise CapacityError("payload must carry at least one bit")
        if m.nbits > self.w:
            raise CapacityError(
                f"payload of {m.nbits} bits exceeds capacity W={self.w}"
            )
        if m.payload < 0 or m.payload >= (1 << m.nbits):
            raise CapacityError(
                f"payload value does not fit the declared {m.nbits} bits"
            )
        key = (m.src, m.dst)
        if key in self._buffer:
            raise PairConflictError(
                f"second message for pair {m.src}->{m.dst} in one round"
            )
        self._buffer[key] = m
        self.ledger.work[m.src] += self.w

    def advance_round(self) -> None:
        """Deliver all buffered messages simultaneously and start a new round."""
        led = self.ledger
        led.rounds += 1
        if led.rounds > self.cfg.max_rounds:
            raise MaxRoundsError(
                f"exceeded max_rounds={self.cfg.max_rounds} without terminating"
            )
        for node in self.nodes[1:]:
            node.inbox = []
        if self._buffer:
            led.messages += len(self._buffer)
            per_dst: dict[int, list[Message]] = {}
            for m in self._buffer.values():
                led.bits += m.nbits
                led.work[m.dst] += self.w
                per_dst.setdefault(m.dst, []).append(m)
            for dst, msgs in per_dst.items():
                msgs.sort(key=lambda m: (m.src, m.tag, m.seq))
                self.nodes[dst].inbox = msgs
            self._buffer = {}

    def charge_work(self, node_id: int, units: int) -> None:
        if units < 0:
            raise ValueError("work units must be nonnegative")
        self.ledger.work[node_id] += units

    # -- accounted-mode helpers ---------------------------------------------

    def charge_rounds(self, rounds: int, label: str = "") -> None:
        """Accounted mode: credit an analytic round cost without scheduling."""
        self.ledger.rounds += rounds
        if self.ledger.rounds > self.cfg.max_rounds:
            raise MaxRoundsError(
                f"exceeded max_rounds={self.cfg.max_rounds} without terminating"
            )
        self.ledger.add_primitive_rounds(label, rounds)

    def count_traffic(self, src: int, dst: int, nbits: int, count: int = 1) -> None:
        """Accounted mode: count ``count`` messages of ``nbits`` bits each
        from src to dst without materializing them."""
        led = self.ledger
        led.messages += count
        led.bits += nbits * count
        led.work[src] += self.w * count
        led.work[dst] += self.w * count

    @contextmanager
    def measure(self, label: str):
        """Attribute all rounds spent inside the block to ``label``."""
        start = self.ledger.rounds
        try:
            yield
        finally:
            self.ledger.add_primitive_rounds(label, self.ledger.rounds - start)

    # -- step protocols -----------------------------------------------------

    def run_protocol(self, protocol, inputs) -> tuple[dict[int, _Storage], RoundLedger]:
        """Run a step protocol: ``protocol.setup(api, value)`` once per node,
        then ``protocol.step(api) -> bool`` every round until all nodes return
        True in the same round.  ``inputs`` maps node id -> initial value (a
        sequence of length n is also accepted)."""
        if not isinstance(inputs, dict):
            seq = list(inputs)
            if len(seq) != self.cfg.n:
                raise ValueError(f"need {self.cfg.n} per-node inputs, got {len(seq)}")
            inputs = {i + 1: v for i, v in enumerate(seq)}
        apis = {i: NodeApi(self, self.node(i)) for i in self.node_ids()}
        for i in self.node_ids():
            self._active = i
            try:
                protocol.setup(apis[i], inputs[i])
            finally:
                self._active = None
        while True:
            all_done = True
            for i in self.node_ids():
                self._active = i
                try:
                    finished = protocol.step(apis[i])
                finally:
                    self._active = None
                self.node(i).done = bool(finished)
                all_done = all_done and bool(finished)
            self.advance_round()
            if all_done:
                break
        return {i: self.node(i).storage for i in self.node_ids()}, self.ledger

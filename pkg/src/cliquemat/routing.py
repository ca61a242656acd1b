"""Message-distribution subprotocols on the clique engine.

Three primitives, each with two backends selected by the engine's routing
mode:

* ``solve_relaxed_idt`` -- every node sends and receives at most n items.
  The simulated backend spreads item j of node i through intermediate
  ((i+j-1) mod n)+1, announces per-pair backlogs, then drains one item per
  ordered pair per round.  The accounted backend charges ``c_idt`` rounds.
* ``bounded_route`` -- at most k*n sends and l*n receives per node, solved
  as k*l relaxed tasks, each preceded by a two-round exchange in which
  senders announce deliverable counts and receivers reply with quotas.
* ``vector_multicast`` -- each sender pushes one vector of at most n chunks
  to a recipient set; recipients covered by doubling (groups of 2, 4, 8...),
  every phase routed as a bounded task with per-holder fan-out 2.

All primitives deliver self-addressed items locally at no message cost and
return ``(delivered, rounds_used)`` where ``delivered`` maps a node id to
its items in (src, tag, position) order.
"""

from __future__ import annotations

import math
from typing import Iterable, NamedTuple, Sequence

from .engine import CliqueEngine, Message
from .errors import PreconditionError


class RoutingItem(NamedTuple):
    src: int
    dst: int
    payload: int
    nbits: int
    tag: int = 0


Delivered = dict[int, list[RoutingItem]]


def _count_bits(n: int) -> int:
    return max(1, math.ceil(math.log2(n + 1)))


def _split_items(items: Iterable[RoutingItem]):
    """Separate self-addressed items and index the rest by source."""
    self_items: list[tuple[int, RoutingItem]] = []
    cross: dict[int, list[tuple[int, RoutingItem]]] = {}
    for pos, it in enumerate(items):
        if it.src == it.dst:
            self_items.append((pos, it))
        else:
            cross.setdefault(it.src, []).append((pos, it))
    return self_items, cross


def _finalize(delivered: dict[int, list[tuple[int, RoutingItem]]]) -> Delivered:
    out: Delivered = {}
    for dst, lst in delivered.items():
        lst.sort(key=lambda pr: (pr[1].src, pr[1].tag, pr[0]))
        out[dst] = [it for _, it in lst]
    return out


def idt_accounted_rounds(n: int, max_send: int, max_recv: int, c_idt: int) -> int:
    return math.ceil(max_send / n) * math.ceil(max_recv / n) * c_idt


def bounded_route_accounted_rounds(k: int, ell: int, c_idt: int) -> int:
    # two preamble rounds per relaxed sub-sub-task
    return k * ell * (c_idt + 2)


def multicast_phases(num_recipients: int) -> int:
    """Doubling phases needed to cover ``num_recipients``: groups of
    2, 4, 8, ... nodes, each member forwarding to at most two."""
    if num_recipients <= 0:
        return 0
    p = 1
    while (1 << (p + 1)) - 2 < num_recipients:
        p += 1
    return p


def solve_relaxed_idt(
    engine: CliqueEngine,
    items: Sequence[RoutingItem],
    label: str = "relaxed_idt",
) -> tuple[Delivered, int]:
    """Deliver a batch in which every node sends <= n and receives <= n items."""
    n = engine.n
    sends: dict[int, int] = {}
    recvs: dict[int, int] = {}
    for it in items:
        if it.src != it.dst:
            sends[it.src] = sends.get(it.src, 0) + 1
            recvs[it.dst] = recvs.get(it.dst, 0) + 1
    if sends and max(sends.values()) > n:
        raise PreconditionError(
            f"a node sends {max(sends.values())} > n={n} items; use bounded_route"
        )
    if recvs and max(recvs.values()) > n:
        raise PreconditionError(
            f"a node receives {max(recvs.values())} > n={n} items; use bounded_route"
        )

    self_items, cross = _split_items(items)
    delivered: dict[int, list[tuple[int, RoutingItem]]] = {}
    for pos, it in self_items:
        delivered.setdefault(it.dst, []).append((pos, it))

    if not cross:
        return _finalize(delivered), 0

    if engine.accounted:
        rounds = idt_accounted_rounds(n, max(sends.values()), max(recvs.values()), engine.cfg.c_idt)
        engine.charge_rounds(rounds, label)
        for src in sorted(cross):
            for pos, it in cross[src]:
                engine.count_traffic(it.src, it.dst, it.nbits)
                delivered.setdefault(it.dst, []).append((pos, it))
        return _finalize(delivered), rounds

    with engine.measure(label):
        start = engine.ledger.rounds
        cbits = _count_bits(n)
        held: dict[tuple[int, int], list[tuple[int, RoutingItem]]] = {}

        # phase 1: spread over intermediates, one distinct target per item
        for src in sorted(cross):
            for j, (pos, it) in enumerate(cross[src]):
                mid = (src - 1 + j) % n + 1
                if mid == src:
                    held.setdefault((mid, it.dst), []).append((pos, it))
                else:
                    engine.post_message(
                        Message(src, mid, it.tag, j, it.payload, it.nbits,
                                meta=(it.dst, it.src, it.tag, pos))
                    )
        engine.advance_round()
        for i in engine.node_ids():
            for m in engine.node(i).inbox:
                fdst, fsrc, ftag, fpos = m.meta
                item = RoutingItem(fsrc, fdst, m.payload, m.nbits, ftag)
                if fdst == i:
                    delivered.setdefault(i, []).append((fpos, item))
                else:
                    held.setdefault((i, fdst), []).append((fpos, item))

        # announce per-pair backlogs so drain lengths are known
        for (mid, dst), lst in sorted(held.items()):
            lst.sort(key=lambda pr: (pr[1].src, pr[1].tag, pr[0]))
            engine.post_message(Message(mid, dst, 0, 0, len(lst) % (1 << cbits), cbits))
        engine.advance_round()

        # drain: one item per ordered pair per round
        drain = max((len(lst) for lst in held.values()), default=0)
        for q in range(drain):
            for (mid, dst), lst in sorted(held.items()):
                if q < len(lst):
                    pos, it = lst[q]
                    engine.post_message(
                        Message(mid, dst, it.tag, q, it.payload, it.nbits,
                                meta=(it.dst, it.src, it.tag, pos))
                    )
            engine.advance_round()
            for i in engine.node_ids():
                for m in engine.node(i).inbox:
                    fdst, fsrc, ftag, fpos = m.meta
                    delivered.setdefault(i, []).append(
                        (fpos, RoutingItem(fsrc, fdst, m.payload, m.nbits, ftag))
                    )
        rounds = engine.ledger.rounds - start
    return _finalize(delivered), rounds


def bounded_route(
    engine: CliqueEngine,
    items: Sequence[RoutingItem],
    k: int | None = None,
    ell: int | None = None,
    label: str = "bounded_route",
) -> tuple[Delivered, int]:
    """Deliver a batch with per-node sends <= k*n and receives <= ell*n."""
    n = engine.n
    sends: dict[int, int] = {}
    recvs: dict[int, int] = {}
    for it in items:
        if it.src != it.dst:
            sends[it.src] = sends.get(it.src, 0) + 1
            recvs[it.dst] = recvs.get(it.dst, 0) + 1
    max_send = max(sends.values(), default=0)
    max_recv = max(recvs.values(), default=0)
    if k is None:
        k = max(1, math.ceil(max_send / n))
    if ell is None:
        ell = max(1, math.ceil(max_recv / n))
    if max_send > k * n:
        raise PreconditionError(f"a node sends {max_send} > k*n = {k * n}")
    if max_recv > ell * n:
        raise PreconditionError(f"a node receives {max_recv} > l*n = {ell * n}")

    self_items, cross = _split_items(items)
    delivered: dict[int, list[tuple[int, RoutingItem]]] = {}
    for pos, it in self_items:
        delivered.setdefault(it.dst, []).append((pos, it))
    if not cross:
        return _finalize(delivered), 0

    if engine.accounted:
        rounds = bounded_route_accounted_rounds(k, ell, engine.cfg.c_idt)
        engine.charge_rounds(rounds, label)
        for src in sorted(cross):
            for pos, it in cross[src]:
                engine.count_traffic(it.src, it.dst, it.nbits)
                delivered.setdefault(it.dst, []).append((pos, it))
        return _finalize(delivered), rounds

    with engine.measure(label):
        start = engine.ledger.rounds
        cbits = _count_bits(2 * n)
        for s in range(k):
            # sub-task: every node contributes its next <= n items
            pending: dict[int, list[tuple[int, RoutingItem]]] = {}
            for src in sorted(cross):
                part = cross[src][s * n:(s + 1) * n]
                if part:
                    pending[src] = list(part)
            while pending:
                # preamble round 1: senders announce deliverable counts
                counts: dict[tuple[int, int], int] = {}
                for src in sorted(pending):
                    per_dst: dict[int, int] = {}
                    for _, it in pending[src]:
                        per_dst[it.dst] = per_dst.get(it.dst, 0) + 1
                    for dst in sorted(per_dst):
                        counts[(src, dst)] = per_dst[dst]
                        engine.post_message(
                            Message(src, dst, 0, 0, per_dst[dst] % (1 << cbits), cbits)
                        )
                engine.advance_round()
                # preamble round 2: receivers reply with quotas, capacity n
                quota: dict[tuple[int, int], int] = {}
                remaining: dict[int, int] = {}
                for (src, dst), c in sorted(counts.items(), key=lambda kv: (kv[0][1], kv[0][0])):
                    room = remaining.setdefault(dst, n)
                    q = min(c, room)
                    remaining[dst] = room - q
                    quota[(src, dst)] = q
                    engine.post_message(
                        Message(dst, src, 1, 0, q % (1 << cbits), cbits)
                    )
                engine.advance_round()
                # release the granted items and solve one relaxed task
                batch: list[RoutingItem] = []
                batch_pos: list[int] = []
                for src in sorted(pending):
                    taken: dict[int, int] = {}
                    rest: list[tuple[int, RoutingItem]] = []
                    for pos, it in pending[src]:
                        q = quota.get((src, it.dst), 0)
                        if taken.get(it.dst, 0) < q:
                            taken[it.dst] = taken.get(it.dst, 0) + 1
                            batch.append(it)
                            batch_pos.append(pos)
                        else:
                            rest.append((pos, it))
                    if rest:
                        pending[src] = rest
                    else:
                        del pending[src]
                part, _ = solve_relaxed_idt(engine, batch, label="")
                for dst in sorted(part):
                    for it in part[dst]:
                        delivered.setdefault(dst, []).append((0, it))
        rounds = engine.ledger.rounds - start
    out: Delivered = {}
    for dst, lst in delivered.items():
        out[dst] = sorted(
            (it for _, it in lst), key=lambda it: (it.src, it.tag, it.payload)
        )
    return out, rounds


def vector_multicast(
    engine: CliqueEngine,
    senders: dict[int, tuple[Sequence[tuple[int, int]], Sequence[int]]],
    label: str = "vector_multicast",
) -> tuple[dict[int, list[tuple[int, list[tuple[int, int]]]]], int]:
    """Each sender pushes its vector of (payload, nbits) chunks to every node
    in its recipient set.  Returns per-recipient lists of (sender, chunks)
    and the rounds used.
    """
    n = engine.n
    senders_net: dict[int, tuple[list[tuple[int, int]], list[int]]] = {}
    result: dict[int, list[tuple[int, list[tuple[int, int]]]]] = {}
    for s in sorted(senders):
        chunks, recips = senders[s]
        chunks = list(chunks)
        if not 1 <= len(chunks) <= n:
            raise PreconditionError(
                f"sender {s} has {len(chunks)} chunks; must be in 1..n"
            )
        if len(set(recips)) != len(recips):
            raise PreconditionError(f"sender {s} lists a recipient twice")
        net = []
        for v in recips:
            if not 1 <= v <= n:
                raise PreconditionError(f"recipient {v} outside 1..{n}")
            if v == s:
                result.setdefault(v, []).append((s, list(chunks)))
            else:
                net.append(v)
        if net:
            senders_net[s] = (chunks, sorted(net))

    if not senders_net:
        return result, 0

    # sub-task m serves every recipient's m-th sender (ascending sender id),
    # so recipient sets inside a sub-task are disjoint by construction
    by_recipient: dict[int, list[int]] = {}
    for s in sorted(senders_net):
        for v in senders_net[s][1]:
            by_recipient.setdefault(v, []).append(s)
    ell = max(len(v) for v in by_recipient.values())

    total_rounds = 0
    idbits = _count_bits(n)
    for m in range(ell):
        sub: dict[int, list[int]] = {}
        for v in sorted(by_recipient):
            slist = by_recipient[v]
            if m < len(slist):
                sub.setdefault(slist[m], []).append(v)
        for s in sub:
            sub[s].sort()

        max_chunks = max(len(senders_net[s][0]) for s in sub)
        max_recips = max(len(r) for r in sub.values())
        phases = multicast_phases(max_recips)
        kk = max(1, math.ceil(2 * max_chunks / n))

        if engine.accounted:
            # charge the published per-sub-task bound: ceil(log2 n) doubling
            # phases regardless of how many recipients this instance has
            flat_phases = max(1, math.ceil(math.log2(n)))
            rounds_m = 2 + flat_phases * bounded_route_accounted_rounds(kk, 1, engine.cfg.c_idt)
            engine.charge_rounds(rounds_m, label)
            recips_in_sub = set()
            for s in sorted(sub):
                chunks = senders_net[s][0]
                total_bits = sum(nb for _, nb in chunks)
                for v in sub[s]:
                    recips_in_sub.add(v)
                    engine.count_traffic(s, v, idbits)  # membership announcement
                    led = engine.ledger
                    led.messages += len(chunks)
                    led.bits += total_bits
                    led.work[s] += len(chunks) * engine.w
                    led.work[v] += len(chunks) * engine.w
                    result.setdefault(v, []).append((s, list(chunks)))
            # recipients announce their sender to all other nodes
            led = engine.ledger
            r_cnt = len(recips_in_sub)
            led.messages += r_cnt * (n - 1)
            led.bits += r_cnt * (n - 1) * idbits
            for v in recips_in_sub:
                led.work[v] += (n - 1) * engine.w
            for u in engine.node_ids():
                led.work[u] += (r_cnt - (1 if u in recips_in_sub else 0)) * engine.w
            total_rounds += rounds_m
            continue

        sender_of = {v: s for s in sub for v in sub[s]}
        with engine.measure(label):
            start = engine.ledger.rounds
            # announcement 1: each sender tells its recipients their rank
            for s in sorted(sub):
                for rank, v in enumerate(sub[s]):
                    engine.post_message(Message(s, v, 0, rank, rank % (1 << idbits), idbits))
            engine.advance_round()
            # announcement 2: each recipient tells everyone whose it is
            for s in sorted(sub):
                for v in sub[s]:
                    for u in engine.node_ids():
                        if u != v:
                            engine.post_message(Message(v, u, 1, 0, s % (1 << idbits), idbits))
            engine.advance_round()

            for p in range(1, phases + 1):
                items: list[RoutingItem] = []
                for s in sorted(sub):
                    recips = sub[s]
                    chunks = senders_net[s][0]
                    lo, hi = (1 << p) - 2, (1 << (p + 1)) - 2
                    if p == 1:
                        holders = [(s, r) for r in range(min(2, len(recips)))]
                    else:
                        plo = (1 << (p - 1)) - 2
                        holders = []
                        for q, hrank in enumerate(range(plo, min(lo, len(recips)))):
                            for t in (lo + 2 * q, lo + 2 * q + 1):
                                if t < min(hi, len(recips)):
                                    holders.append((recips[hrank], t))
                    for holder, trank in holders:
                        v = recips[trank]
                        for c, (payload, nbits) in enumerate(chunks):
                            items.append(RoutingItem(holder, v, payload, nbits, tag=c))
                if items:
                    part, _ = bounded_route(engine, items, k=kk, ell=1, label="")
                    for v in sorted(part):
                        chunks_v = [(it.payload, it.nbits) for it in sorted(part[v], key=lambda it: it.tag)]
                        result.setdefault(v, []).append((sender_of[v], chunks_v))
            rounds_m = engine.ledger.rounds - start
        total_rounds += rounds_m

    for v in result:
        result[v].sort(key=lambda sv: sv[0])
    return result, total_rounds

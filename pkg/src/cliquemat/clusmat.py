"""Boolean matrix product guided by a spanning tree of the row set.

Given square Boolean matrices A and B with row i of each held at node i, the
protocol computes C = A o B (Boolean product) so that node i ends up with
row i of C.  The work plan exploits clustering: an approximate minimum
spanning tree of A's rows is built with sketches, its closed tour is cut
into blocks of balanced Hamming cost, B's columns are cut into blocks of
consecutive columns, and every (tour block, column block) pair goes to one
node, which reconstructs the block's rows incrementally from witness lists
and updates per-column overlap counts only at flipped coordinates.

Steps (per-step round subtotals land in ``ledger.step_rounds``):

 1. every node learns its column of B (transpose exchange);
 2. approximate spanning tree of A's rows, built at node 1;
 3. node 1 ships edge j to node j, which re-broadcasts it;
 4. each row goes to the owners of its incident tree edges;
 5. edge owners extract witnesses and broadcast the edge distances;
 6. every node derives the same tour, blocks, and pair assignment locally;
 7. tour-block start rows go to the assigned pair nodes;
 8. witnesses go to block representatives, then to all pair nodes;
 9. column blocks go to the assigned pair nodes;
10. pair nodes multiply incrementally and route finished entries home.

End-to-end correctness is exact for every seed: randomness only moves the
tree, and steps 4-10 are correct for any spanning tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .bits import (
    BitVector,
    BooleanMatrix,
    Traversal,
    Tree,
    WeightedEdge,
    euler_traversal,
    pack_chunks,
    unpack_chunks,
    witnesses,
)
from .engine import CliqueConfig, CliqueEngine, Message, RoundLedger
from .errors import (
    DimensionError,
    InvalidPlanError,
    InvalidWitnessError,
    SchedulingError,
)
from .hmst import ProjectionConfig, run_hmst
from .routing import (
    RoutingItem,
    bounded_route,
    bounded_route_accounted_rounds,
    solve_relaxed_idt,
    vector_multicast,
)


# ---------------------------------------------------------------------------
# planning (pure, replicated at every node)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraversalPlan:
    """Tour blocks of balanced cost plus consecutive column blocks.

    ``traversal_blocks`` are half-open index ranges into the tour's directed
    edges; ``column_blocks`` are inclusive 1-based column ranges.
    """

    traversal: Traversal
    total_cost: int
    t: int
    traversal_blocks: tuple[tuple[int, int], ...]
    block_costs: tuple[int, ...]
    column_blocks: tuple[tuple[int, int], ...]

    @property
    def num_blocks(self) -> int:
        return len(self.traversal_blocks)

    def block_edge_range(self, b: int) -> tuple[int, int]:
        """Directed-edge index range of tour block b (1-based block id)."""
        return self.traversal_blocks[b - 1]

    def block_edge_ids(self, b: int) -> list[int]:
        """Sorted distinct undirected edge ids covered by tour block b."""
        lo, hi = self.traversal_blocks[b - 1]
        return sorted({self.traversal.edge_indices[i] for i in range(lo, hi)})

    def block_vertices(self, b: int) -> list[int]:
        """Vertices visited by tour block b (start vertex plus edge heads)."""
        lo, hi = self.traversal_blocks[b - 1]
        seen = {self.traversal.directed_edges[lo][0]}
        for i in range(lo, hi):
            seen.add(self.traversal.directed_edges[i][1])
        return sorted(seen)

    def block_start_vertex(self, b: int) -> int:
        lo, _ = self.traversal_blocks[b - 1]
        return self.traversal.directed_edges[lo][0]

    def column_block_of(self, j: int) -> int:
        for c, (lo, hi) in enumerate(self.column_blocks, start=1):
            if lo <= j <= hi:
                return c
        raise InvalidPlanError(f"column {j} not covered by any block")


def plan_blocks(traversal: Traversal, edge_costs: Sequence[int], n: int) -> TraversalPlan:
    """Cut the tour into at most t = ceil(sqrt(M/n + 1)) blocks of cost at
    most ceil(M/t) + max edge cost, and the n columns into floor(n/t) blocks
    of at most t+1 consecutive columns.

    Greedy left-to-right: a block closes as soon as its cost reaches the
    budget ceil(M/t); a trailing zero-cost block merges into its
    predecessor.  t is clamped to floor(sqrt(n+1)) so that floor(n/t)
    column blocks of size at most t+1 can always cover all n columns.
    """
    m = len(traversal.directed_edges)
    if len(edge_costs) != m:
        raise InvalidPlanError(
            f"{len(edge_costs)} costs for {m} directed edges"
        )
    if any(c < 0 for c in edge_costs):
        raise InvalidPlanError("edge costs must be nonnegative")
    total = sum(edge_costs)
    t = math.ceil(math.sqrt(total / n + 1))
    t = min(t, math.isqrt(n + 1))
    t = max(t, 1)

    budget = max(1, math.ceil(total / t))
    blocks: list[tuple[int, int]] = []
    costs: list[int] = []
    start = 0
    acc = 0
    for i, c in enumerate(edge_costs):
        acc += c
        if acc >= budget:
            blocks.append((start, i + 1))
            costs.append(acc)
            start = i + 1
            acc = 0
    if start < m:
        blocks.append((start, m))
        costs.append(acc)
    if len(blocks) > 1 and costs[-1] == 0:
        lo, _ = blocks[-2]
        _, hi = blocks[-1]
        blocks[-2:] = [(lo, hi)]
        costs[-2:] = [costs[-2]]
    if len(blocks) > t:
        raise InvalidPlanError(f"{len(blocks)} blocks exceed t={t}")

    q = n // t
    base, extra = divmod(n, q)
    column_blocks: list[tuple[int, int]] = []
    lo = 1
    for c in range(q):
        size = base + (1 if c < extra else 0)
        column_blocks.append((lo, lo + size - 1))
        lo += size
    if any(hi - lo + 1 > t + 1 for lo, hi in column_blocks):
        raise InvalidPlanError("a column block exceeds t+1 columns")

    return TraversalPlan(
        traversal=traversal,
        total_cost=total,
        t=t,
        traversal_blocks=tuple(blocks),
        block_costs=tuple(costs),
        column_blocks=tuple(column_blocks),
    )


@dataclass(frozen=True)
class BlockAssignment:
    """Injective map from (tour block, column block) pairs to nodes:
    pair (b, c) lives at node (b-1) * floor(n/t) + c."""

    pair_to_node: dict[tuple[int, int], int]
    node_to_pair: dict[int, tuple[int, int]]

    def node_for(self, b: int, c: int) -> int:
        return self.pair_to_node[(b, c)]

    def nodes_for_block(self, b: int) -> list[int]:
        return sorted(v for (bb, _), v in self.pair_to_node.items() if bb == b)

    def nodes_for_column_block(self, c: int) -> list[int]:
        return sorted(v for (_, cc), v in self.pair_to_node.items() if cc == c)


def assign_pairs(plan: TraversalPlan, n: int) -> BlockAssignment:
    q = len(plan.column_blocks)
    if plan.num_blocks * q > n:
        raise InvalidPlanError(
            f"{plan.num_blocks * q} block pairs exceed {n} nodes"
        )
    pair_to_node = {}
    for b in range(1, plan.num_blocks + 1):
        for c in range(1, q + 1):
            pair_to_node[(b, c)] = (b - 1) * q + c
    node_to_pair = {v: bc for bc, v in pair_to_node.items()}
    return BlockAssignment(pair_to_node, node_to_pair)


@dataclass(frozen=True)
class WitnessSchedule:
    """Shared stage-1 routing rule for one tour block: which representative
    receives each witness position, with per-representative capacity big
    enough that at most O(total/n) representatives are used."""

    reps: tuple[int, ...]
    capacity: int
    edge_offsets: dict[int, int]
    total: int

    def rep_for_position(self, pos: int) -> int:
        idx = min(pos // self.capacity, len(self.reps) - 1)
        return self.reps[idx]

    @property
    def used_reps(self) -> int:
        if self.total == 0:
            return 0
        return min(len(self.reps), math.ceil(self.total / self.capacity))


def witness_schedules(
    plan: TraversalPlan,
    assignment: BlockAssignment,
    distances: Mapping[int, int],
    n: int,
) -> dict[int, WitnessSchedule]:
    """Derive, for every tour block, the representative interval (the
    block's own pair nodes), per-representative capacity, and the position
    offset of each edge's witness run.  Pure function of shared data, so
    every node computes the identical schedule."""
    out: dict[int, WitnessSchedule] = {}
    for b in range(1, plan.num_blocks + 1):
        reps = tuple(assignment.nodes_for_block(b))
        edge_ids = plan.block_edge_ids(b)
        offsets: dict[int, int] = {}
        pos = 0
        for e in edge_ids:
            offsets[e] = pos
            pos += distances[e]
        capacity = max(2 * n, math.ceil(pos / len(reps))) if pos else 2 * n
        out[b] = WitnessSchedule(reps, capacity, offsets, pos)
    return out


# ---------------------------------------------------------------------------
# witness distribution (step 8)
# ---------------------------------------------------------------------------

def distribute_witnesses(engine: CliqueEngine, label: str = "step8") -> None:
    """Two-stage delivery: every edge owner routes each witness to one block
    representative chosen by the shared schedule (balanced, O(n) per
    representative), then representatives multicast their vectors to the
    block's pair nodes in sub-stages of at most n messages each.

    Reads per-node storage written by earlier steps (``wit``, ``plan``,
    ``assignment``, ``schedules``, ``distances``) and fills
    ``block_witnesses`` at every pair node.
    """
    n = engine.n
    cb = max(1, math.ceil(math.log2(n + 1)))
    stage1: list[RoutingItem] = []

    def build_stage1(node):
        wit = node.storage.get("wit")
        if wit is None:
            return
        plan: TraversalPlan = node.storage["plan"]
        schedules: dict[int, WitnessSchedule] = node.storage["schedules"]
        e = node.id
        for b in range(1, plan.num_blocks + 1):
            sched = schedules[b]
            if e not in sched.edge_offsets:
                continue
            base = sched.edge_offsets[e]
            for widx, coord in enumerate(wit):
                rep = sched.rep_for_position(base + widx)
                payload = (e << cb) | (coord - 1)
                stage1.append(RoutingItem(e, rep, payload, 2 * cb, tag=e))

    engine.local(build_stage1)
    delivered, _ = bounded_route(engine, stage1, label="bounded_route")

    rep_packets: dict[int, list[tuple[int, int]]] = {}
    coord_mask = (1 << cb) - 1

    def collect_rep(node):
        items = delivered.get(node.id)
        if not items:
            return
        sched_map: dict[int, WitnessSchedule] = node.storage["schedules"]
        assignment: BlockAssignment = node.storage["assignment"]
        pair = assignment.node_to_pair.get(node.id)
        b = pair[0] if pair else None
        cap = sched_map[b].capacity if b else 0
        packets = sorted(
            ((it.payload >> cb, (it.payload & coord_mask) + 1) for it in items)
        )
        if b is None or len(packets) > cap:
            raise SchedulingError(
                f"representative {node.id} got {len(packets)} witnesses"
            )
        rep_packets[node.id] = packets

    engine.local(collect_rep)

    # stage 2: representatives push their packets to every pair node of
    # their block, as sub-vectors of at most n messages each
    received: dict[int, list[tuple[int, int]]] = {}
    if engine.accounted and rep_packets:
        # charge the published bound: O(1) sub-stages, each delivering one
        # vector from each of the O(block total / n) loaded representatives
        with engine.as_node(1) as node1:
            plan: TraversalPlan = node1.storage["plan"]
            schedules: dict[int, WitnessSchedule] = node1.storage["schedules"]
        max_total = max(s.total for s in schedules.values())
        cap = max(s.capacity for s in schedules.values())
        used_pub = math.ceil(max_total / cap)
        substages = math.ceil(cap / n)
        kk = max(1, math.ceil(2 * min(cap, n) / n))
        per_subtask = 2 + max(1, math.ceil(math.log2(n))) * bounded_route_accounted_rounds(
            kk, 1, engine.cfg.c_idt
        )
        engine.charge_rounds(substages * used_pub * per_subtask, "vector_multicast")
        for rep in sorted(rep_packets):
            node = engine.node(rep)
            assignment = node.storage["assignment"]
            b = assignment.node_to_pair[rep][0]
            recips = assignment.nodes_for_block(b)
            packets = rep_packets[rep]
            for v in recips:
                if v != rep:
                    engine.count_traffic(rep, v, 2 * cb, count=len(packets))
                received.setdefault(v, []).extend(packets)
    else:
        substages = max(
            (math.ceil(len(p) / n) for p in rep_packets.values()), default=0
        )
        for s in range(substages):
            senders = {}
            for rep in sorted(rep_packets):
                part = rep_packets[rep][s * n:(s + 1) * n]
                if not part:
                    continue
                node = engine.node(rep)
                assignment = node.storage["assignment"]
                b = assignment.node_to_pair[rep][0]
                recips = assignment.nodes_for_block(b)
                chunks = [((e << cb) | (coord - 1), 2 * cb) for e, coord in part]
                senders[rep] = (chunks, recips)
            if not senders:
                continue
            out, _ = vector_multicast(engine, senders, label="vector_multicast")
            for v in sorted(out):
                for _, chunks in out[v]:
                    received.setdefault(v, []).extend(
                        (payload >> cb, (payload & coord_mask) + 1) for payload, _ in chunks
                    )

    def store_block_witnesses(node):
        assignment: BlockAssignment = node.storage.get("assignment")
        if assignment is None or node.id not in assignment.node_to_pair:
            return
        plan: TraversalPlan = node.storage["plan"]
        distances: dict[int, int] = node.storage["distances"]
        b = assignment.node_to_pair[node.id][0]
        by_edge: dict[int, list[int]] = {}
        for e, coord in sorted(received.get(node.id, [])):
            by_edge.setdefault(e, []).append(coord)
        for e in plan.block_edge_ids(b):
            got = by_edge.setdefault(e, [])
            if len(got) != distances[e]:
                raise SchedulingError(
                    f"pair node {node.id} holds {len(got)} witnesses of edge {e}, "
                    f"expected {distances[e]}"
                )
        node.storage["block_witnesses"] = by_edge

    engine.local(store_block_witnesses)


# ---------------------------------------------------------------------------
# block multiply (step 10 local part)
# ---------------------------------------------------------------------------

def block_multiply(
    start_vertex: int,
    start_row: BitVector,
    walk: Sequence[tuple[int, int, int]],
    witnesses_by_edge: Mapping[int, Sequence[int]],
    columns: Sequence[tuple[int, BitVector]],
) -> list[tuple[int, int, int]]:
    """Walk the tour block reconstructing every row from the previous one and
    emit (row vertex, column index, bit) for each visited vertex x column.

    Per column an integer count of shared ones is kept and updated only at
    flipped coordinates, so the cost is (columns) x (block cost) updates plus
    the initial inner products.
    """
    n = start_row.n
    col_ids = [j for j, _ in columns]
    counts = [(start_row.value & col.value).bit_count() for _, col in columns]
    cols_at: dict[int, list[int]] = {}
    for cidx, (_, col) in enumerate(columns):
        v = col.value
        while v:
            low = v & -v
            cols_at.setdefault(low.bit_length(), []).append(cidx)
            v ^= low

    out: list[tuple[int, int, int]] = []
    emitted: set[int] = set()

    def emit(vertex: int) -> None:
        if vertex in emitted:
            return
        emitted.add(vertex)
        for cidx, j in enumerate(col_ids):
            out.append((vertex, j, 1 if counts[cidx] > 0 else 0))

    cur = start_row.value
    emit(start_vertex)
    for (_, head, eidx) in walk:
        for coord in witnesses_by_edge.get(eidx, ()):
            if not 1 <= coord <= n:
                raise InvalidWitnessError(f"witness {coord} outside 1..{n}")
            bit = 1 << (coord - 1)
            delta = -1 if cur & bit else 1
            cur ^= bit
            for cidx in cols_at.get(coord, ()):
                counts[cidx] += delta
        emit(head)
    return out


# ---------------------------------------------------------------------------
# the protocol
# ---------------------------------------------------------------------------

def _bits_for(n: int) -> int:
    return max(1, math.ceil(math.log2(n + 1)))


def _broadcast_tree(engine: CliqueEngine, label: str, tree_key: str = "tree") -> None:
    """Node 1 sends edge j to node j; next round node j re-broadcasts it.
    Afterwards every node stores the tree structure under ``tree_key``."""
    n = engine.n
    cb = _bits_for(n)
    with engine.as_node(1) as node1:
        tree: Tree = node1.storage["hmst_tree"]
    pairs = [(e.u, e.v) for e in tree.edges]

    if engine.accounted:
        engine.charge_rounds(2, label)
        for j, (u, v) in enumerate(pairs, start=1):
            if j != 1:
                engine.count_traffic(1, j, 2 * cb)
            for dst in engine.node_ids():
                if dst != j:
                    engine.count_traffic(j, dst, 2 * cb)
    else:
        with engine.measure(label):
            for j, (u, v) in enumerate(pairs, start=1):
                if j != 1:
                    engine.post_message(
                        Message(1, j, 0, j, ((u - 1) << cb) | (v - 1), 2 * cb)
                    )
            engine.advance_round()
            for j, (u, v) in enumerate(pairs, start=1):
                for dst in engine.node_ids():
                    if dst != j:
                        engine.post_message(
                            Message(j, dst, 0, j, ((u - 1) << cb) | (v - 1), 2 * cb)
                        )
            engine.advance_round()

    structure = Tree(n, tuple(WeightedEdge(u, v, 0) for u, v in pairs))

    def store(node):
        node.storage[tree_key] = structure

    engine.local(store)


def _deliver_endpoint_rows(engine: CliqueEngine, row_key: str, out_key: str) -> None:
    """Each node multicasts its row to the owners of its incident tree edges;
    every owner ends with both endpoint rows (at most two vectors each)."""
    n = engine.n
    w = engine.w
    senders = {}

    def build(node):
        tree: Tree = node.storage["tree"]
        row: BitVector = node.storage[row_key]
        recips = sorted(
            {idx for idx, e in enumerate(tree.edges, start=1) if node.id in (e.u, e.v)}
        )
        if recips:
            senders[node.id] = (pack_chunks(row.value, n, w), recips)

    engine.local(build)
    out, _ = vector_multicast(engine, senders, label="vector_multicast")

    def store(node):
        rows = {}
        for sender, chunks in out.get(node.id, []):
            value, nbits = unpack_chunks(chunks)
            rows[sender] = BitVector(n, value)
        node.storage[out_key] = rows

    engine.local(store)


def _owner_distance_broadcast(
    engine: CliqueEngine, rows_key: str, label: str
) -> None:
    """Edge owner j computes the witness list of its edge's endpoint rows,
    keeps it under ``wit`` and broadcasts the distance value to every node;
    all nodes store the full distance table under ``distances``."""
    n = engine.n
    w = engine.w
    cb = _bits_for(n)
    values: dict[int, int] = {}

    def compute(node):
        tree: Tree = node.storage["tree"]
        if node.id > n - 1:
            return
        e = tree.edge(node.id)
        rows: dict[int, BitVector] = node.storage[rows_key]
        wit = witnesses(rows[e.u], rows[e.v])
        node.storage["wit"] = wit
        engine.charge_work(node.id, math.ceil(n / w) + len(wit))
        values[node.id] = len(wit)

    engine.local(compute)

    if engine.accounted:
        engine.charge_rounds(1, label)
        for j in sorted(values):
            for dst in engine.node_ids():
                if dst != j:
                    engine.count_traffic(j, dst, cb)
    else:
        with engine.measure(label):
            for j in sorted(values):
                for dst in engine.node_ids():
                    if dst != j:
                        engine.post_message(Message(j, dst, 0, j, values[j], cb))
            engine.advance_round()

    table = dict(values)

    def store(node):
        node.storage["distances"] = table

    engine.local(store)


def run_clusmat(
    engine: CliqueEngine,
    A: BooleanMatrix,
    B: BooleanMatrix,
    proj: ProjectionConfig,
    tree: Tree | None = None,
) -> tuple[BooleanMatrix, dict]:
    """Execute the ten protocol steps on ``engine``; returns the product and
    a plan summary.  If ``tree`` is given, step 2 is skipped and the tree is
    planted at node 1 (used by the orientation wrapper, which has already
    built both candidate trees)."""
    n = engine.n
    if A.n != n or B.n != n:
        raise DimensionError(f"matrices must be {n}x{n}")
    w = engine.w
    cb = _bits_for(n)
    if w < 2 * cb:
        raise DimensionError(
            f"payload capacity {w} cannot carry an edge id and a coordinate "
            f"({2 * cb} bits) at n={n}"
        )
    led = engine.ledger

    def seed(node):
        node.storage["a_row"] = A.row(node.id)
        node.storage["b_row"] = B.row(node.id)

    engine.local(seed)

    # step 1: transpose exchange so node i also holds column i of B
    r0 = led.rounds
    items = []
    for j in engine.node_ids():
        row = B.row(j)
        for i in engine.node_ids():
            items.append(RoutingItem(j, i, row.get(i), 1, tag=j))
    delivered, _ = solve_relaxed_idt(engine, items, label="relaxed_idt")

    def build_col(node):
        value = 0
        for it in delivered.get(node.id, []):
            value |= it.payload << (it.src - 1)
        node.storage["b_col"] = BitVector(n, value)

    engine.local(build_col)
    led.step_rounds["step1"] = led.rounds - r0

    # step 2: approximate spanning tree of A's rows at node 1
    r0 = led.rounds
    if tree is None:
        run_hmst(engine, proj, point_key="a_row", step_prefix="step2_hmst_")
    else:
        with engine.as_node(1) as node1:
            node1.storage["hmst_tree"] = tree
    led.step_rounds["step2"] = led.rounds - r0

    # step 3: tree structure to every node
    r0 = led.rounds
    _broadcast_tree(engine, label="step3")
    led.step_rounds["step3"] = led.rounds - r0

    # step 4: endpoint rows to edge owners
    r0 = led.rounds
    _deliver_endpoint_rows(engine, row_key="a_row", out_key="edge_rows")
    led.step_rounds["step4"] = led.rounds - r0

    # step 5: witnesses at owners, distances everywhere
    r0 = led.rounds
    _owner_distance_broadcast(engine, rows_key="edge_rows", label="step5")
    led.step_rounds["step5"] = led.rounds - r0

    # step 6: identical local planning at every node
    r0 = led.rounds
    plans: dict[int, TraversalPlan] = {}

    def make_plan(node):
        t: Tree = node.storage["tree"]
        distances: dict[int, int] = node.storage["distances"]
        tour = euler_traversal(t, root=1, edge_costs=distances)
        plan = plan_blocks(
            tour, [distances[e] for e in tour.edge_indices], n
        )
        assignment = assign_pairs(plan, n)
        node.storage["plan"] = plan
        node.storage["assignment"] = assignment
        node.storage["schedules"] = witness_schedules(plan, assignment, distances, n)
        engine.charge_work(node.id, 2 * n)
        plans[node.id] = plan

    engine.local(make_plan)
    plan = plans[1]
    led.step_rounds["step6"] = led.rounds - r0

    # step 7: tour-block start rows to pair nodes
    r0 = led.rounds
    senders: dict[int, tuple[list, list[int]]] = {}

    def build_start(node):
        pl: TraversalPlan = node.storage["plan"]
        asg: BlockAssignment = node.storage["assignment"]
        recips: set[int] = set()
        for b in range(1, pl.num_blocks + 1):
            if pl.block_start_vertex(b) == node.id:
                recips.update(asg.nodes_for_block(b))
        if recips:
            row: BitVector = node.storage["a_row"]
            senders[node.id] = (pack_chunks(row.value, n, w), sorted(recips))

    engine.local(build_start)
    out7, _ = vector_multicast(engine, senders, label="vector_multicast")

    def store_start(node):
        asg: BlockAssignment = node.storage["assignment"]
        pair = asg.node_to_pair.get(node.id)
        if pair is None:
            return
        pl: TraversalPlan = node.storage["plan"]
        want = pl.block_start_vertex(pair[0])
        for sender, chunks in out7.get(node.id, []):
            if sender == want:
                value, _ = unpack_chunks(chunks)
                node.storage["start_row"] = BitVector(n, value)
        if "start_row" not in node.storage:
            raise SchedulingError(f"pair node {node.id} missed its start row")

    engine.local(store_start)
    led.step_rounds["step7"] = led.rounds - r0

    # step 8: witnesses to every pair node
    r0 = led.rounds
    distribute_witnesses(engine, label="step8")
    led.step_rounds["step8"] = led.rounds - r0

    # step 9: column blocks to pair nodes
    r0 = led.rounds
    senders9: dict[int, tuple[list, list[int]]] = {}

    def build_cols(node):
        pl: TraversalPlan = node.storage["plan"]
        asg: BlockAssignment = node.storage["assignment"]
        c = pl.column_block_of(node.id)
        recips = asg.nodes_for_column_block(c)
        if recips:
            col: BitVector = node.storage["b_col"]
            senders9[node.id] = (pack_chunks(col.value, n, w), recips)

    engine.local(build_cols)
    out9, _ = vector_multicast(engine, senders9, label="vector_multicast")

    def store_cols(node):
        asg: BlockAssignment = node.storage["assignment"]
        pair = asg.node_to_pair.get(node.id)
        if pair is None:
            return
        pl: TraversalPlan = node.storage["plan"]
        lo, hi = pl.column_blocks[pair[1] - 1]
        cols = []
        for sender, chunks in sorted(out9.get(node.id, [])):
            value, _ = unpack_chunks(chunks)
            cols.append((sender, BitVector(n, value)))
        got = [j for j, _ in cols]
        if got != list(range(lo, hi + 1)):
            raise SchedulingError(
                f"pair node {node.id} got columns {got}, wanted {lo}..{hi}"
            )
        node.storage["columns"] = cols

    engine.local(store_cols)
    led.step_rounds["step9"] = led.rounds - r0

    # step 10: incremental multiply, then entries home
    r0 = led.rounds
    entry_items: list[RoutingItem] = []

    def multiply(node):
        asg: BlockAssignment = node.storage["assignment"]
        pair = asg.node_to_pair.get(node.id)
        if pair is None:
            return
        pl: TraversalPlan = node.storage["plan"]
        b, _ = pair
        lo, hi = pl.block_edge_range(b)
        walk = [
            (
                pl.traversal.directed_edges[i][0],
                pl.traversal.directed_edges[i][1],
                pl.traversal.edge_indices[i],
            )
            for i in range(lo, hi)
        ]
        entries = block_multiply(
            pl.block_start_vertex(b),
            node.storage["start_row"],
            walk,
            node.storage["block_witnesses"],
            node.storage["columns"],
        )
        engine.charge_work(
            node.id, (n + pl.block_costs[b - 1]) * len(node.storage["columns"])
        )
        for vertex, j, bit in entries:
            entry_items.append(
                RoutingItem(node.id, vertex, ((j - 1) << 1) | bit, cb + 1, tag=j)
            )

    engine.local(multiply)
    delivered10, _ = bounded_route(engine, entry_items, label="bounded_route")
    rows_out: dict[int, BitVector] = {}

    def assemble(node):
        value = 0
        seen = 0
        for it in delivered10.get(node.id, []):
            j = (it.payload >> 1) + 1
            bit = it.payload & 1
            mask = 1 << (j - 1)
            seen |= mask
            if bit:
                value |= mask
        if seen != (1 << n) - 1:
            raise SchedulingError(
                f"row {node.id} incomplete: {bin(seen).count('1')} of {n} entries"
            )
        row = BitVector(n, value)
        node.storage["c_row"] = row
        rows_out[node.id] = row

    engine.local(assemble)
    led.step_rounds["step10"] = led.rounds - r0

    C = BooleanMatrix(tuple(rows_out[i] for i in engine.node_ids()))
    info = {
        "m_realized": plan.total_cost,
        "t": plan.t,
        "blocks": plan.num_blocks,
        "column_blocks": len(plan.column_blocks),
    }
    return C, info


def clusmat_protocol(
    A: BooleanMatrix,
    B: BooleanMatrix,
    cfg: CliqueConfig,
    proj: ProjectionConfig | None = None,
) -> tuple[BooleanMatrix, RoundLedger, dict]:
    """Full product run on a fresh engine; node i starts with row i of A and
    row i of B and finishes with row i of C = A o B."""
    proj = proj or ProjectionConfig()
    if A.n != cfg.n or B.n != cfg.n:
        raise DimensionError(f"matrices must match n={cfg.n}")
    engine = CliqueEngine(cfg)
    C, info = run_clusmat(engine, A, B, proj)
    return C, engine.ledger, info


def _transpose_exchange(
    engine: CliqueEngine, M: BooleanMatrix, label: str = "relaxed_idt"
) -> BooleanMatrix:
    """One relaxed routing task: node j ships bit i of its row to node i,
    so node i assembles column i.  Returns the transpose of ``M``."""
    n = engine.n
    items = []
    for j in engine.node_ids():
        row = M.row(j)
        for i in engine.node_ids():
            items.append(RoutingItem(j, i, row.get(i), 1, tag=j))
    delivered, _ = solve_relaxed_idt(engine, items, label=label)
    rows: dict[int, BitVector] = {}

    def build(node):
        value = 0
        for it in delivered.get(node.id, []):
            value |= it.payload << (it.src - 1)
        rows[node.id] = BitVector(n, value)

    engine.local(build)
    return BooleanMatrix(tuple(rows[i] for i in engine.node_ids()))


def clusmat_oriented(
    A: BooleanMatrix,
    B: BooleanMatrix,
    cfg: CliqueConfig,
    proj: ProjectionConfig | None = None,
    orientation: str = "ab",
) -> tuple[BooleanMatrix, RoundLedger, dict]:
    """Product run with a forced orientation: ``ab`` follows A's rows,
    ``ba`` runs on the transposed pair and flips the result back."""
    proj = proj or ProjectionConfig()
    if orientation not in ("ab", "ba"):
        raise ValueError(f"orientation must be 'ab' or 'ba', got {orientation!r}")
    if orientation == "ab":
        return clusmat_protocol(A, B, cfg, proj)
    engine = CliqueEngine(cfg)
    C_t, info = run_clusmat(engine, B.transpose(), A.transpose(), proj)
    r0 = engine.ledger.rounds
    C = _transpose_exchange(engine, C_t)
    engine.ledger.step_rounds["orient_transpose"] = engine.ledger.rounds - r0
    return C, engine.ledger, info


def _measure_tree_cost(
    engine: CliqueEngine, tree: Tree, row_key: str, label: str
) -> int:
    """True Hamming cost of ``tree`` over the rows stored under ``row_key``:
    broadcast the tree, deliver endpoint rows to edge owners, owners report
    their edge's distance to node 1."""
    n = engine.n
    cb = _bits_for(n)
    with engine.as_node(1) as node1:
        node1.storage["hmst_tree"] = tree
    _broadcast_tree(engine, label=label)
    _deliver_endpoint_rows(engine, row_key=row_key, out_key="edge_rows")
    values: dict[int, int] = {}

    def compute(node):
        t: Tree = node.storage["tree"]
        if node.id > n - 1:
            return
        e = t.edge(node.id)
        rows = node.storage["edge_rows"]
        values[node.id] = (rows[e.u].value ^ rows[e.v].value).bit_count()
        engine.charge_work(node.id, math.ceil(n / engine.w))

    engine.local(compute)
    if engine.accounted:
        engine.charge_rounds(1, label)
        for j in sorted(values):
            if j != 1:
                engine.count_traffic(j, 1, cb)
    else:
        with engine.measure(label):
            for j in sorted(values):
                if j != 1:
                    engine.post_message(Message(j, 1, 0, j, values[j], cb))
            engine.advance_round()
    return sum(values.values())


def _reset_protocol_storage(engine: CliqueEngine) -> None:
    def wipe(node):
        dict.clear(node.storage)

    engine.local(wipe)


def choose_orientation(
    A: BooleanMatrix,
    B: BooleanMatrix,
    cfg: CliqueConfig,
    proj: ProjectionConfig | None = None,
) -> tuple[BooleanMatrix, str, RoundLedger, dict]:
    """Build approximate trees for A's rows and for B's columns, measure both
    true costs, and run the product in the cheaper orientation (ties go to
    the row side).  The transposed run's result is transposed back, so the
    output equals A o B either way."""
    proj = proj or ProjectionConfig()
    if A.n != cfg.n or B.n != cfg.n:
        raise DimensionError(f"matrices must match n={cfg.n}")
    n = cfg.n
    engine = CliqueEngine(cfg)
    led = engine.ledger
    cb = _bits_for(n)

    def seed(node):
        node.storage["pa"] = A.row(node.id)
        node.storage["b_row"] = B.row(node.id)

    engine.local(seed)

    # candidate tree for the rows of A
    r0 = led.rounds
    tree_a = run_hmst(engine, proj, point_key="pa", step_prefix="orient_a_")
    led.step_rounds["orient_tree_a"] = led.rounds - r0

    # candidate tree for the columns of B (rows of B transposed)
    r0 = led.rounds
    Bt = _transpose_exchange(engine, B)

    def store_col(node):
        node.storage["pb"] = Bt.row(node.id)

    engine.local(store_col)
    tree_b = run_hmst(engine, proj, point_key="pb", step_prefix="orient_b_")
    led.step_rounds["orient_tree_b"] = led.rounds - r0

    # true costs of both candidates, compared at node 1
    r0 = led.rounds
    cost_a = _measure_tree_cost(engine, tree_a, row_key="pa", label="orient_cost")
    cost_b = _measure_tree_cost(engine, tree_b, row_key="pb", label="orient_cost")
    use_ba = cost_b < cost_a
    if engine.accounted:
        engine.charge_rounds(1, "orient_cost")
        for dst in range(2, n + 1):
            engine.count_traffic(1, dst, 1)
    else:
        with engine.measure("orient_cost"):
            for dst in range(2, n + 1):
                engine.post_message(Message(1, dst, 0, 0, int(use_ba), 1))
            engine.advance_round()
    led.step_rounds["orient_choice"] = led.rounds - r0

    _reset_protocol_storage(engine)
    if not use_ba:
        C, info = run_clusmat(engine, A, B, proj, tree=tree_a)
        orientation = "ab"
    else:
        C_t, info = run_clusmat(engine, B.transpose(), A.transpose(), proj, tree=tree_b)
        # node i holds row i of (A o B) transposed; one exchange flips it
        r0 = led.rounds
        C = _transpose_exchange(engine, C_t)
        led.step_rounds["orient_transpose"] = led.rounds - r0
        orientation = "ba"
    info = dict(info)
    info["cost_a"] = cost_a
    info["cost_b"] = cost_b
    return C, orientation, engine.ledger, info

"""Approximate minimum spanning tree of n points in {0,1}^n on the clique.

The first node draws one random GF(2) projection matrix per scale
r = 1, 2, 4, ..., 2^ceil(log2 n) and ships them to everyone; each node
projects its point to k = ceil(kappa * log2 n) bits per scale and returns
the sketches to the first node, which estimates every pairwise distance by
the smallest scale whose sketch distance passes that scale's cutoff and
builds the minimum spanning tree of the estimated graph locally.

Protocol outline (per-step round subtotals land in the ledger):

1. generate the per-scale projection matrices at node 1 and multicast them
   (or, in seed mode, broadcast one 64-bit seed and regenerate locally);
2. sketch every point locally and route all sketches to node 1;
3. estimate all pairwise distances and build the tree at node 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bits import BitVector, Tree, local_mst, pack_chunks, unpack_chunks
from .engine import CliqueConfig, CliqueEngine, Message, RoundLedger
from .errors import DimensionError, MalformedSketchError
from .routing import RoutingItem, bounded_route, vector_multicast


@dataclass(frozen=True)
class ProjectionConfig:
    """Sketch parameters.

    ``kappa`` fixes the sketch width k = ceil(kappa * log2 n); ``epsilon``
    is the error parameter the width is calibrated against and
    ``concentration_c`` the matching tail constant -- both informational.
    With ``seed_mode`` the projection matrices are regenerated at every node
    from one broadcast seed instead of being shipped bit by bit.
    """

    kappa: float = 8.0
    epsilon: float = 0.45
    seed_mode: bool = False
    concentration_c: float = 0.006

    def __post_init__(self) -> None:
        if not 0 < self.epsilon < 0.5:
            raise ValueError("epsilon must lie in (0, 1/2)")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")

    def k_for(self, n: int) -> int:
        return max(1, math.ceil(self.kappa * math.log2(n)))


def scales_for(n: int) -> tuple[int, ...]:
    """Scales 1, 2, 4, ..., 2^ceil(log2 n)."""
    return tuple(1 << j for j in range(math.ceil(math.log2(n)) + 1))


def delta_for_scale(r: int) -> float:
    """Per-entry one-probability of the scale-r projection matrix."""
    return min(0.5, 1.0 / (2.0 * r))


def flip_probability(r: int, d: float) -> float:
    """Chance that one sketch coordinate differs for points at distance d."""
    return (1.0 - (1.0 - 2.0 * delta_for_scale(r)) ** d) / 2.0


def scale_thresholds(n: int, k: int) -> dict[int, int]:
    """Per-scale acceptance cutoffs for the sketch-distance test.

    A pair passes scale r when its k-bit sketch distance is at most tau(r);
    the estimator returns the smallest passing scale.  Ideally a scale
    accepts pairs at distance <= r and rejects pairs at distance >= 1.5 r,
    but with only k = O(log n) sketch bits both duties cannot hold with
    useful margins at that boundary, so each cutoff keeps the duty that
    realistic distance spectra actually exercise:

    * scale 1 accepts exact sketch equality only -- identical points produce
      identical sketches, and any cutoff above zero lets far pairs through
      at a rate that poisons the estimated tree;
    * scales whose rejection boundary 1.5 r reaches into the bulk of
      unstructured pair distances (around n/2) sit three sigma below the
      rejection mean, so bulk pairs essentially never pass early;
    * the remaining large scales bias toward acceptance so that pairs at
      distance about r still pass and estimates never overshoot 2(d+1).
    """
    out: dict[int, int] = {}
    bulk = n / 2.0 + 2.0 * math.sqrt(n)
    for r in scales_for(n):
        if r == 1:
            out[r] = 0
            continue
        qn = flip_probability(r, r)
        qf = flip_probability(r, 1.5 * r)
        mid = k * (qn + qf) / 2.0
        sig_n = math.sqrt(k * qn * (1.0 - qn))
        sig_f = math.sqrt(k * qf * (1.0 - qf))
        if 1.5 * r <= bulk:
            tau = min(mid, k * qf - 3.0 * sig_f)
        else:
            tau = max(mid, k * qn + 3.0 * sig_n)
        out[r] = int(max(0, min(math.floor(tau), k // 2)))
    return out


def gen_projection(r: int, k: int, n: int, rng: np.random.Generator) -> tuple[int, ...]:
    """k x n binary matrix with entries one with probability delta(r),
    returned as one packed n-bit integer per row."""
    if r < 1 or r > (1 << math.ceil(math.log2(n))):
        raise ValueError(f"scale {r} out of range for n={n}")
    bits = rng.random((k, n)) < delta_for_scale(r)
    nbytes = (n + 7) // 8
    packed = np.packbits(bits, axis=1, bitorder="little")
    return tuple(
        int.from_bytes(packed[i, :nbytes].tobytes(), "little") for i in range(k)
    )


def project(rows: Sequence[int], x: BitVector) -> BitVector:
    """GF(2) matrix-vector product: output bit j is the parity of row j AND x."""
    value = 0
    xv = x.value
    for j, row in enumerate(rows):
        value |= ((row & xv).bit_count() & 1) << j
    return BitVector(len(rows), value)


@dataclass(frozen=True)
class ProjectionFamily:
    """One projection matrix per scale plus the calibrated cutoffs."""

    n: int
    k: int
    scales: tuple[int, ...]
    matrices: dict[int, tuple[int, ...]]
    thresholds: dict[int, int]

    @classmethod
    def generate(cls, n: int, k: int, rng: np.random.Generator) -> "ProjectionFamily":
        scales = scales_for(n)
        matrices = {r: gen_projection(r, k, n, rng) for r in scales}
        return cls(n, k, scales, matrices, scale_thresholds(n, k))

    @classmethod
    def from_seed(cls, n: int, k: int, seed: int) -> "ProjectionFamily":
        return cls.generate(n, k, np.random.default_rng(seed))

    def serialize_scale(self, r: int) -> tuple[int, int]:
        """(packed value, bit length) of the scale-r matrix, row-major."""
        value = 0
        for i, row in enumerate(self.matrices[r]):
            value |= row << (i * self.n)
        return value, self.k * self.n

    @classmethod
    def rows_from_bits(cls, value: int, k: int, n: int) -> tuple[int, ...]:
        mask = (1 << n) - 1
        return tuple((value >> (i * n)) & mask for i in range(k))


def sketch_point(family: ProjectionFamily, x: BitVector) -> tuple[int, ...]:
    """Sketches of x at every scale, one packed k-bit integer per scale."""
    if x.n != family.n:
        raise DimensionError(f"point length {x.n} does not match n={family.n}")
    return tuple(project(family.matrices[r], x).value for r in family.scales)


def estimate_distance(
    sketches_i: Sequence[int], sketches_j: Sequence[int], family: ProjectionFamily
) -> int:
    """Power-of-two distance estimate: the smallest scale whose sketch
    distance passes that scale's cutoff, or the top scale as fallback."""
    if len(sketches_i) != len(family.scales) or len(sketches_j) != len(family.scales):
        raise MalformedSketchError(
            f"sketch sets must cover all {len(family.scales)} scales"
        )
    for idx, r in enumerate(family.scales):
        if (sketches_i[idx] ^ sketches_j[idx]).bit_count() <= family.thresholds[r]:
            return r
    return family.scales[-1]


@dataclass(frozen=True)
class EstimatedGraph:
    """Symmetric matrix of power-of-two distance estimates (zero diagonal)."""

    n: int
    weights: tuple[tuple[int, ...], ...]

    def weight(self, i: int, j: int) -> int:
        return self.weights[i - 1][j - 1]


def build_estimated_graph(
    sketch_sets: Sequence[Sequence[int]], family: ProjectionFamily
) -> EstimatedGraph:
    n = len(sketch_sets)
    w = [[0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            est = estimate_distance(sketch_sets[i], sketch_sets[j], family)
            w[i][j] = est
            w[j][i] = est
    return EstimatedGraph(n, tuple(tuple(row) for row in w))


# ---------------------------------------------------------------------------
# the protocol
# ---------------------------------------------------------------------------

def _broadcast_from_node1(engine: CliqueEngine, payload_chunks, label: str) -> None:
    """Node 1 sends the same small chunk sequence to every other node, one
    chunk per round (used only for seed mode)."""
    n = engine.n
    if engine.accounted:
        engine.charge_rounds(len(payload_chunks), label)
        for payload, nbits in payload_chunks:
            for dst in range(2, n + 1):
                engine.count_traffic(1, dst, nbits)
        return
    with engine.measure(label):
        for seq, (payload, nbits) in enumerate(payload_chunks):
            for dst in range(2, n + 1):
                engine.post_message(Message(1, dst, 0, seq, payload, nbits))
            engine.advance_round()


def run_hmst(
    engine: CliqueEngine,
    proj: ProjectionConfig,
    point_key: str = "point",
    tree_key: str = "hmst_tree",
    step_prefix: str = "hmst_",
) -> Tree:
    """Run the tree protocol on an engine whose node i already stores its
    point under ``point_key``; leaves the tree at node 1 under ``tree_key``
    and returns it."""
    n = engine.n
    w = engine.w
    k = proj.k_for(n)
    scales = scales_for(n)
    led = engine.ledger

    # -- step 1: node 1 generates the projections and distributes them
    r0 = led.rounds
    if proj.seed_mode:
        with engine.as_node(1) as node1:
            seed64 = int(node1.rng.integers(0, 1 << 63))
            node1.storage["family"] = ProjectionFamily.from_seed(n, k, seed64)
            engine.charge_work(1, len(scales) * math.ceil(k * n / w))
        _broadcast_from_node1(engine, pack_chunks(seed64, 64, w), label="seed_bcast")

        def regen(node):
            if node.id != 1:
                node.storage["family"] = ProjectionFamily.from_seed(n, k, seed64)
                engine.charge_work(node.id, len(scales) * math.ceil(k * n / w))

        engine.local(regen)
    else:
        with engine.as_node(1) as node1:
            family1 = ProjectionFamily.generate(n, k, node1.rng)
            node1.storage["family"] = family1
            engine.charge_work(1, len(scales) * math.ceil(k * n / w))
        recipients = [v for v in range(2, n + 1)]
        received_chunks: dict[int, dict[int, list[tuple[int, int]]]] = {
            v: {r: [] for r in scales} for v in recipients
        }
        for r in scales:
            value, total_bits = family1.serialize_scale(r)
            chunks = pack_chunks(value, total_bits, w)
            for lo in range(0, len(chunks), n):
                vec = chunks[lo:lo + n]
                out, _ = vector_multicast(engine, {1: (vec, recipients)}, label="vector_multicast")
                for v in recipients:
                    for _, got in out.get(v, []):
                        received_chunks[v][r].extend(got)

        def rebuild(node):
            if node.id == 1:
                return
            mats = {}
            for r in scales:
                value, nbits = unpack_chunks(received_chunks[node.id][r])
                assert nbits == k * n
                mats[r] = ProjectionFamily.rows_from_bits(value, k, n)
            node.storage["family"] = ProjectionFamily(
                n, k, scales, mats, scale_thresholds(n, k)
            )

        engine.local(rebuild)
    led.step_rounds[step_prefix + "step1"] = led.rounds - r0

    # -- step 2: sketch locally, route every sketch set to node 1
    r0 = led.rounds
    sketch_items: list[RoutingItem] = []

    def sketch(node):
        fam: ProjectionFamily = node.storage["family"]
        pt: BitVector = node.storage[point_key]
        sk = sketch_point(fam, pt)
        node.storage["sketches"] = sk
        engine.charge_work(node.id, len(scales) * k * math.ceil(n / w))
        value = 0
        for idx, s in enumerate(sk):
            value |= s << (idx * k)
        for seq, (payload, nbits) in enumerate(pack_chunks(value, len(scales) * k, w)):
            sketch_items.append(RoutingItem(node.id, 1, payload, nbits, tag=seq))

    engine.local(sketch)
    delivered, _ = bounded_route(engine, sketch_items, label="bounded_route")
    led.step_rounds[step_prefix + "step2"] = led.rounds - r0

    # -- step 3: node 1 estimates all pairs and builds the tree locally
    r0 = led.rounds
    tree_holder: dict[str, Tree] = {}

    def estimate(node):
        if node.id != 1:
            return
        fam: ProjectionFamily = node.storage["family"]
        per_src: dict[int, list[RoutingItem]] = {}
        for it in delivered.get(1, []):
            per_src.setdefault(it.src, []).append(it)
        sketch_sets: list[tuple[int, ...]] = []
        kmask = (1 << k) - 1
        for src in range(1, n + 1):
            items = sorted(per_src[src], key=lambda it: it.tag)
            value, nbits = unpack_chunks([(it.payload, it.nbits) for it in items])
            assert nbits == len(scales) * k
            sketch_sets.append(tuple((value >> (idx * k)) & kmask for idx in range(len(scales))))
        graph = build_estimated_graph(sketch_sets, fam)
        engine.charge_work(1, (n * (n - 1) // 2) * len(scales) * math.ceil(k / w))
        tree = local_mst([list(row) for row in graph.weights])
        engine.charge_work(1, n * n)
        node.storage["estimated_graph"] = graph
        node.storage[tree_key] = tree
        tree_holder["tree"] = tree

    engine.local(estimate)
    led.step_rounds[step_prefix + "step3"] = led.rounds - r0
    return tree_holder["tree"]


def hmst_protocol(
    points: Sequence[BitVector],
    cfg: CliqueConfig,
    proj: ProjectionConfig | None = None,
) -> tuple[Tree, RoundLedger]:
    """Full run on a fresh engine: point i at node i, tree at node 1."""
    proj = proj or ProjectionConfig()
    n = cfg.n
    if len(points) != n:
        raise DimensionError(f"need {n} points, got {len(points)}")
    for p in points:
        if p.n != n:
            raise DimensionError(f"points must have dimension n={n}, got {p.n}")
    engine = CliqueEngine(cfg)

    def seed_points(node):
        node.storage["point"] = points[node.id - 1]

    engine.local(seed_points)
    tree = run_hmst(engine, proj)
    return tree, engine.ledger

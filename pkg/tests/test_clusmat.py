"""Unit tests for the tree-guided Boolean product protocol."""

import random

import pytest

from cliquemat.bits import (
    BitVector,
    BooleanMatrix,
    Traversal,
    Tree,
    WeightedEdge,
    boolean_product_naive,
    euler_traversal,
    hamming_distance,
    witnesses,
)
from cliquemat.clusmat import (
    BlockAssignment,
    assign_pairs,
    block_multiply,
    choose_orientation,
    clusmat_protocol,
    plan_blocks,
)
from cliquemat.engine import CliqueConfig
from cliquemat.errors import InvalidPlanError, InvalidWitnessError


def bv(s):
    return BitVector.from_string(s)


def make_traversal(pairs, costs, indices=None):
    indices = indices or tuple(1 for _ in pairs)
    return Traversal(pairs[0][0], tuple(pairs), tuple(indices), tuple(costs))


# ---------------------------------------------------------------------------
# plan_blocks
# ---------------------------------------------------------------------------

def test_plan_blocks_hand_example():
    # tour of a 3-vertex path with per-directed-edge costs [3, 1, 2, 2]
    tour = make_traversal(
        [(1, 2), (2, 3), (3, 2), (2, 1)], [3, 1, 2, 2], (1, 2, 2, 1)
    )
    plan = plan_blocks(tour, [3, 1, 2, 2], n=4)
    assert plan.total_cost == 8
    assert plan.t == 2
    assert plan.traversal_blocks == ((0, 2), (2, 4))
    assert plan.block_costs == (4, 4)


def test_plan_blocks_zero_cost():
    tour = make_traversal([(1, 2), (2, 1)], [0, 0], (1, 1))
    plan = plan_blocks(tour, [0, 0], n=4)
    assert plan.t == 1
    assert plan.num_blocks == 1
    assert len(plan.column_blocks) == 4
    assert all(hi == lo for lo, hi in plan.column_blocks)


def test_plan_blocks_column_arithmetic():
    # n=100, M=300 -> t=2, 50 column blocks of size 2
    tree = Tree(3, (WeightedEdge(1, 2, 75), WeightedEdge(2, 3, 75)))
    tour = euler_traversal(tree, 1)
    plan = plan_blocks(tour, [75, 75, 75, 75], n=100)
    assert plan.total_cost == 300
    assert plan.t == 2
    assert len(plan.column_blocks) == 50
    assert all(hi - lo + 1 == 2 for lo, hi in plan.column_blocks)


def test_plan_blocks_block_invariants():
    rng = random.Random(0)
    for n in (8, 32, 64):
        tree_edges = tuple(
            WeightedEdge(rng.randrange(1, i), i, 0) for i in range(2, n + 1)
        )
        tree = Tree(n, tree_edges)
        costs_by_edge = {i: rng.randrange(0, n + 1) for i in range(1, n)}
        tour = euler_traversal(tree, 1, edge_costs=costs_by_edge)
        costs = [costs_by_edge[e] for e in tour.edge_indices]
        plan = plan_blocks(tour, costs, n)
        M, t = plan.total_cost, plan.t
        assert plan.num_blocks <= t
        assert t * len(plan.column_blocks) <= n
        # blocks partition the directed edges
        flat = [i for lo, hi in plan.traversal_blocks for i in range(lo, hi)]
        assert flat == list(range(2 * (n - 1)))
        budget = -(-M // t) if M else 1
        for cost in plan.block_costs:
            assert cost <= budget + n
        # column blocks partition 1..n with sizes <= t+1
        cols = [j for lo, hi in plan.column_blocks for j in range(lo, hi + 1)]
        assert cols == list(range(1, n + 1))
        assert all(hi - lo + 1 <= t + 1 for lo, hi in plan.column_blocks)
        # every vertex appears in some block
        union = set()
        for b in range(1, plan.num_blocks + 1):
            union.update(plan.block_vertices(b))
        assert union == set(range(1, n + 1))


def test_plan_blocks_length_mismatch():
    tour = make_traversal([(1, 2), (2, 1)], [1, 1], (1, 1))
    with pytest.raises(InvalidPlanError):
        plan_blocks(tour, [1], n=4)


# ---------------------------------------------------------------------------
# assign_pairs
# ---------------------------------------------------------------------------

def test_assign_pairs_lexicographic():
    tour = make_traversal([(1, 2), (2, 1)], [4, 4], (1, 1))
    plan = plan_blocks(tour, [4, 4], n=4)  # M=8, t=2, q=2
    assert plan.t == 2 and plan.num_blocks == 2
    asg = assign_pairs(plan, 4)
    assert asg.node_for(1, 1) == 1
    assert asg.node_for(1, 2) == 2
    assert asg.node_for(2, 1) == 3
    assert asg.node_for(2, 2) == 4


def test_assign_pairs_t1_identity():
    tour = make_traversal([(1, 2), (2, 1)], [0, 0], (1, 1))
    plan = plan_blocks(tour, [0, 0], n=5)
    asg = assign_pairs(plan, 5)
    for c in range(1, 6):
        assert asg.node_for(1, c) == c


def test_assign_pairs_deterministic():
    tour = make_traversal([(1, 2), (2, 1)], [3, 3], (1, 1))
    plan = plan_blocks(tour, [3, 3], n=6)
    a = assign_pairs(plan, 6)
    b = assign_pairs(plan, 6)
    assert a.pair_to_node == b.pair_to_node


# ---------------------------------------------------------------------------
# block_multiply
# ---------------------------------------------------------------------------

def test_block_multiply_no_edges_is_inner_product():
    r = bv("1010")
    cols = [(1, bv("1000")), (2, bv("0101"))]
    out = block_multiply(3, r, [], {}, cols)
    assert out == [(3, 1, 1), (3, 2, 0)]


def test_block_multiply_two_rows_oracle():
    # rows 1010 -> (witnesses [2, 4]) -> 1111 against column 0101:
    # direct inner products give 0 and 2 shared ones, so bits 0 and 1
    start = bv("1010")
    col = bv("0101")
    nxt = bv("1111")
    assert witnesses(start, nxt) == [2, 4]
    assert (start.value & col.value).bit_count() == 0
    assert (nxt.value & col.value).bit_count() == 2
    out = block_multiply(1, start, [(1, 2, 1)], {1: [2, 4]}, [(1, col)])
    assert out == [(1, 1, 0), (2, 1, 1)]


def test_block_multiply_matches_naive_on_random_blocks():
    rng = random.Random(9)
    n = 32
    for _ in range(10):
        rows = [BitVector(n, rng.getrandbits(n)) for _ in range(4)]
        walk = [(i + 1, i + 2, i + 1) for i in range(3)]
        wit = {i + 1: witnesses(rows[i], rows[i + 1]) for i in range(3)}
        cols = [(j, BitVector(n, rng.getrandbits(n))) for j in (2, 5, 7)]
        out = block_multiply(1, rows[0], walk, wit, cols)
        for vertex, j, bit in out:
            colv = dict(cols)[j]
            expect = 1 if (rows[vertex - 1].value & colv.value) else 0
            assert bit == expect


def test_block_multiply_bad_witness():
    with pytest.raises(InvalidWitnessError):
        block_multiply(1, bv("1010"), [(1, 2, 1)], {1: [9]}, [(1, bv("1111"))])


# ---------------------------------------------------------------------------
# end-to-end protocol
# ---------------------------------------------------------------------------

def random_matrix_local(n, rng):
    return BooleanMatrix(tuple(BitVector(n, rng.getrandbits(n)) for _ in range(n)))


def test_clusmat_identity_gives_b():
    rng = random.Random(0)
    n = 8
    B = random_matrix_local(n, rng)
    for routing in ("simulated", "accounted"):
        C, _, _ = clusmat_protocol(
            BooleanMatrix.identity(n), B, CliqueConfig(n=n, routing=routing, seed=1)
        )
        assert C == B


def test_clusmat_identical_rows():
    rng = random.Random(1)
    n = 8
    row = BitVector(n, rng.getrandbits(n))
    A = BooleanMatrix(tuple(row for _ in range(n)))
    B = random_matrix_local(n, rng)
    C, ledger, info = clusmat_protocol(A, B, CliqueConfig(n=n, routing="accounted", seed=2))
    assert C == boolean_product_naive(A, B)
    assert info["m_realized"] == 0 and info["t"] == 1


def test_clusmat_random_simulated_and_accounted():
    rng = random.Random(2)
    for n in (4, 8, 16):
        A = random_matrix_local(n, rng)
        B = random_matrix_local(n, rng)
        expect = boolean_product_naive(A, B)
        for routing in ("simulated", "accounted"):
            C, ledger, _ = clusmat_protocol(
                A, B, CliqueConfig(n=n, routing=routing, seed=n)
            )
            assert C == expect, f"n={n} routing={routing}"


def test_clusmat_tiny_n2():
    A = BooleanMatrix.from_strings(["11", "01"])
    B = BooleanMatrix.from_strings(["10", "11"])
    C, _, _ = clusmat_protocol(A, B, CliqueConfig(n=2, seed=0))
    assert C == boolean_product_naive(A, B)


def test_clusmat_ledger_step_decomposition():
    rng = random.Random(3)
    n = 16
    A = random_matrix_local(n, rng)
    B = random_matrix_local(n, rng)
    _, ledger, _ = clusmat_protocol(A, B, CliqueConfig(n=n, seed=4))
    steps = {k: v for k, v in ledger.step_rounds.items() if k.startswith("step") and "_" not in k.removeprefix("step")}
    step_keys = [f"step{i}" for i in range(1, 11)]
    assert set(steps) == set(step_keys)
    assert sum(steps.values()) == ledger.rounds
    assert ledger.step_rounds["step6"] == 0  # planning is local


def test_clusmat_determinism():
    rng = random.Random(5)
    n = 16
    A = random_matrix_local(n, rng)
    B = random_matrix_local(n, rng)
    cfg = CliqueConfig(n=n, routing="accounted", seed=11)
    r1 = clusmat_protocol(A, B, cfg)
    r2 = clusmat_protocol(A, B, cfg)
    assert r1[0] == r2[0]
    assert r1[1].as_dict() == r2[1].as_dict()
    assert r1[2] == r2[2]


def test_clusmat_strict_capacity_mode():
    rng = random.Random(6)
    n = 16
    A = random_matrix_local(n, rng)
    B = random_matrix_local(n, rng)
    C, _, _ = clusmat_protocol(A, B, CliqueConfig(n=n, strict=True, seed=7))
    assert C == boolean_product_naive(A, B)


# ---------------------------------------------------------------------------
# choose_orientation
# ---------------------------------------------------------------------------

def test_orientation_prefers_clustered_rows():
    rng = random.Random(7)
    n = 8
    row = BitVector(n, rng.getrandbits(n))
    A = BooleanMatrix(tuple(row for _ in range(n)))  # identical rows: cost 0
    B = random_matrix_local(n, rng)
    C, orientation, _, info = choose_orientation(
        A, B, CliqueConfig(n=n, routing="accounted", seed=8)
    )
    assert orientation == "ab"
    assert info["cost_a"] == 0
    assert C == boolean_product_naive(A, B)


def test_orientation_prefers_clustered_columns():
    rng = random.Random(8)
    n = 8
    A = random_matrix_local(n, rng)
    col_row = BitVector(n, rng.getrandbits(n))
    B = BooleanMatrix(tuple(col_row for _ in range(n))).transpose()
    # columns of B are all equal -> column-side cost 0
    C, orientation, _, info = choose_orientation(
        A, B, CliqueConfig(n=n, routing="accounted", seed=9)
    )
    assert orientation == "ba"
    assert info["cost_b"] == 0
    assert C == boolean_product_naive(A, B)


def test_orientation_tie_breaks_to_ab():
    n = 4
    A = BooleanMatrix.identity(n)
    C, orientation, _, info = choose_orientation(
        A, A, CliqueConfig(n=n, routing="accounted", seed=10)
    )
    assert info["cost_a"] == info["cost_b"]
    assert orientation == "ab"
    assert C == boolean_product_naive(A, A)


def test_orientation_both_sides_correct_random():
    rng = random.Random(9)
    for seed in range(3):
        n = 8
        A = random_matrix_local(n, rng)
        B = random_matrix_local(n, rng)
        C, _, _, _ = choose_orientation(
            A, B, CliqueConfig(n=n, routing="accounted", seed=seed)
        )
        assert C == boolean_product_naive(A, B)


# ---------------------------------------------------------------------------
# node isolation and replicated planning
# ---------------------------------------------------------------------------

def test_clusmat_passes_isolation_audit():
    """Every local phase touches only the active node's storage."""
    from cliquemat.clusmat import run_clusmat
    from cliquemat.engine import CliqueEngine
    from cliquemat.hmst import ProjectionConfig

    rng = random.Random(10)
    n = 8
    A = random_matrix_local(n, rng)
    B = random_matrix_local(n, rng)
    engine = CliqueEngine(CliqueConfig(n=n, seed=3))
    engine.audit = True
    C, _ = run_clusmat(engine, A, B, ProjectionConfig())
    assert C == boolean_product_naive(A, B)


def test_clusmat_plans_identical_across_nodes():
    from cliquemat.clusmat import run_clusmat
    from cliquemat.engine import CliqueEngine
    from cliquemat.hmst import ProjectionConfig

    rng = random.Random(11)
    n = 16
    A = random_matrix_local(n, rng)
    B = random_matrix_local(n, rng)
    engine = CliqueEngine(CliqueConfig(n=n, routing="accounted", seed=4))
    run_clusmat(engine, A, B, ProjectionConfig())
    plans = [engine.node(i).storage["plan"] for i in engine.node_ids()]
    assignments = [engine.node(i).storage["assignment"] for i in engine.node_ids()]
    assert all(p == plans[0] for p in plans)
    assert all(a.pair_to_node == assignments[0].pair_to_node for a in assignments)


# ---------------------------------------------------------------------------
# witness distribution
# ---------------------------------------------------------------------------

def run_engine_protocol(n, A, B, routing="simulated", seed=0):
    from cliquemat.clusmat import run_clusmat
    from cliquemat.engine import CliqueEngine
    from cliquemat.hmst import ProjectionConfig

    engine = CliqueEngine(CliqueConfig(n=n, routing=routing, seed=seed))
    C, info = run_clusmat(engine, A, B, ProjectionConfig())
    return engine, C, info


def test_witnesses_at_pair_nodes_match_direct_union():
    """Every pair node ends with exactly the witness lists a direct local
    computation over its block's edges would give."""
    from cliquemat.harness import GenSpec, generate

    n = 16
    A = generate(GenSpec(n=n, kind="clustered", clusters=3, spread=3, seed=2))
    B = generate(GenSpec(n=n, kind="uniform", density=0.5, seed=3))
    engine, C, _ = run_engine_protocol(n, A, B)
    assert C == boolean_product_naive(A, B)
    for i in engine.node_ids():
        st = engine.node(i).storage
        pair = st["assignment"].node_to_pair.get(i)
        if pair is None:
            continue
        plan = st["plan"]
        got = st["block_witnesses"]
        tree = st["tree"]
        for e in plan.block_edge_ids(pair[0]):
            edge = tree.edge(e)
            expect = witnesses(A.row(edge.u), A.row(edge.v))
            assert got[e] == expect


def test_witness_delivery_free_when_rows_identical():
    n = 8
    row = bv("10110100")
    A = BooleanMatrix(tuple(row for _ in range(n)))
    B = BooleanMatrix.identity(n)
    engine, C, info = run_engine_protocol(n, A, B, routing="accounted")
    assert C == boolean_product_naive(A, B)
    assert info["m_realized"] == 0
    assert engine.ledger.step_rounds["step8"] == 0


def test_step8_rounds_fit_t_logn_shape():
    from cliquemat.harness import GenSpec, generate

    ratios = []
    for n, density in ((64, 0.13), (64, 0.5), (128, 0.1), (128, 0.5), (256, 0.08)):
        A = generate(GenSpec(n=n, kind="uniform", density=density, seed=0))
        B = generate(GenSpec(n=n, kind="uniform", density=0.5, seed=1))
        engine, _, info = run_engine_protocol(n, A, B, routing="accounted")
        import math

        ratios.append(
            engine.ledger.step_rounds["step8"] / (info["t"] * math.log2(n))
        )
    assert max(ratios) <= 4 * min(ratios)


def test_identical_rows_rounds_dominated_by_tree_step():
    """With all rows of A equal, the tree-construction step carries the
    round count; every other step together stays below it."""
    n = 32
    row = BitVector(n, 0x5A5A5A5A & ((1 << n) - 1))
    A = BooleanMatrix(tuple(row for _ in range(n)))
    B = BooleanMatrix.identity(n)
    engine, C, info = run_engine_protocol(n, A, B, routing="accounted", seed=2)
    assert C == boolean_product_naive(A, B)
    assert info["m_realized"] == 0
    steps = engine.ledger.step_rounds
    others = sum(steps[f"step{i}"] for i in range(1, 11) if i != 2)
    assert steps["step2"] > others

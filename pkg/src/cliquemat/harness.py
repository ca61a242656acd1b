"""Instance generators, oracle verification, and the benchmark grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bits import BitVector, BooleanMatrix, boolean_product_naive, local_mst
from .clusmat import clusmat_oriented
from .engine import CliqueConfig
from .errors import DimensionError
from .hmst import ProjectionConfig


@dataclass(frozen=True)
class GenSpec:
    """Parameters for one generated matrix.

    ``kind`` selects the generator: ``clustered`` draws ``clusters`` uniform
    centers and flips at most ``spread`` random coordinates per row;
    ``uniform`` fills entries i.i.d. with probability ``density``.
    """

    n: int
    kind: str = "clustered"
    clusters: int = 1
    spread: int = 0
    density: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("clustered", "uniform", "ladder"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if not 1 <= self.clusters <= self.n:
            raise ValueError("clusters must lie in 1..n")
        if not 0 <= self.spread <= self.n:
            raise ValueError("spread must lie in 0..n")
        if not 0.0 <= self.density <= 1.0:
            raise ValueError("density must lie in [0, 1]")


def _random_vector(n: int, rng: np.random.Generator, density: float = 0.5) -> BitVector:
    bits = rng.random(n) < density
    value = 0
    for i in range(n):
        if bits[i]:
            value |= 1 << i
    return BitVector(n, value)


def gen_clustered(spec: GenSpec) -> BooleanMatrix:
    """Rows scattered around ``clusters`` random centers, each row at most
    ``spread`` flips away from its center."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    centers = [_random_vector(n, rng) for _ in range(spec.clusters)]
    rows = []
    for _ in range(n):
        base = centers[int(rng.integers(spec.clusters))]
        flips = int(rng.integers(0, spec.spread + 1))
        value = base.value
        if flips:
            for c in rng.choice(n, size=flips, replace=False):
                value ^= 1 << int(c)
        rows.append(BitVector(n, value))
    return BooleanMatrix(tuple(rows))


def gen_uniform(n: int, density: float, seed: int) -> BooleanMatrix:
    """I.i.d. Bernoulli(density) entries."""
    rng = np.random.default_rng(seed)
    return BooleanMatrix(tuple(_random_vector(n, rng, density) for _ in range(n)))


def gen_ladder(spec: GenSpec) -> BooleanMatrix:
    """One dense cluster plus a chain of rows whose flipped window slides one
    coordinate at a time: ``clusters`` chain rows, window length ``spread``.

    The true MST is one window-length edge plus distance-2 chain links, so
    the cost is pinned almost deterministically; used to anchor the low end
    of benchmark grids without collapsing to a zero-cost instance.
    """
    rng = np.random.default_rng(spec.seed)
    n, L, m = spec.n, max(1, spec.spread), min(spec.clusters, spec.n)
    if m > n - L:
        raise ValueError("too many chain rows for the window length")
    center = _random_vector(n, rng)
    window = (1 << L) - 1
    rows = [BitVector(n, center.value ^ (window << i)) for i in range(m)]
    rows += [center for _ in range(n - m)]
    return BooleanMatrix(tuple(rows))


def generate(spec: GenSpec) -> BooleanMatrix:
    if spec.kind == "uniform":
        return gen_uniform(spec.n, spec.density, spec.seed)
    if spec.kind == "ladder":
        return gen_ladder(spec)
    return gen_clustered(spec)


def verify(C: BooleanMatrix, A: BooleanMatrix, B: BooleanMatrix) -> bool:
    """True iff C equals the naive Boolean product of A and B."""
    if not (A.n == B.n == C.n):
        raise DimensionError("shapes must match")
    return C == boolean_product_naive(A, B)


def exact_mst_cost(M: BooleanMatrix) -> int:
    """Cost of an exact MST of M's rows in Hamming space (local oracle)."""
    n = M.n
    rows = M.rows
    H = [[0] * n for _ in range(n)]
    for i in range(n):
        vi = rows[i].value
        for j in range(i + 1, n):
            d = (vi ^ rows[j].value).bit_count()
            H[i][j] = d
            H[j][i] = d
    return local_mst(H).cost()


# ---------------------------------------------------------------------------
# envelope fits
# ---------------------------------------------------------------------------

def fit_envelope(values: Sequence[float], models: Sequence[float]) -> dict:
    """Fit one constant C with value <= C * model across all points.

    The constant is the geometric midpoint of the extreme ratios, so the
    worst residual is sqrt(max_ratio / min_ratio) on either side.
    """
    if len(values) != len(models) or not values:
        raise ValueError("need matching, nonempty value/model sequences")
    ratios = [v / m for v, m in zip(values, models)]
    hi, lo = max(ratios), min(ratios)
    if lo <= 0:
        raise ValueError("values must be positive to fit an envelope")
    constant = math.sqrt(hi * lo)
    return {
        "constant": constant,
        "max_ratio": hi,
        "min_ratio": lo,
        "max_residual": math.sqrt(hi / lo),
    }


def rounds_model(n: int, m_realized: int) -> float:
    return math.sqrt(m_realized / n + 1.0) * math.log2(n) ** 3


def work_model(n: int, m_realized: int) -> float:
    return n * (n + m_realized) * math.log2(n) ** 3


# ---------------------------------------------------------------------------
# benchmark grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchCell:
    a_spec: GenSpec
    b_spec: GenSpec
    routing: str = "accounted"
    seed: int = 0
    orientation: str = "ab"


@dataclass
class BenchReport:
    rows: list[dict] = field(default_factory=list)
    fits: dict = field(default_factory=dict)

    def all_correct(self) -> bool:
        return all(r.get("correct") for r in self.rows)

    def as_dict(self) -> dict:
        return {"rows": self.rows, "fits": self.fits}


def default_grid(
    n_list: Sequence[int] = (64, 128, 256),
    spreads: Sequence[int] | None = None,
    seeds: Sequence[int] = (0,),
    routing: str = "accounted",
) -> list[BenchCell]:
    """Grid with realized tree cost spanning a wide range at each n: the
    spread knob moves per-row cluster radius, and a uniform cell anchors the
    high end."""
    cells = []
    for n in n_list:
        sp = spreads if spreads is not None else (2, 6, 14, 32)
        for s in sp:
            for seed in seeds:
                cells.append(
                    BenchCell(
                        a_spec=GenSpec(n=n, kind="clustered", clusters=4, spread=min(s, n), seed=seed),
                        b_spec=GenSpec(n=n, kind="uniform", density=0.5, seed=seed + 1),
                        routing=routing,
                        seed=seed,
                    )
                )
        for seed in seeds:
            cells.append(
                BenchCell(
                    a_spec=GenSpec(n=n, kind="uniform", density=0.5, seed=seed + 2),
                    b_spec=GenSpec(n=n, kind="uniform", density=0.5, seed=seed + 3),
                    routing=routing,
                    seed=seed,
                )
            )
    return cells


def run_cell(cell: BenchCell, proj: ProjectionConfig | None = None) -> dict:
    a = generate(cell.a_spec)
    b = generate(cell.b_spec)
    n = cell.a_spec.n
    cfg = CliqueConfig(n=n, routing=cell.routing, seed=cell.seed)
    C, ledger, info = clusmat_oriented(a, b, cfg, proj, orientation=cell.orientation)
    return {
        "n": n,
        "a_kind": cell.a_spec.kind,
        "clusters": cell.a_spec.clusters,
        "spread": cell.a_spec.spread,
        "density": cell.a_spec.density,
        "seed": cell.seed,
        "routing": cell.routing,
        "orientation": cell.orientation,
        "exact_mst_cost": exact_mst_cost(a),
        "m_realized": info["m_realized"],
        "t": info["t"],
        "blocks": info["blocks"],
        "rounds": ledger.rounds,
        "messages": ledger.messages,
        "bits": ledger.bits,
        "work": ledger.work_total,
        "correct": verify(C, a, b),
    }


def bench_grid(cells: Sequence[BenchCell], proj: ProjectionConfig | None = None) -> BenchReport:
    """One row per cell; per-cell failures are recorded, not raised."""
    report = BenchReport()
    for cell in cells:
        try:
            report.rows.append(run_cell(cell, proj))
        except Exception as exc:  # noqa: BLE001 - cell isolation is the point
            report.rows.append(
                {
                    "n": cell.a_spec.n,
                    "a_kind": cell.a_spec.kind,
                    "spread": cell.a_spec.spread,
                    "seed": cell.seed,
                    "routing": cell.routing,
                    "correct": False,
                    "error": f"{type(exc).__name__}: {exc}",
                }
            )
    good = [r for r in report.rows if r.get("correct")]
    if good:
        report.fits["rounds"] = fit_envelope(
            [r["rounds"] for r in good],
            [rounds_model(r["n"], r["m_realized"]) for r in good],
        )
        report.fits["work"] = fit_envelope(
            [r["work"] for r in good],
            [work_model(r["n"], r["m_realized"]) for r in good],
        )
    return report

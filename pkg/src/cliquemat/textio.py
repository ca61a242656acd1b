"""Text formats: matrices, trees, and JSON run reports.

Matrix files: first line is the decimal size n, then n lines of n characters
from {0,1}, row-major.  Tree files: n-1 lines "u v weight".
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable

from .bits import BooleanMatrix, Tree, WeightedEdge
from .engine import CliqueConfig, RoundLedger


def matrix_to_text(M: BooleanMatrix) -> str:
    return "\n".join([str(M.n)] + M.to_strings()) + "\n"


def matrix_from_text(text: str) -> BooleanMatrix:
    lines = [ln.strip() for ln in text.strip().splitlines()]
    if not lines:
        raise ValueError("empty matrix file")
    n = int(lines[0])
    rows = lines[1:]
    if len(rows) != n:
        raise ValueError(f"matrix file declares n={n} but has {len(rows)} rows")
    if any(len(r) != n for r in rows):
        raise ValueError("matrix rows must all have length n")
    return BooleanMatrix.from_strings(rows)


def write_matrix(path: str | Path, M: BooleanMatrix) -> None:
    Path(path).write_text(matrix_to_text(M))


def read_matrix(path: str | Path) -> BooleanMatrix:
    return matrix_from_text(Path(path).read_text())


def tree_to_text(tree: Tree) -> str:
    return "\n".join(f"{e.u} {e.v} {e.weight}" for e in tree.edges) + "\n"


def tree_from_text(text: str) -> Tree:
    edges = []
    for ln in text.strip().splitlines():
        u, v, w = ln.split()
        edges.append(WeightedEdge(int(u), int(v), int(w)))
    return Tree(len(edges) + 1, tuple(edges))


def write_tree(path: str | Path, tree: Tree) -> None:
    Path(path).write_text(tree_to_text(tree))


def read_tree(path: str | Path) -> Tree:
    return tree_from_text(Path(path).read_text())


def digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def run_report(
    protocol: str,
    cfg: CliqueConfig,
    ledger: RoundLedger,
    result_text: str,
    extra: dict | None = None,
) -> dict:
    report = {
        "protocol": protocol,
        "n": cfg.n,
        "W": cfg.payload_bits,
        "strict": cfg.strict,
        "seed": cfg.seed,
        "routing": cfg.routing,
        "rounds": ledger.rounds,
        "messages": ledger.messages,
        "bits": ledger.bits,
        "work_total": ledger.work_total,
        "work_max_node": ledger.work_max_node,
        "primitive_rounds": dict(sorted(ledger.primitive_rounds.items())),
        "step_rounds": dict(ledger.step_rounds),
        "result_digest": digest(result_text),
    }
    if extra:
        report.update(extra)
    return report


def write_json(path: str | Path, data: dict) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def rows_to_csv(rows: Iterable[dict]) -> str:
    rows = list(rows)
    if not rows:
        return ""
    keys: list[str] = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    lines = [",".join(keys)]
    for r in rows:
        lines.append(",".join(str(r.get(k, "")) for k in keys))
    return "\n".join(lines) + "\n"

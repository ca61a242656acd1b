"""CLI round trips through temp files."""

import json

import pytest

from cliquemat.bits import boolean_product_naive
from cliquemat.cli import main
from cliquemat.textio import (
    matrix_from_text,
    matrix_to_text,
    read_matrix,
    read_tree,
    tree_from_text,
    tree_to_text,
    write_matrix,
)


def run_cli(*argv):
    return main(list(argv))


def test_matrix_text_roundtrip(tmp_path):
    p = tmp_path / "m.txt"
    assert run_cli("gen", "--n", "8", "--kind", "uniform", "--seed", "3", "--out", str(p)) == 0
    M = read_matrix(p)
    assert M.n == 8
    assert matrix_from_text(matrix_to_text(M)) == M


def test_gen_deterministic(tmp_path):
    p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
    for p in (p1, p2):
        run_cli("gen", "--n", "16", "--clusters", "2", "--spread", "3", "--seed", "7", "--out", str(p))
    assert p1.read_text() == p2.read_text()


def test_run_clusmat_and_verify(tmp_path):
    a, b, c, rep = (tmp_path / x for x in ("a.txt", "b.txt", "c.txt", "rep.json"))
    run_cli("gen", "--n", "16", "--clusters", "2", "--spread", "2", "--seed", "1", "--out", str(a))
    run_cli("gen", "--n", "16", "--kind", "uniform", "--seed", "2", "--out", str(b))
    rc = run_cli(
        "run", "--protocol", "clusmat", "--a", str(a), "--b", str(b),
        "--routing", "accounted", "--seed", "5",
        "--out-c", str(c), "--report", str(rep),
    )
    assert rc == 0
    assert run_cli("verify", "--a", str(a), "--b", str(b), "--c", str(c)) == 0
    report = json.loads(rep.read_text())
    for key in ("rounds", "messages", "bits", "work_total", "work_max_node",
                "result_digest", "m_realized", "t", "step_rounds", "primitive_rounds"):
        assert key in report
    assert report["protocol"] == "clusmat"
    assert sum(report["step_rounds"][f"step{i}"] for i in range(1, 11)) == report["rounds"]


def test_verify_rejects_bad_product(tmp_path):
    a, b, c = (tmp_path / x for x in ("a.txt", "b.txt", "c.txt"))
    run_cli("gen", "--n", "8", "--kind", "uniform", "--seed", "1", "--out", str(a))
    run_cli("gen", "--n", "8", "--kind", "uniform", "--seed", "2", "--out", str(b))
    A, B = read_matrix(a), read_matrix(b)
    C = boolean_product_naive(A, B)
    bad = C.rows[0].flip(1)
    write_matrix(c, type(C)((bad,) + C.rows[1:]))
    assert run_cli("verify", "--a", str(a), "--b", str(b), "--c", str(c)) == 1


def test_run_clusmat_orientations_agree(tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    run_cli("gen", "--n", "8", "--kind", "uniform", "--seed", "4", "--out", str(a))
    run_cli("gen", "--n", "8", "--kind", "uniform", "--seed", "5", "--out", str(b))
    outs = {}
    for orient in ("ab", "ba", "auto"):
        c = tmp_path / f"c_{orient}.txt"
        rc = run_cli(
            "run", "--protocol", "clusmat", "--a", str(a), "--b", str(b),
            "--orientation", orient, "--routing", "accounted",
            "--out-c", str(c),
        )
        assert rc == 0
        outs[orient] = c.read_text()
    assert outs["ab"] == outs["ba"] == outs["auto"]


def test_run_hmst(tmp_path):
    pts, tree, rep = (tmp_path / x for x in ("p.txt", "t.txt", "r.json"))
    run_cli("gen", "--n", "16", "--clusters", "3", "--spread", "2", "--seed", "8", "--out", str(pts))
    rc = run_cli(
        "run", "--protocol", "hmst", "--points", str(pts),
        "--routing", "accounted", "--out-tree", str(tree), "--report", str(rep),
    )
    assert rc == 0
    t = read_tree(tree)
    assert t.n == 16
    assert tree_from_text(tree_to_text(t)).edges == t.edges
    report = json.loads(rep.read_text())
    assert report["protocol"] == "hmst"
    assert set(report["step_rounds"]) == {"hmst_step1", "hmst_step2", "hmst_step3"}


def test_bench_cli(tmp_path):
    out = tmp_path / "bench.json"
    rc = run_cli(
        "bench", "--n-list", "16", "--spreads", "0,2", "--seeds", "1",
        "--routing", "accounted", "--out", str(out),
    )
    assert rc == 0
    data = json.loads(out.read_text())
    assert len(data["rows"]) == 3  # two spreads + uniform anchor
    assert all(r["correct"] for r in data["rows"])


def test_bench_cli_csv(tmp_path, capsys):
    rc = run_cli("bench", "--n-list", "8", "--spreads", "0", "--seeds", "1",
                 "--routing", "accounted", "--format", "csv")
    captured = capsys.readouterr()
    assert rc == 0
    header = captured.out.splitlines()[0]
    assert "rounds" in header and "correct" in header


def test_max_rounds_env(tmp_path, monkeypatch):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    run_cli("gen", "--n", "8", "--kind", "uniform", "--seed", "1", "--out", str(a))
    run_cli("gen", "--n", "8", "--kind", "uniform", "--seed", "2", "--out", str(b))
    monkeypatch.setenv("CLIQUEMAT_MAX_ROUNDS", "3")
    from cliquemat.errors import MaxRoundsError

    with pytest.raises(MaxRoundsError):
        run_cli("run", "--protocol", "clusmat", "--a", str(a), "--b", str(b))

import csv
import io
import json

import pytest

from treeminer.cli import main
from treeminer.harness import (BENCH_COLUMNS, FAMILIES, InfeasibleShape, SuiteConfig, bench, check_all, feasible,
                               gen_tree, tree_depth)


@pytest.mark.parametrize("family", FAMILIES)
def test_gen_tree_shapes(family):
    for n, D in ((1, 0), (30, 5), (50, 49)):
        if not feasible(family, n, D):
            continue
        t = gen_tree(family, n, D, 3)
        assert len(t) == n
        assert tree_depth(t) <= D
        assert all(d == 1.0 for d in t.length.values())
        assert gen_tree(family, n, D, 3).dumps() == t.dumps()


def test_gen_tree_exact_shapes():
    assert tree_depth(gen_tree("path", 6, 5)) == 5
    assert tree_depth(gen_tree("star", 6, 5)) == 1
    b = gen_tree("broom", 10, 4)
    assert tree_depth(b) == 4 and len(b.leaves()) == 10 - 4
    assert tree_depth(gen_tree("binary", 15, 3)) == 3
    s = gen_tree("spider", 11, 3)
    assert len(s.children[0]) == 4 and tree_depth(s) == 3


def test_infeasible_shapes():
    for fam, n, D in (("path", 10, 5), ("broom", 5, 10), ("binary", 100, 5)):
        assert not feasible(fam, n, D)
        with pytest.raises(InfeasibleShape):
            gen_tree(fam, n, D)
    with pytest.raises(ValueError):
        gen_tree("cactus", 5, 2)


def test_empty_suite_is_header_only():
    text, bad = bench(SuiteConfig(families=(), seeds=1))
    assert text.strip() == ",".join(BENCH_COLUMNS) and bad == 0


def test_small_suite_rows():
    cfg = SuiteConfig(("star", "randrec"), (30,), (4,), (2, 3), 2, ("roundrobin", "lopsided"))
    text, bad = bench(cfg)
    rows = list(csv.DictReader(io.StringIO(text)))
    assert bad == 0
    # per instance and k: one row per scheduler plus one CTE row
    assert len(rows) == 2 * 2 * 2 * 3
    assert all(float(r["margin"]) >= 0 for r in rows)
    assert bench(cfg)[0] == text


def trace_lines(tmp_path, steps=15):
    p = tmp_path / "t.jsonl"
    assert main(["simulate", "--k", "4", "--steps", str(steps), "--seed", "2", "--trace", str(p)]) == 0
    return p.read_text().splitlines()


def test_check_all_clean_and_corrupted(tmp_path):
    lines = trace_lines(tmp_path)
    rep = check_all(lines)
    assert rep.ok and rep.events == len(lines)
    bad = [json.loads(s) for s in lines]
    bad[3]["state"]["cost"] = 1e12
    rep = check_all(json.dumps(r) for r in bad)
    assert not rep.ok and rep.first_violation == bad[3]["index"]
    assert "master" in rep.reason


def test_check_all_empty_and_malformed():
    assert check_all([]) == check_all(["", "  "])
    assert check_all([]).ok and check_all([]).events == 0
    with pytest.raises(ValueError):
        check_all(["{not json"])
    with pytest.raises(ValueError):
        check_all([json.dumps({"state": {"tree": "junk"}})])


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["simulate", "--k", "3", "--steps", "20", "--check"]) == 0
    assert main(["simulate", "--mode", "tm", "--k", "4", "--steps", "20"]) == 0
    assert main(["simulate", "--k", "1"]) == 4
    assert main(["simulate", "--adversary", "nobody"]) == 4
    assert main(["explore", "--family", "randrec", "--n", "40", "--depth", "5", "--k", "3"]) == 0
    assert main(["explore", "--mode", "cte", "--family", "path", "--n", "6", "--depth", "5", "--k", "4",
                 "--sqrt-k"]) == 0
    assert main(["explore", "--tree", str(tmp_path / "missing.txt")]) == 4
    assert main(["explore", "--family", "path", "--n", "10", "--depth", "2"]) == 4
    assert main(["traverse", "--model", "average", "--w", "4", "--N", "6", "--samples", "200"]) == 0
    assert main(["traverse", "--model", "unit", "--k", "one"]) == 4
    assert main(["bench", "--families", "star", "--ns", "20", "--Ds", "3", "--ks", "2", "--seeds", "1"]) == 0
    assert main(["bench", "--families", "moss"]) == 4
    assert main(["check", str(tmp_path / "nope.jsonl")]) == 4
    assert main(["gen", "tree", "--family", "star", "--n", "4", "--depth", "1"]) == 0
    assert main(["gen", "layered", "--w", "2", "--N", "3"]) == 0
    assert main(["frobnicate"]) == 4


def test_cli_script_and_check(tmp_path, capsys):
    s = tmp_path / "moves.txt"
    s.write_text("F 1 3\nE 2 0.5\n")
    assert main(["simulate", "--adversary", f"script:{s}", "--k", "4"]) == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out["events"] == 2 and out["error"] is None
    s.write_text("D 1\n")
    assert main(["simulate", "--adversary", f"script:{s}", "--k", "4"]) == 4
    s.write_text("Q\n")
    assert main(["simulate", "--adversary", f"script:{s}"]) == 4
    lines = trace_lines(tmp_path)
    bad = [json.loads(x) for x in lines]
    bad[0]["state"]["cost"] = 1e12
    p = tmp_path / "bad.jsonl"
    p.write_text("\n".join(json.dumps(r) for r in bad) + "\n")
    assert main(["check", str(p)]) == 3
    assert main(["check", str(tmp_path / "t.jsonl")]) == 0


def test_cli_output_is_deterministic(capsys, monkeypatch):
    args = ["traverse", "--model", "average", "--w", "3", "--N", "5", "--samples", "100"]
    monkeypatch.setenv("TREEMINER_SEED", "9")
    main(args)
    a = capsys.readouterr().out
    main(args)
    assert capsys.readouterr().out == a
    main(args + ["--seed", "10"])
    assert capsys.readouterr().out != a

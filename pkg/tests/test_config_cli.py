import csv
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from pase import errors
from pase.cli import EXIT_CODES, exit_code_for, load_pencil, main
from pase.config import parse_config
from pase.mmio import write_matrix_market
from pase.problems import square_hierarchy


def test_defaults():
    rc = parse_config("[run]\nmode = square-convergence\n")
    assert rc.tol == 1e-8
    assert rc.cg_max_iters == 40
    assert rc.max_outer == 30
    assert rc.precond == "none"
    assert rc.fine_n == [128]
    assert rc.warnings == []


def test_adaptive_mode_defaults_to_first_pair():
    assert parse_config("[run]\nmode = adaptive-lshape\n").nev == 1
    assert parse_config("[run]\nmode = adaptive-lshape\n[pase]\nnev = 3\n").nev == 3


def test_duplicate_key_warns_and_last_wins():
    rc = parse_config("[run]\nmode = square-convergence\n[pase]\nnev = 3\nnev = 5\n")
    assert rc.nev == 5
    assert rc.warnings == ["duplicate key pase.nev: last value wins"]


def test_overrides_win():
    rc = parse_config("[run]\nmode = batch\n[pase]\nnev = 4\n[batch]\nsizes = 2, 2\n", {"run.seed": "7"})
    assert rc.seed == 7
    assert rc.batch_sizes == [2, 2]


@pytest.mark.parametrize(
    "text, key",
    [
        ("", "run.mode"),
        ("[run]\nmode = nope\n", "run.mode"),
        ("[run]\nmode = batch\n", "batch.sizes"),
        ("[run]\nmode = batch\n[pase]\nnev = 4\n[batch]\nsizes = 2 1\n", "batch.sizes"),
        ("[run]\nmode = square-convergence\n[pase]\nbogus = 1\n", "pase.bogus"),
        ("[run]\nmode = square-convergence\n[extra]\na = 1\n", "extra"),
        ("mode = square-convergence\n", "<text>"),
        ("[run]\nmode = square-convergence\n[pase]\nnev = three\n", "pase.nev"),
        ("[run]\nmode = square-convergence\n[pase]\ntol = 2\n", "pase.tol"),
        ("[run]\nmode = square-convergence\n[mesh]\ncoarse_n = 16\nfine_n = 48\n", "mesh.fine_n"),
        ("[run]\nmode = algebraic\n", "algebraic.A"),
        ("[run]\nmode = adaptive-lshape\n[adaptive]\nfraction = 1.5\n", "adaptive.fraction"),
        ("[run]\nmode = square-convergence\n[pase]\nprecond = C\n", "pase.precond"),
    ],
)
def test_errors_name_the_key(text, key):
    with pytest.raises(errors.ConfigError) as info:
        parse_config(text)
    assert info.value.key == key
    assert str(info.value).startswith(key)


def test_exit_codes_are_distinct_per_error_class():
    codes = {cls: code for cls, code in EXIT_CODES.items() if cls not in (errors.MeshError, errors.NestingError)}
    assert len(set(codes.values())) == len(codes)
    assert 0 not in EXIT_CODES.values() and 1 not in EXIT_CODES.values()
    assert exit_code_for(errors.CaptureError("x")) == 10
    assert exit_code_for(errors.ConfigError("k", "m")) == 2
    assert exit_code_for(FileNotFoundError()) == 13


def _write_pencil(tmp_path, h):
    paths = {}
    for name, M in (("A", h.A_h), ("B", h.B_h), ("P", h.prolong), ("AH", h.A_H), ("BH", h.B_H)):
        paths[name] = tmp_path / ("%s.mtx" % name)
        write_matrix_market(paths[name], M)
    return paths


def test_load_pencil_galerkin_coarse(tmp_path):
    h = square_hierarchy(4, 8)
    p = _write_pencil(tmp_path, h)
    g = load_pencil(p["A"], p["B"], p["P"])
    assert_allclose(g.A_H.toarray(), h.A_H.toarray(), atol=1e-12)
    e = load_pencil(p["A"], p["B"], p["P"], p["AH"], p["BH"])
    assert_allclose(e.B_H.toarray(), h.B_H.toarray(), rtol=0)
    with pytest.raises(errors.DimensionError):
        load_pencil(p["A"], p["B"], p["AH"])


def _run(tmp_path, text, *extra):
    cfg = tmp_path / "run.ini"
    cfg.write_text(text)
    out = tmp_path / "out"
    code = main(["--config", str(cfg), "--out", str(out), *extra])
    return code, out


def test_cli_precond_compare(tmp_path):
    code, out = _run(tmp_path, "[run]\nmode = precond-compare\n[mesh]\ncoarse_n = 4\nfine_n = 16\n[pase]\nnev = 4\n",
                     "--threads", "1")
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["modes_agree"] and summary["all_converged"]
    rows = list(csv.DictReader(open(out / "eigenvalues.csv")))
    assert len(rows) == 16
    assert {r["run"] for r in rows} == {"none", "A", "B", "B-A"}
    # eigenvalues are written with full round-trip precision
    assert float(rows[0]["eigenvalue"]) == summary["runs"]["none"]["eigenvalues"][0]
    hist = list(csv.DictReader(open(out / "history.csv")))
    assert hist and set(hist[0]) == {"run", "block", "outer_iteration", "pair", "residual"}


def test_cli_square_and_batch(tmp_path):
    code, out = _run(tmp_path, "[run]\nmode = square-convergence\n[mesh]\ncoarse_n = 4\nfine_n = 8 16\n[pase]\nnev = 3\n")
    assert code == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["runs"]["n16"]["upper_bounds"]
    assert len(s["error_ratios"]) == 1
    code, out = _run(tmp_path, "[run]\nmode = batch\n[mesh]\ncoarse_n = 8\nfine_n = 16\n[pase]\nnev = 8\n"
                               "[batch]\nsizes = 4 4\ncompare = yes\n", "--seed", "3")
    s = json.loads((out / "summary.json").read_text())
    assert code == 0 and s["seed"] == 3
    assert s["max_batch_difference"] < 1e-8


def test_cli_algebraic(tmp_path):
    p = _write_pencil(tmp_path, square_hierarchy(4, 16))
    text = "[run]\nmode = algebraic\n[pase]\nnev = 3\n[algebraic]\nA = %s\nB = %s\nprolongation = %s\n" % (
        p["A"], p["B"], p["P"])
    code, out = _run(tmp_path, text)
    assert code == 0
    assert json.loads((out / "summary.json").read_text())["runs"]["algebraic"]["ndofs_fine"] == 225


def test_cli_not_converged_exit_status(tmp_path):
    code, _ = _run(tmp_path, "[run]\nmode = square-convergence\n[mesh]\ncoarse_n = 4\nfine_n = 32\n"
                             "[pase]\nnev = 3\nmax_outer = 1\ntol = 1e-12\n")
    assert code == 1


def test_cli_error_exit_codes(tmp_path, capsys):
    code, _ = _run(tmp_path, "[run]\nmode = wrong\n")
    assert code == 2
    assert "run.mode" in capsys.readouterr().err
    bad = tmp_path / "bad.mtx"
    bad.write_text("not a matrix\n")
    code, _ = _run(tmp_path, "[run]\nmode = algebraic\n[algebraic]\nA = %s\nB = %s\nprolongation = %s\n" % (bad, bad, bad))
    assert code == 3
    code = main(["--config", str(tmp_path / "missing.ini")])
    assert code == 13
    code, _ = _run(tmp_path, "[run]\nmode = square-convergence\n[mesh]\ncoarse_n = 2\nfine_n = 8\n[pase]\nnev = 4\n")
    assert code == 4


def test_cli_duplicate_key_logged(tmp_path, caplog):
    caplog.set_level("WARNING")
    code, _ = _run(tmp_path, "[run]\nmode = square-convergence\n[mesh]\ncoarse_n = 4\nfine_n = 8\n[pase]\nnev = 2\nnev = 2\n")
    assert code == 0
    assert "duplicate key pase.nev" in caplog.text


def test_inline_comments_are_stripped():
    rc = parse_config("[run]\nmode = square-convergence ; trailing note\n[mesh]\nfine_n = 16 32  # two sizes\n")
    assert rc.mode == "square-convergence"
    assert rc.fine_n == [16, 32]

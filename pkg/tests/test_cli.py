import csv
import io
import math
import subprocess
import sys

import pytest

from ncfield import bounds, cli
from ncfield.montecarlo import CSV_COLUMNS

FAST = ["--replicates", "40", "--set", "approx.depths=0,1", "--set", "stat_approx.depths=0",
        "--set", "swap.depth=1", "--set", "deviation.depth=1", "--set", "deviation.replicates=100",
        "--set", "deviation.tail_probs=0.5,0.2"]


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def table(text):
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == CSV_COLUMNS
    return rows[1:]


def test_bound_upsilon_example(capsys):
    code, out, _ = run(capsys, "bound", "--kappa", "1", "--rho", "0.5", "--d", "10", "--quantity", "upsilon")
    assert code == 0
    (row,) = table(out)
    assert row[:2] == ["upsilon", "10"]
    assert float(row[6]) == pytest.approx((1 / math.log(2)) * (1 - 2**-10) + 1, rel=1e-14)


def test_bound_deviation_uses_desk_geometry(capsys):
    code, out, _ = run(capsys, "bound", "--quantity", "deviation_tilde", "--epsilon", "300", "--d", "4")
    assert code == 0
    (row,) = table(out)
    from ncfield.innovations import TruncatedGaussian
    from ncfield.lattice import IndexSet, Orthotope
    tg = TruncatedGaussian()
    p = bounds.BoundParams.from_geometry(IndexSet.interval(64), Orthotope((1,)), Orthotope((1,)), 4, 0.4,
                                         tg.v_m(1), tg.v_inf())
    assert float(row[6]) == bounds.deviation_bound_tilde(300.0, p).value


def test_combinatorics_desk_counts(capsys):
    code, out, _ = run(capsys, "combinatorics", "--d", "4")
    got = {r[0]: r[4] for r in table(out)}
    assert code == 0
    assert got == {"count_n": "64", "count_n_b": "3", "count_n_bbar": "3", "count_n_d": "9", "count_N1": "66",
                   "count_N2": "72"}


def test_missing_config_exits_two(capsys, tmp_path):
    code, out, err = run(capsys, "verify-approx", "--config", str(tmp_path / "nope.cfg"))
    assert code == 2 and out == "" and "config not found" in err


def test_bad_config_key_exits_two(capsys, tmp_path):
    cfg = tmp_path / "a.cfg"
    cfg.write_text("model.type = ar\nbogus.key = 1\n")
    code, _, err = run(capsys, "verify-approx", "--config", str(cfg))
    assert code == 2 and "bogus.key" in err


def test_non_contractive_config_exits_two(capsys):
    code, _, err = run(capsys, "verify-approx", "--set", "model.alpha_left=0.5", "--set", "model.alpha_right=0.5",
                       "--set", "model.beta=0.1")
    assert code == 2 and err


def test_brnn_without_beta_is_a_config_error(capsys):
    code, _, err = run(capsys, "verify-swap", "--set", "model.type=brnn", "--set", "model.matrix=0.3,0.3")
    assert code == 2 and "model.beta" in err


def test_desk_brnn_swap_check(capsys):
    code, out, _ = run(capsys, "verify-swap", "--replicates", "200", "--set", "model.type=brnn",
                       "--set", "model.matrix=0.3,0.3", "--set", "model.beta=0.3", "--set", "model.activation=tanh")
    rows = table(out)
    assert code == 0
    assert all(r[8] == "true" for r in rows)
    assert float(next(r for r in rows if r[0] == "swap_h_shell")[4]) > 0


def test_unknown_flag_and_help(capsys):
    assert cli.main(["bound", "--quantity", "upsilon", "--frobnicate"]) == 2
    assert cli.main(["--help"]) == 0
    out = capsys.readouterr().out
    assert "selfcheck" in out and "run-all" in out


def test_deviation_with_too_few_replicates_exits_two(capsys):
    code, _, err = run(capsys, "verify-deviation", "--set", "deviation.replicates=50")
    assert code == 2 and "deviation replicates" in err


def test_deviation_with_unbounded_innovations_exits_two(capsys):
    code, out, err = run(capsys, "verify-deviation", "--set", "innovations.distribution=gaussian")
    assert code == 2 and out == "" and "bounded innovations" in err


def test_seed_precedence():
    parser = cli.build_parser()
    args = parser.parse_args(["verify-approx"])
    assert cli.resolve_plan(args, {}).seed == 0
    assert cli.resolve_plan(args, {"NCF_SEED": "7"}).seed == 7
    args = parser.parse_args(["verify-approx", "--set", "plan.seed=9"])
    assert cli.resolve_plan(args, {"NCF_SEED": "7"}).seed == 9
    args = parser.parse_args(["verify-approx", "--set", "plan.seed=9", "--seed", "11"])
    assert cli.resolve_plan(args, {"NCF_SEED": "7"}).seed == 11


def test_config_file_below_set(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("plan.seed = 5\nplan.replicates = 77\n")
    args = cli.build_parser().parse_args(["run-all", "--config", str(cfg), "--set", "plan.replicates=88"])
    plan = cli.resolve_plan(args, {"NCF_SEED": "3"})
    assert (plan.seed, plan.replicates) == (5, 88)


def test_verify_approx_is_deterministic_and_writes_outputs(capsys, tmp_path):
    code1, out1, err1 = run(capsys, "verify-approx", *FAST, "--output-dir", str(tmp_path / "a"))
    code2, out2, _ = run(capsys, "verify-approx", *FAST, "--output-dir", str(tmp_path / "b"))
    assert code1 == code2 == 0
    assert out1 == out2
    assert "verdict: PASS" in err1
    for name in ("results.csv", "approx_decay.csv", "stat_approx.csv", "summary.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    resolved = (tmp_path / "a" / "resolved.cfg").read_text().splitlines()
    assert f"plan.output_dir = {tmp_path / 'a'}" in resolved and "approx.depths = 0,1" in resolved
    assert (tmp_path / "a" / "results.csv").read_text() == out1


def test_stdout_is_only_csv(capsys):
    code, out, err = run(capsys, "run-all", *FAST)
    assert code == 0
    assert all(len(r) == len(CSV_COLUMNS) for r in table(out))
    assert "PASS" not in out and "verdict" in err


def test_selfcheck_passes_and_is_stable(capsys):
    code1, out1, err1 = run(capsys, "selfcheck")
    code2, out2, _ = run(capsys, "selfcheck")
    assert code1 == code2 == 0 and out1 == out2
    assert [r[0] for r in table(out1)] == [f"selfcheck_{n}" for n in cli.SELFCHECKS]
    assert err1.count("PASS") == len(cli.SELFCHECKS)


def test_selfcheck_catches_a_broken_upsilon(capsys):
    rows, ok = cli.selfcheck(lambda k, r, d: 0.5 * bounds.upsilon(k, r, d))
    err = capsys.readouterr().err
    assert not ok
    assert "FAIL upsilon_dominance" in err and "PASS dilation_cardinality" in err
    assert {r.experiment for r in rows if not r.passed} == {"selfcheck_upsilon_dominance"}


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ncfield.cli", "bound", "--quantity", "recommend_d", "--n",
                           "22026"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert table(proc.stdout)[0][6] == "10"

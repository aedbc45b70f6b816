import subprocess
import sys
import time

import pytest

from epdgscan.cli import EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, main

DEMO = "scenarios/demo.yaml"


def test_gen_count_only_subprocess():
    t0 = time.monotonic()
    out = subprocess.run([sys.executable, "-m", "epdgscan", "gen", "--count-only"], capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "1100000"
    assert time.monotonic() - t0 < 5


@pytest.mark.parametrize("variant, count", [("sos", "1100000"), ("both", "2200000")])
def test_gen_count_variants(capsys, variant, count):
    assert main(["gen", "--variant", variant, "--count-only"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == count


def test_gen_streams_names():
    proc = subprocess.Popen([sys.executable, "-m", "epdgscan", "gen"], stdout=subprocess.PIPE, text=True)
    first = [proc.stdout.readline().strip() for _ in range(3)]
    proc.kill()
    proc.wait()
    assert first[0] == "epdg.epc.mnc00.mcc000.pub.3gppnetwork.org"
    assert all(n.startswith("epdg.epc.mnc") for n in first)


@pytest.mark.parametrize("argv", [[], ["teleport"], ["gen", "--bogus"], ["--rate", "fast", "gen"], ["sim"], ["gen", "--variant", "x"]])
def test_usage_errors_exit_2(capsys, argv):
    assert main(argv) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_help_exits_0(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "discover" in capsys.readouterr().out


@pytest.mark.parametrize("cmd", ["discover", "probe", "locate"])
def test_campaign_commands_need_config(capsys, cmd):
    assert main([cmd]) == EXIT_USAGE
    assert "--config" in capsys.readouterr().err


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("vantages: [{id: a, v4: false}]\n")
    assert main(["discover", "--config", str(cfg)]) == EXIT_USAGE
    cfg.write_text("- just\n- a list\n")
    assert main(["discover", "--config", str(cfg)]) == EXIT_USAGE
    assert main(["discover", "--config", str(tmp_path / "missing.yaml")]) == EXIT_USAGE


def test_all_vantages_failing_is_exit_1(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("vantages: [{id: broken, driver: external_exec, command: 'false {cmd}'}]\n"
                   "targets: [epdg.epc.mnc001.mcc001.pub.3gppnetwork.org]\n")
    assert main(["discover", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_PARTIAL
    assert main(["locate", "--config", str(cfg)]) == EXIT_PARTIAL
    assert "unusable" in capsys.readouterr().out


def test_report_on_empty_logs(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "country_status.csv").read_text().startswith("iso2,status\n")
    assert "IPv4: 0 of 0" in capsys.readouterr().out


def test_sim_demo_matches(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["sim", "--scenario", DEMO, "--out", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "ok: pipeline matches ground truth for scenario demo" in text
    assert (out / "report.json").exists() and (out / "probes.jsonl").exists()
    # the later stages rerun from the logs alone
    assert main(["classify", "--out", str(out)]) == EXIT_OK
    assert main(["report", "--out", str(out)]) == EXIT_OK
    assert "blocked_dns" in (out / "country_status.csv").read_text()
    # an output directory that already holds a campaign is refused
    assert main(["sim", "--scenario", DEMO, "--out", str(out)]) == EXIT_USAGE


def test_sim_mismatch_exits_nonzero_with_diff(capsys):
    # with a zero ratio nothing can count as blocked, so the pipeline disagrees with the scenario
    assert main(["sim", "--scenario", DEMO, "--ratio", "0"]) == EXIT_PARTIAL
    err = capsys.readouterr().err
    assert err.startswith("MISMATCH:")
    assert "verdict epdg.epc.mnc30.mcc216.pub.3gppnetwork.org v4" in err


def test_sim_bad_scenario(tmp_path, capsys):
    bad = tmp_path / "s.yaml"
    bad.write_text("operators: [{mcc: '262', mnc: '01', home_country: DE}]\nvantages: []\n")
    assert main(["sim", "--scenario", str(bad)]) == EXIT_USAGE
    assert main(["sim", "--scenario", str(tmp_path / "none.yaml")]) == EXIT_USAGE
    assert "bad scenario" in capsys.readouterr().err


def test_global_flags_before_or_after_subcommand(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "report"]) == EXIT_OK
    assert main(["report", "--out", str(tmp_path / "b")]) == EXIT_OK
    assert (tmp_path / "report.json").exists() and (tmp_path / "b" / "report.json").exists()

import pytest

from msp_pretrain.exceptions import EmptyInputError
from msp_pretrain.probes.compare import SUMMARY_HEADER, compare_runs
from msp_pretrain.probes.leakage import LeakageReport, LeakageRow
from msp_pretrain.probes.linear import ProbeResult


def probe(arm, acc):
    return ProbeResult(arm, acc, (acc,) * 4)


def leak(*recalls):
    return LeakageReport([LeakageRow(f, r, 10, (0,)) for f, r in zip((1.0, 0.25, 0.05), recalls)])


def test_probe_gain_check():
    result = compare_runs([probe("pretrained", 0.8), probe("scratch", 0.7), probe("pretrained", 0.9)])
    (check,) = result.checks
    assert check.observed == pytest.approx(0.15)
    assert check.passed
    assert [r.delta for r in result.rows] == [0.0, pytest.approx(-0.1), pytest.approx(0.1)]


def test_probe_gain_too_small():
    result = compare_runs([probe("pretrained", 0.71), probe("scratch", 0.7)], accuracy_margin=0.03)
    assert not result.passed


def test_one_arm_has_no_check():
    assert compare_runs([probe("scratch", 0.5)]).checks == []


def test_leakage_checks():
    result = compare_runs([leak(0.9, 0.6, 0.2), leak(0.8, 0.78, 0.1)], leakage_margin=0.05)
    assert [c.passed for c in result.checks] == [True, True, False, True]
    deltas = [r.delta for r in result.rows if r.report == 1]
    assert deltas == [pytest.approx(-0.1), pytest.approx(0.18), pytest.approx(-0.1)]
    assert not result.passed


def test_outputs(tmp_path):
    result = compare_runs([probe("pretrained", 0.8), probe("scratch", 0.7), leak(0.9, 0.5, 0.1)])
    lines = result.to_csv().splitlines()
    assert lines[0] == SUMMARY_HEADER
    assert lines[1] == "0,probe,pretrained,0.8,0.0"
    assert len(lines) == 1 + 2 + 3
    text = result.to_text()
    assert "PASS pretrained beats scratch" in text
    assert text.count("PASS") == 3
    path = tmp_path / "summary.csv"
    result.write_csv(path)
    assert path.read_text() == result.to_csv()


def test_nothing_to_compare():
    with pytest.raises(EmptyInputError):
        compare_runs([])

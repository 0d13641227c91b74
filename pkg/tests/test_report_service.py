import pytest

from app.models.experiment import ReportRow, ResultsReport, SeedRecord
from app.services.report_service import CSV_COLUMNS, emit_report, load_report, parse_formats, report_csv


@pytest.fixture
def report():
    rows = [
        ReportRow(learner=learner, arm=arm, panel=panel, T=T, mean=0.5, std=0.01, proportion=p, success=0.7)
        for panel in ("uniform", "favor-pi2")
        for learner in ("vanilla_q", "ctcat_q")
        for T in (5, 10)
        for arm, p in (("pi1", 0.9), ("pi2", 0.1))
    ]
    records = [
        SeedRecord(seed=0, learner="ctcat_q", panel="uniform", estimates=[0.3, 0.1], preferred_arm="pi1",
                   selections={5: [0.9, 0.1]}, success={5: 0.7}),
        SeedRecord(seed=0, learner="thompson", panel="uniform", error="UnsupportedRewardError: reward -1.0"),
    ]
    return ResultsReport(scenario="predprey-synthetic", master_seed=3, arm_names=["pi1", "pi2"], rows=rows, records=records)


def test_empty_report_has_header_only():
    text = report_csv(ResultsReport(scenario="kidney", master_seed=0))
    assert text == ",".join(CSV_COLUMNS) + "\n"


def test_csv_rows(report):
    lines = report_csv(report).splitlines()
    assert len(lines) == 1 + len(report.rows)
    assert lines[1] == "vanilla_q,pi1,uniform,5,0.500000,0.010000,0.900000,0.700000"


def test_bandit_rows_leave_window_empty():
    bandit = ResultsReport(
        scenario="kidney",
        master_seed=0,
        rows=[ReportRow(learner="ctcat_q", arm="open", panel="kidney", mean=0.8325, std=0.005, proportion=1.0)],
    )
    assert report_csv(bandit).splitlines()[1] == "ctcat_q,open,kidney,,0.832500,0.005000,1.000000,"


def test_emit_all_formats(report, tmp_path):
    written = emit_report(report, "csv,json,svg", tmp_path / "out")
    names = sorted(p.name for p in written)
    assert names == ["report.csv", "report.json", "selection_favor-pi2.svg", "selection_uniform.svg"]
    svg = (tmp_path / "out" / "selection_uniform.svg").read_text()
    assert svg.lstrip().startswith("<?xml")


def test_json_round_trip(report, tmp_path):
    emit_report(report, ["json"], tmp_path)
    loaded = load_report(tmp_path / "report.json")
    assert loaded == report
    assert loaded.records[0].selections == {5: [0.9, 0.1]}
    assert [r.learner for r in loaded.errors] == ["thompson"]


def test_svg_is_stable(report, tmp_path):
    emit_report(report, "svg", tmp_path / "a")
    emit_report(report, "svg", tmp_path / "b")
    assert (tmp_path / "a" / "selection_uniform.svg").read_text() == (tmp_path / "b" / "selection_uniform.svg").read_text()


def test_unknown_format():
    assert parse_formats(" CSV, json ") == ["csv", "json"]
    with pytest.raises(ValueError, match="unknown report format"):
        parse_formats("csv,xlsx")

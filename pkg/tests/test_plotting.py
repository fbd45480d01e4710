import pytest

from teleop.plotting import plot_report, render_summary, trend_series
from teleop.reports import ReportValidationError, write_report


def _row(method, succ, g_mpjpe, fraction=None, successful=True):
    split = 0.8 * g_mpjpe if successful else None
    return {
        "method": method, "state_dim": 138, "sim2real": True, "succ": succ, "g_mpjpe": g_mpjpe,
        "mpjpe": g_mpjpe / 2, "acc": 3.0, "vel": 4.0, "succ_g_mpjpe": split, "succ_mpjpe": split,
        "succ_acc": 2.0 if successful else None, "succ_vel": 3.0 if successful else None,
        "num_sequences": 9, "config_hash": "abc", "fraction": fraction,
    }


@pytest.fixture
def report_csv(tmp_path):
    path = tmp_path / "report.csv"
    write_report([_row("privileged", 0.9, 40.0), _row("reduced", 0.0, 120.0, successful=False)], path)
    return path


class TestTrendSeries:
    """Test training-set size series"""

    def test_groups_and_averages(self):
        """Test rows are grouped by method and averaged per fraction"""
        rows = [_row("deploy", 0.4, 60.0, 0.5), _row("deploy", 0.6, 40.0, 0.5), _row("deploy", 0.9, 30.0, 1.0),
                _row("deploy", 1.0, 10.0)]

        series = trend_series(rows)

        assert list(series) == ["deploy"]
        assert series["deploy"][0] == pytest.approx((0.5, 0.5, 50.0))
        assert series["deploy"][1] == pytest.approx((1.0, 0.9, 30.0))

    def test_no_fractions(self):
        """Test rows without fractions give no series"""
        assert trend_series([_row("deploy", 0.5, 10.0)]) == {}


class TestPlotReport:
    """Test rendering a report into figures and a summary"""

    def test_baselines_and_summary(self, tmp_path, report_csv):
        """Test the baseline figure and summary are written"""
        files = plot_report(report_csv, tmp_path / "plots")

        assert [f.name for f in files] == ["baselines.svg", "summary.md"]
        assert files[0].read_text().lstrip().startswith("<?xml")
        summary = files[1].read_text()
        assert "| privileged | 138 | yes | 90.0 | 40.0 | 20.0 | 3.0 | 4.0 | 9 |" in summary
        assert "| reduced | - | - | - | - |" in summary
        assert "Training set size" not in summary

    def test_trend_figure(self, tmp_path):
        """Test rows with fractions add the trend figure"""
        path = tmp_path / "report.csv"
        write_report([_row("deploy", 0.3, 50.0, 0.25), _row("deploy", 0.7, 30.0, 1.0)], path)

        files = plot_report(path, tmp_path / "plots")

        assert [f.name for f in files] == ["baselines.svg", "trend.svg", "summary.md"]
        assert "| deploy | 0.25 | 30.0 | 50.0 |" in files[-1].read_text()

    def test_deterministic(self, tmp_path, report_csv):
        """Test rendering twice gives identical files"""
        first = plot_report(report_csv, tmp_path / "a")
        second = plot_report(report_csv, tmp_path / "b")

        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes()

    def test_missing_report(self, tmp_path):
        """Test plotting a report that does not exist"""
        with pytest.raises(ReportValidationError, match="not found"):
            plot_report(tmp_path / "missing.csv", tmp_path / "plots")

    def test_render_summary_lists_figures(self, tmp_path):
        """Test the summary links every figure by file name"""
        summary = render_summary([_row("deploy", 0.5, 10.0)], [tmp_path / "baselines.svg"], "report.csv")

        assert "Source: `report.csv`" in summary
        assert "- ![baselines.svg](baselines.svg)" in summary

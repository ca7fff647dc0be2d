import json
import math

import pytest

from headplan import cli
from headplan.costmodel import bundled_descriptor_path

from conftest import square_label


def run_cli(argv, capsys):
    try:
        code = cli.main(argv)
    except SystemExit as e:  # argparse usage failures
        code = e.code
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def labels_with_area(n, area, category="car"):
    side = math.sqrt(area)
    return [square_label(3 + (i % 40) * 2, 3 + (i % 11) * 2, side, category)
            for i in range(n)]


@pytest.fixture
def paper_shape_file(bdd_file):
    """Ratios at width 800 shaped like the reference distribution:
    H1 under 1%, real mass on H2..H5."""
    labels = (labels_with_area(5, 20) + labels_with_area(200, 100)
              + labels_with_area(400, 300) + labels_with_area(250, 1000)
              + labels_with_area(145, 9000))
    return bdd_file([{"name": "x.jpg", "labels": labels}])


class TestAnalyze:
    def test_csv_has_six_buckets_per_width(self, paper_shape_file, tmp_path, capsys):
        csv_path = tmp_path / "rows.csv"
        code, _, _ = run_cli(["analyze", "--ann", str(paper_shape_file),
                              "--format", "bdd", "--win", "416,800,1504",
                              "--csv", str(csv_path)], capsys)
        assert code == 0
        rows = csv_path.read_text().strip().splitlines()
        assert len(rows) == 1 + 18  # header + 3 widths x 6 buckets

    def test_unknown_format_is_usage_error(self, paper_shape_file, capsys):
        code, _, _ = run_cli(["analyze", "--ann", str(paper_shape_file),
                              "--format", "voc"], capsys)
        assert code == 2

    def test_single_bucket_dataset_lands_where_the_table_says(self, bdd_file, capsys):
        # area 10000 at w_o=1280, width 416: bounds (49,...,9801) -> H5
        path = bdd_file([{"name": "x", "labels": labels_with_area(8, 10000)}])
        code, out, _ = run_cli(["analyze", "--ann", str(path), "--format", "bdd",
                                "--win", "416"], capsys)
        assert code == 0
        rep = json.loads(out)
        counts = rep["histograms"][0]["counts"]
        assert counts["H5"] == 8
        assert sum(counts.values()) == 8

    def test_missing_file_is_usage_error(self, tmp_path, capsys):
        code, _, err = run_cli(["analyze", "--ann", str(tmp_path / "nope.json"),
                                "--format", "bdd"], capsys)
        assert code == 2
        assert "error" in err


class TestRecommend:
    def test_reference_shape_gives_h2_to_h5_and_cross_pair(self, paper_shape_file, capsys):
        code, out, _ = run_cli(["recommend", "--ann", str(paper_shape_file),
                                "--format", "bdd", "--win", "800"], capsys)
        assert code == 0
        rep = json.loads(out)
        assert rep["matched"]["heads"] == "H2,H3,H4,H5"
        assert rep["cross_scale"]["heads"] == "H2,H4"

    def test_excessive_tau_fails_with_status_one(self, paper_shape_file, capsys):
        code, out, _ = run_cli(["recommend", "--ann", str(paper_shape_file),
                                "--format", "bdd", "--win", "800",
                                "--tau", "0.99"], capsys)
        assert code == 1
        assert "error" in json.loads(out)["matched"]

    def test_single_head_mass_reports_span_error(self, bdd_file, capsys):
        path = bdd_file([{"name": "x", "labels": labels_with_area(10, 90000)}])
        code, out, _ = run_cli(["recommend", "--ann", str(path), "--format", "bdd",
                                "--win", "800"], capsys)
        assert code == 1
        rep = json.loads(out)
        assert rep["matched"]["heads"] == "H5"
        assert "span of size 1" in rep["cross_scale"]["error"]


class TestCost:
    def test_three_head_params_near_anchor(self, capsys):
        arch = str(bundled_descriptor_path("yolov5s"))
        code, out, _ = run_cli(["cost", "--arch", arch, "--heads", "H3,H4,H5",
                                "--win", "416"], capsys)
        assert code == 0
        params = json.loads(out)["cost"]["params"]
        assert abs(params - 7.05e6) / 7.05e6 <= 0.05

    def test_compare_reports_negative_delta(self, capsys):
        arch = str(bundled_descriptor_path("yolov5s_5head"))
        code, out, _ = run_cli(["cost", "--arch", arch, "--heads", "H1,H3",
                                "--win", "416", "--compare", "H1,H2,H3,H4,H5"],
                               capsys)
        assert code == 0
        delta = json.loads(out)["compare"]["delta"]
        assert delta["params"] < 0 and delta["macs"] < 0

    def test_indivisible_width_is_usage_error(self, capsys):
        arch = str(bundled_descriptor_path("yolov5s"))
        code, _, err = run_cli(["cost", "--arch", arch, "--heads", "H3,H4,H5",
                                "--win", "415"], capsys)
        assert code == 2
        assert "divisible" in err


class TestRfcheck:
    def test_reference_values(self, capsys):
        code, out, _ = run_cli(["rfcheck", "--channels", "32", "--seed", "42"], capsys)
        assert code == 0
        checks = json.loads(out)["checks"]
        assert checks["gridding"]["support_module"] == 25
        assert checks["gridding"]["support_r8_branch"] == 9
        assert checks["receptive_field"]["analytic"] == 17
        assert checks["receptive_field"]["empirical_bbox"] == [17, 17]
        assert checks["gradcheck"]["pass"] is True

    def test_indivisible_channels_is_usage_error(self, capsys):
        code, _, _ = run_cli(["rfcheck", "--channels", "30"], capsys)
        assert code == 2

    def test_same_seed_same_bytes(self, tmp_path, capsys):
        out_path = tmp_path / "rf.json"
        argv = ["rfcheck", "--channels", "32", "--seed", "7", "--out", str(out_path)]
        run_cli(argv, capsys)
        first = out_path.read_bytes()
        run_cli(argv, capsys)
        assert out_path.read_bytes() == first


class TestReportShape:
    def test_report_is_sorted_json_with_version(self, paper_shape_file, capsys):
        code, out, _ = run_cli(["analyze", "--ann", str(paper_shape_file),
                                "--format", "bdd", "--win", "800"], capsys)
        assert code == 0
        rep = json.loads(out)
        assert rep["tool"] == "headplan"
        assert rep["version"]
        assert rep["status"] == "ok"
        # six-significant-digit policy: no float should carry more precision
        def walk(v):
            if isinstance(v, float):
                assert float(f"{v:.6g}") == v
            elif isinstance(v, dict):
                for x in v.values():
                    walk(x)
            elif isinstance(v, list):
                for x in v:
                    walk(x)
        walk(rep)

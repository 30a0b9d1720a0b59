import json

import numpy as np
import pytest

from efdm.conformal import DetectionReport, split_full_training
from efdm.detectors import train_detector
from efdm.errors import DataFormatError, InvalidInputError
from efdm.fda import FunctionalSample, Grid
from efdm.io import (
    FORMAT_VERSION,
    atomic_write_text,
    load_model,
    model_from_dict,
    model_to_dict,
    read_labels,
    read_sample,
    reports_to_csv,
    save_model,
    write_labels,
    write_sample,
)
from efdm.simgen import generate, paper_defaults


@pytest.fixture(scope="module")
def train_sample():
    return generate(paper_defaults("standard"), 30, seed=2)


@pytest.fixture(scope="module")
def probe():
    std = generate(paper_defaults("standard"), 5, seed=40)
    dp = generate(paper_defaults("double_peaked"), 5, seed=41)
    return FunctionalSample(std.grid, np.vstack([std.matrix, dp.matrix]))


class TestSampleCsv:
    def test_round_trip_exact(self, tmp_path, rng):
        g = Grid(np.sort(rng.uniform(-3, 3, 40)))
        s = FunctionalSample(g, rng.normal(size=(7, 40)))
        write_sample(s, tmp_path / "s.csv")
        back = read_sample(tmp_path / "s.csv")
        assert back.grid == s.grid
        assert np.array_equal(back.matrix, s.matrix)

    def test_blank_lines_skipped(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("0,0.5,1\n\n1,2,3\n4,5,6\n")
        assert read_sample(p).n == 2

    def test_non_numeric_names_row(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("0,0.5,1\n1,2,3\n1,abc,3\n")
        with pytest.raises(DataFormatError, match="row 3") as info:
            read_sample(p)
        assert info.value.line == 3
        assert str(p) in str(info.value)

    def test_wrong_length(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("0,0.5,1\n1,2\n")
        with pytest.raises(DataFormatError, match="row 2 has 2 values"):
            read_sample(p)

    @pytest.mark.parametrize("text", ["", "\n\n", "0,0.5,1\n"])
    def test_empty(self, tmp_path, text):
        p = tmp_path / "s.csv"
        p.write_text(text)
        with pytest.raises(DataFormatError):
            read_sample(p)

    def test_non_finite(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("0,0.5,1\n1,nan,3\n")
        with pytest.raises(DataFormatError, match="non-finite"):
            read_sample(p)

    def test_bad_grid(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("0,0,1\n1,2,3\n")
        with pytest.raises(DataFormatError, match="grid"):
            read_sample(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataFormatError, match="cannot open"):
            read_sample(tmp_path / "nope.csv")


class TestLabels:
    def test_round_trip(self, tmp_path):
        flags = np.array([True, False, False, True])
        write_labels(flags, tmp_path / "l.csv")
        assert (tmp_path / "l.csv").read_text().splitlines()[:2] == ["index,label", "0,outlier"]
        assert np.array_equal(read_labels(tmp_path / "l.csv"), flags)

    def test_bad_label(self, tmp_path):
        p = tmp_path / "l.csv"
        p.write_text("index,label\n0,odd\n")
        with pytest.raises(DataFormatError, match="row 2"):
            read_labels(p)


class TestReports:
    def test_csv(self):
        r = [DetectionReport(0.25, "inlier", 0.1, 0.5, 0), DetectionReport(1 / 3, "outlier", 0.1, 2.0, 1)]
        lines = reports_to_csv(r).splitlines()
        assert lines[0] == "index,p_value,score,label,alpha"
        assert float(lines[2].split(",")[1]) == 1 / 3


class TestAtomicWrite:
    def test_replaces_and_leaves_no_temp(self, tmp_path):
        p = tmp_path / "out.txt"
        p.write_text("old")
        atomic_write_text(p, "new")
        assert p.read_text() == "new"
        assert [q.name for q in tmp_path.iterdir()] == ["out.txt"]


DETECTORS = ["efdm", "efdm+tr", "sncm1", "sncm2", "gmd:2,1", "gmdm:3,2"]


class TestModelFiles:
    @pytest.mark.parametrize("det", DETECTORS)
    def test_round_trip_scores(self, tmp_path, train_sample, probe, det):
        split = split_full_training(train_sample.n, seed=0)
        model = train_detector(det, train_sample, split, alpha=0.2, seed=5)
        path = tmp_path / "m.json"
        save_model(model, path, det, 5)
        back, det_id, seed = load_model(path)
        assert (det_id, seed) == (det, 5)
        assert np.array_equal(back.cal_scores.scores, model.cal_scores.scores)
        assert np.allclose(back.score_sample(probe), model.score_sample(probe), atol=1e-12, rtol=0)

    def test_version_checked(self, train_sample):
        model = train_detector("gmd:2,1", train_sample, split_full_training(30, seed=0))
        d = model_to_dict(model, "gmd:2,1", 0)
        assert d["format_version"] == FORMAT_VERSION
        d["format_version"] = FORMAT_VERSION + 1
        with pytest.raises(DataFormatError, match="not supported"):
            model_from_dict(d)

    def test_not_a_model(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text("[1, 2]")
        with pytest.raises(DataFormatError, match="not a model"):
            load_model(p)
        p.write_text("{bad json")
        with pytest.raises(DataFormatError, match="not valid JSON"):
            load_model(p)

    def test_malformed(self, train_sample):
        model = train_detector("efdm", train_sample, split_full_training(30, seed=0))
        d = model_to_dict(model, "efdm", 0)
        del d["state"]["bounds"]
        with pytest.raises(DataFormatError, match="malformed"):
            model_from_dict(d)

    def test_unknown_family(self, train_sample):
        model = train_detector("efdm", train_sample, split_full_training(30, seed=0))
        d = json.loads(json.dumps(model_to_dict(model, "efdm", 0)))
        d["family"] = "kde"
        with pytest.raises(DataFormatError, match="unknown detector family"):
            model_from_dict(d)

    def test_unserializable(self):
        with pytest.raises(InvalidInputError):
            model_to_dict(object(), "x", 0)

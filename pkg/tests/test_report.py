import json
import math

import pytest

from karlin_lil.report import ExperimentReport, dumps, manifest, svg_lines, to_csv


def test_dumps_is_deterministic_and_json_safe():
    a = dumps({"b": 1.0, "a": [math.inf, math.nan, -math.inf]})
    assert a == dumps({"a": [math.inf, math.nan, -math.inf], "b": 1.0})
    assert json.loads(a)["a"] == ["inf", "nan", "-inf"]


def test_csv_union_of_columns():
    text = to_csv([{"a": 1, "b": 0.1}, {"a": 2, "c": "x"}])
    lines = text.splitlines()
    assert lines[0] == "a,b,c"
    assert lines[1] == "1,0.1,"
    assert to_csv([]) == ""


def test_report_verdicts_and_overall(tmp_path):
    rep = ExperimentReport("x", {"k": 1}, seed=3, runtime=12.0)
    rep.add_verdict("one", "pass", "ok")
    assert rep.overall == "pass"
    rep.add_verdict("two", "inconclusive", "meh")
    assert rep.overall == "inconclusive"
    rep.add_verdict("three", "fail", "no")
    assert rep.overall == "fail"
    with pytest.raises(ValueError):
        rep.add_verdict("bad", "maybe", "")
    rep.tables["t"] = [{"a": 1}]
    paths = rep.write(tmp_path)
    assert [p.name for p in paths] == ["report.json", "t.csv"]
    # runtime is not serialized, so reruns compare equal byte for byte
    assert "runtime" not in json.loads(paths[0].read_text())


def test_manifest_schema():
    m = manifest("lil", {"seed": 1})
    assert m["schema"] == 1 and m["command"] == "lil" and "version" in m


def test_svg_only_draws_given_points():
    svg = svg_lines({"s": ([1.0, 10.0, 100.0], [0.5, 0.7, 0.9])})
    assert svg.startswith("<svg") and svg.count("<polyline") == 1
    assert svg_lines({"s": ([], [])}).startswith("<svg")

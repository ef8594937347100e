import json
import os

import pytest

from stereogaze import cli

SMALL = ["--subjects", "6", "--seed", "7"]


def _synth(out, *extra):
    return cli.main(["synth", "--scene", "scene1", *SMALL, "--sigma", "0", "--out", str(out), *extra])


def _files(d):
    return {n: (d / n).read_bytes() for n in sorted(os.listdir(d)) if not n.startswith(".")}


def test_synth_is_deterministic(tmp_path):
    assert _synth(tmp_path / "a") == 0
    assert _synth(tmp_path / "b") == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    head = (tmp_path / "a" / "dataset.csv").read_text().splitlines()[0]
    assert head.startswith("subject_id,scene_id,point_id,eye,timestamp_index,o_x,o_y")
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["config"]["seed"] == 7 and man["seeds"]["data"] == 7
    assert set(man["outputs"]) == {"dataset.csv", "dataset.json"}
    assert man["frames"] == 6 * (9 + 36) * 4 * 2


def test_eval_before_train_names_bundle(tmp_path, capsys):
    _synth(tmp_path / "data")
    code = cli.main(["eval", "--data", str(tmp_path / "data"), "--bundle", str(tmp_path / "nobundle"),
                     "--out", str(tmp_path / "ev")])
    assert code == cli.EXIT_MISSING
    err = capsys.readouterr().err
    assert "missing input" in err and os.path.join(str(tmp_path / "nobundle"), "manifest.json") in err


def test_train_without_data_is_missing_input(tmp_path):
    assert cli.main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "b")]) == cli.EXIT_MISSING


def test_invalid_flags_are_config_errors(tmp_path, capsys):
    assert cli.main(["synth", "--subjects", "0", "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG
    assert "subjects must be >= 1" in capsys.readouterr().err
    assert cli.main(["synth", "--sigma", "-1", "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG
    assert cli.main(["synth", "--subjects", "three", "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG
    assert cli.main(["bogus"]) == cli.EXIT_CONFIG


def test_config_file_merged_under_flags(tmp_path):
    conf = tmp_path / "run.json"
    conf.write_text(json.dumps({"subjects": 2, "seed": 3, "frames_per_point": 1}))
    assert cli.main(["synth", "--config", str(conf), "--seed", "4", "--out", str(tmp_path / "o")]) == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["config"]["subjects"] == 2 and man["config"]["seed"] == 4
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"colour": "red"}))
    assert cli.main(["synth", "--config", str(bad), "--out", str(tmp_path / "p")]) == cli.EXIT_CONFIG
    assert cli.main(["synth", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "q")]) == cli.EXIT_MISSING


def test_locked_output_refused(tmp_path):
    out = tmp_path / "locked"
    out.mkdir()
    (out / ".lock").write_text("1234")
    assert _synth(out) == cli.EXIT_CONFIG
    assert not (out / "dataset.csv").exists()


def test_custom_scene_file(tmp_path):
    from stereogaze import geometry as g
    spec = g.SceneSpec("mine", (g.TestPoint(1, [0, 0, 20], 1), g.TestPoint(2, [0, 0, 60], 2)), (50, 30, 75))
    path = tmp_path / "scene.json"
    path.write_text(spec.to_json())
    assert cli.main(["synth", "--scene", str(path), "--subjects", "1", "--out", str(tmp_path / "o")]) == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["scene"] == "mine" and "scene.json" in man["inputs"]


def test_downstream_errors_are_wrapped(tmp_path, capsys):
    from stereogaze import geometry as g
    flat = g.SceneSpec("flat", (g.TestPoint(1, [0, 0, 50], 1), g.TestPoint(2, [5, 0, 50], 1)), (50, 30, 75))
    path = tmp_path / "flat.json"
    path.write_text(flat.to_json())
    cli.main(["synth", "--scene", str(path), "--subjects", "2", "--out", str(tmp_path / "d")])
    code = cli.main(["train", "--data", str(tmp_path / "d"), "--train-subjects", "1", "--out", str(tmp_path / "b")])
    assert code == cli.EXIT_DOWNSTREAM
    assert "InsufficientDepthVariation" in capsys.readouterr().err


def _full_run(root):
    data, bundle, ev, corr, rep = (root / n for n in ("data", "bundle", "eval", "corr", "report"))
    assert _synth(data) == 0
    assert cli.main(["train", "--data", str(data), "--train-subjects", "5", "--svr-max-samples", "300",
                     "--cv-folds", "3", "--seed", "7", "--out", str(bundle)]) == 0
    assert cli.main(["eval", "--data", str(data), "--bundle", str(bundle), "--out", str(ev)]) == 0
    assert cli.main(["corr", "--bundle", str(bundle), "--gini-seed", "1", "--out", str(corr)]) == 0
    assert cli.main(["report", "--eval", str(ev), "--corr", str(corr), "--out", str(rep)]) == 0
    return {d.name: _files(d) for d in (data, bundle, ev, corr, rep)}


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    a = _full_run(tmp_path_factory.mktemp("run_a"))
    b = _full_run(tmp_path_factory.mktemp("run_b"))
    return a, b


def test_full_run_outputs(two_runs):
    a, _ = two_runs
    assert {"eval.json", "summary.csv", "table_planes.csv", "table_points.csv", "table_models.csv",
            "profiles.json", "manifest.json"} <= set(a["eval"])
    assert {"correlation.csv", "importance.csv", "analysis.json", "correlation.svg", "importance.svg",
            "manifest.json"} <= set(a["corr"])
    assert {"manifest.json", "run.json", "config.json", "gaze_left.json", "depth_scene1.json"} <= set(a["bundle"])
    report = a["report"]["report.md"].decode()
    assert "3D" in report
    ev = json.loads(a["eval"]["eval.json"])
    assert ev["euclidean_3d"] <= 1.0
    assert a["corr"]["correlation.svg"].startswith(b"<?xml")


def test_full_run_is_byte_identical(two_runs):
    a, b = two_runs
    for stage in a:
        assert a[stage].keys() == b[stage].keys(), stage
        for name in a[stage]:
            assert a[stage][name] == b[stage][name], f"{stage}/{name}"


def test_commands_do_not_mutate_inputs(tmp_path):
    _synth(tmp_path / "data")
    before = _files(tmp_path / "data")
    cli.main(["train", "--data", str(tmp_path / "data"), "--train-subjects", "5", "--svr-max-samples", "200",
              "--cv-folds", "2", "--model", "lr", "--out", str(tmp_path / "b")])
    assert _files(tmp_path / "data") == before

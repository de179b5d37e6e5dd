import json

import pandas as pd
import pytest

import config
from cli import EXIT_DEGENERATE, EXIT_IO, EXIT_OK, EXIT_USAGE, main


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, (json.loads(out) if code == EXIT_OK and out.strip() else None)


@pytest.fixture
def scene_dir(tmp_path, capsys):
    out_dir = tmp_path / "scenes"
    code, payload = _run(capsys, "make-scenes", "--count", 2, "--seed", 0, "--out-dir", out_dir, "--sample-count", 150)
    assert code == EXIT_OK
    assert len(payload["scenes"]) == 2
    return out_dir


class TestMakeScenes:
    def test_writes_door_and_drawer(self, scene_dir):
        names = sorted(p.name for p in scene_dir.iterdir())
        assert names == ["scene_000_door.urdf", "scene_001_drawer.urdf"]

    def test_same_seed_same_files(self, tmp_path, capsys, scene_dir):
        again = tmp_path / "again"
        _run(capsys, "make-scenes", "--count", 2, "--seed", 0, "--out-dir", again, "--sample-count", 150)
        for path in scene_dir.iterdir():
            assert (again / path.name).read_bytes() == path.read_bytes()

    def test_count_must_be_positive(self, tmp_path, capsys):
        code, _ = _run(capsys, "make-scenes", "--count", 0, "--out-dir", tmp_path)
        assert code == EXIT_USAGE


class TestPipeline:
    def test_gen_infer_plan_matches_rollout_plan(self, tmp_path, capsys, scene_dir):
        scene = scene_dir / "scene_000_door.urdf"
        fields, axis, plan, first = (tmp_path / n for n in ("f.csv", "axis.json", "plan.csv", "first.csv"))

        code, gen = _run(capsys, "gen", "--scene", scene, "--seed", 0, "--out", fields)
        assert code == EXIT_OK
        assert gen["points"] == 300 and gen["masked"] == 150

        code, estimate = _run(capsys, "infer", "--fields", fields, "--out", axis, "--scene", scene)
        assert code == EXIT_OK
        assert estimate["type"] == "revolute"
        assert estimate["angle_error"] < 1e-8
        assert estimate["distance_error"] < 1e-8

        code, _ = _run(capsys, "plan", "--axis", axis, "--fields", fields, "--scene", scene, "--out", plan)
        assert code == EXIT_OK
        code, rollout = _run(capsys, "rollout", "--scene", scene, "--seed", 0, "--plan-out", first)
        assert code == EXIT_OK
        assert rollout["success"]
        assert plan.read_text() == first.read_text()
        frame = pd.read_csv(plan)
        assert list(frame.columns) == config.TRAJECTORY_HEADER
        assert len(frame) == config.DEFAULT_K + 1

    def test_infer_auto_type_on_drawer(self, tmp_path, capsys, scene_dir):
        fields = tmp_path / "f.csv"
        _run(capsys, "gen", "--scene", scene_dir / "scene_001_drawer.urdf", "--q", 0.1, "--out", fields)
        code, estimate = _run(capsys, "infer", "--fields", fields, "--type", "auto")
        assert code == EXIT_OK
        assert estimate["type"] == "prismatic"

    def test_plan_with_explicit_contact(self, tmp_path, capsys):
        axis = tmp_path / "axis.json"
        axis.write_text(json.dumps({"type": "prismatic", "omega": [0, -1, 0], "origin": [0, 0, 0], "support": 1}))
        out = tmp_path / "plan.csv"
        code, payload = _run(
            capsys, "plan", "--axis", axis, "--contact", 0, 0, 0, "--l-goal", 0.4, "--phi-goal", 1.0,
            "--K", 4, "--out", out,
        )
        assert code == EXIT_OK
        assert payload["waypoints"] == 5
        assert pd.read_csv(out)["y"].tolist() == pytest.approx([0.0, -0.1, -0.2, -0.3, -0.4])

    def test_rollout_trace_and_report(self, tmp_path, capsys, scene_dir):
        trace, html = tmp_path / "trace.csv", tmp_path / "trace.html"
        code, payload = _run(
            capsys, "rollout", "--scene", scene_dir / "scene_001_drawer.urdf", "--policy", "no_mpc",
            "--trace-out", trace, "--html", html,
        )
        assert code == EXIT_OK
        assert payload["policy"] == "no_mpc"
        assert payload["predictor"] == "exact"
        # an exact open-loop plan overshoots the limit and the joint clamps there
        assert payload["normalized_distance"] == pytest.approx(0.0, abs=1e-9)
        assert payload["success"]
        # 19 of 20 waypoints cover 1.1 * 19 / 20 of the travel, past the limit
        assert payload["steps"] == 19
        assert pd.read_csv(trace).columns.tolist() == config.TRACE_HEADER
        assert "plotly" in html.read_text()


class TestEval:
    def test_outputs(self, tmp_path, capsys, scene_dir):
        out = tmp_path / "metrics.csv"
        code, payload = _run(
            capsys, "eval", "--scene-dir", scene_dir, "--out", out, "--H-sweep", "3,nompc", "--ablate-gs",
            "--reference", "--trials", 2, "--xlsx", tmp_path / "m.xlsx", "--html", tmp_path / "r.html",
            "--emit-gnuplot", "--profile-out", tmp_path / "profile.csv",
        )
        assert code == EXIT_OK
        metrics = pd.read_csv(out)
        assert list(metrics.columns) == config.METRICS_HEADER
        assert len(metrics) == 2 * 3 * 2
        assert set(metrics["policy"]) == {"flowbotpp", "ap_only", "no_mpc"}
        assert metrics["noise_preset"].eq("reference").all()
        assert (tmp_path / "metrics_summary.csv").exists()
        assert (tmp_path / "metrics.gp").read_text().count("metrics_summary.csv") == 1
        sheets = pd.read_excel(tmp_path / "m.xlsx", sheet_name=None, engine="openpyxl")
        assert list(sheets) == ["metrics", "summary", "by_type", "profile"]
        assert len(payload["summary"]) == 3

    def test_unknown_policy(self, tmp_path, capsys, scene_dir):
        code, _ = _run(capsys, "eval", "--scene-dir", scene_dir, "--out", tmp_path / "m.csv", "--policy", "greedy")
        assert code == EXIT_USAGE


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        assert main(["rollout", "--bogus"]) == EXIT_USAGE

    def test_missing_scene_file(self, tmp_path, capsys):
        code, _ = _run(capsys, "gen", "--scene", tmp_path / "nope.urdf", "--out", tmp_path / "f.csv")
        assert code == EXIT_IO

    def test_bad_fields_header(self, tmp_path, capsys):
        fields = tmp_path / "f.csv"
        fields.write_text("a,b\n1,2\n")
        code, _ = _run(capsys, "infer", "--fields", fields)
        assert code == EXIT_IO

    def test_empty_mask_is_degenerate(self, tmp_path, capsys):
        fields = tmp_path / "f.csv"
        fields.write_text(",".join(config.FIELDS_HEADER) + "\n0,0.1,0.2,0.3,0,0,0,0,0,0,0\n")
        code, _ = _run(capsys, "infer", "--fields", fields)
        assert code == EXIT_DEGENERATE

    def test_rollout_without_plan(self, tmp_path, capsys, scene_dir):
        code, _ = _run(
            capsys, "rollout", "--scene", scene_dir / "scene_000_door.urdf", "--base-dropout", 1.0,
            "--plan-out", tmp_path / "plan.csv",
        )
        assert code == EXIT_DEGENERATE

    def test_out_of_range_joint_value(self, tmp_path, capsys, scene_dir):
        code, _ = _run(
            capsys, "gen", "--scene", scene_dir / "scene_000_door.urdf", "--q", 10.0, "--out", tmp_path / "f.csv"
        )
        assert code == EXIT_USAGE


class TestRolloutInputs:
    def test_fully_hidden_target_reports_failure(self, tmp_path, capsys, scene_dir):
        trace = tmp_path / "trace.csv"
        code, payload = _run(
            capsys, "rollout", "--scene", scene_dir / "scene_000_door.urdf", "--base-dropout", 1.0,
            "--trace-out", trace, "--html", tmp_path / "trace.html",
        )
        assert code == EXIT_OK
        assert payload["contact_index"] == -1
        assert payload["normalized_distance"] == 1.0
        assert not payload["success"]
        assert payload["steps"] == 0
        frame = pd.read_csv(trace)
        assert len(frame) == 1
        assert frame[["contact_x", "contact_y", "contact_z"]].isna().all(axis=None)

    def test_replayed_fields_open_the_drawer(self, tmp_path, capsys, scene_dir):
        scene = scene_dir / "scene_001_drawer.urdf"
        fields = tmp_path / "f.csv"
        code, _ = _run(capsys, "gen", "--scene", scene, "--out", fields)
        assert code == EXIT_OK
        code, payload = _run(capsys, "rollout", "--scene", scene, "--replay", fields)
        assert code == EXIT_OK
        assert payload["predictor"] == "replay"
        assert payload["success"]

    def test_replay_of_a_smaller_observation(self, tmp_path, capsys, scene_dir):
        scene = scene_dir / "scene_001_drawer.urdf"
        fields = tmp_path / "f.csv"
        _run(capsys, "gen", "--scene", scene, "--base-dropout", 0.5, "--seed", 1, "--out", fields)
        code, _ = _run(capsys, "rollout", "--scene", scene, "--replay", fields)
        assert code == EXIT_IO

    def test_lenient_skips_unknown_elements(self, tmp_path, capsys, scene_dir):
        scene = tmp_path / "extra.urdf"
        text = (scene_dir / "scene_000_door.urdf").read_text()
        scene.write_text(text.replace("</robot>", "<sensor name='cam'/></robot>"))
        fields = tmp_path / "f.csv"
        code, _ = _run(capsys, "gen", "--scene", scene, "--out", fields)
        assert code == EXIT_IO
        code, payload = _run(capsys, "gen", "--scene", scene, "--out", fields, "--lenient")
        assert code == EXIT_OK
        assert payload["points"] == 300

    def test_lenient_scene_directory(self, tmp_path, capsys, scene_dir):
        door = scene_dir / "scene_000_door.urdf"
        door.write_text(door.read_text().replace("</robot>", "<sensor name='cam'/></robot>"))
        out = tmp_path / "m.csv"
        code, _ = _run(capsys, "eval", "--scene-dir", scene_dir, "--out", out)
        assert code == EXIT_IO
        code, _ = _run(capsys, "eval", "--scene-dir", scene_dir, "--out", out, "--lenient")
        assert code == EXIT_OK
        assert len(pd.read_csv(out)) == 2

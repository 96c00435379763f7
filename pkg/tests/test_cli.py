from __future__ import annotations

import json

import pytest

from refvos.cli import main
from refvos.simulator import non_crossing_suite, scene_spec_to_dict, standard_suite



@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("scene")
    scenario = next(s for s in standard_suite(50, seed=0) if s.name.startswith("pan-stationary"))
    spec_path = root / "spec.json"
    spec_path.write_text(json.dumps({"seed": scenario.seed, "scene": scene_spec_to_dict(scenario.spec)}))
    out = root / "bundle"
    assert main(["simulate", "--spec", str(spec_path), "--seed", str(scenario.seed), "--out", str(out)]) == 0
    return out


class TestSimulateRunEval:
    def test_run_and_eval_flow(self, scene_dir, tmp_path):
        query = (scene_dir / "query.txt").read_text().strip()
        run_dir = tmp_path / "run"
        code = main(
            [
                "run",
                "--bundle",
                str(scene_dir),
                "--query",
                query,
                "--out",
                str(run_dir),
                "--offline",
                "--debug-dump",
            ]
        )
        assert code == 0
        assert (run_dir / "results.json").exists()
        assert (run_dir / "trace.jsonl").exists()
        assert (run_dir / "tracks.txt").exists()
        assert (run_dir / "camera.txt").exists()

        report_path = tmp_path / "report.json"
        code = main(
            [
                "eval",
                "--pred",
                str(run_dir),
                "--gt",
                str(scene_dir),
                "--out",
                str(report_path),
            ]
        )
        assert code == 0
        report = json.loads(report_path.read_text())
        assert set(report) == {"j_mean", "f_mean", "jf_mean"}
        assert report["jf_mean"] >= 0.9

    def test_rerun_is_byte_identical(self, scene_dir, tmp_path):
        query = (scene_dir / "query.txt").read_text().strip()
        dirs = []
        for name in ("a", "b"):
            out = tmp_path / name
            main(["run", "--bundle", str(scene_dir), "--query", query, "--out", str(out), "--offline"])
            dirs.append(out)
        assert (dirs[0] / "results.json").read_bytes() == (dirs[1] / "results.json").read_bytes()
        assert (dirs[0] / "trace.jsonl").read_bytes() == (dirs[1] / "trace.jsonl").read_bytes()

    def test_queries_file_creates_subdirectories(self, scene_dir, tmp_path):
        query = (scene_dir / "query.txt").read_text().strip()
        queries = tmp_path / "queries.txt"
        queries.write_text(f"{query}\nthe missing thing\n")
        out = tmp_path / "multi"
        code = main(
            ["run", "--bundle", str(scene_dir), "--queries", str(queries), "--out", str(out), "--offline"]
        )
        assert code == 0
        assert (out / "expr_000" / "results.json").exists()
        assert (out / "expr_001" / "results.json").exists()
        second = json.loads((out / "expr_001" / "results.json").read_text())
        assert second["zero_candidates"] is True

    def test_overlay_flag_writes_images(self, scene_dir, tmp_path):
        query = (scene_dir / "query.txt").read_text().strip()
        out = tmp_path / "ov"
        main(
            ["run", "--bundle", str(scene_dir), "--query", query, "--out", str(out), "--offline", "--overlay"]
        )
        overlays = sorted((out / "overlays").glob("*.png"))
        assert len(overlays) == 46


class TestAblateCli:
    def test_ablate_writes_report(self, tmp_path):
        scenes = tmp_path / "scenes"
        scenes.mkdir()
        for scenario in non_crossing_suite(2, seed=7):
            (scenes / f"{scenario.name}.json").write_text(
                json.dumps({"seed": scenario.seed, "scene": scene_spec_to_dict(scenario.spec)})
            )
        out = tmp_path / "report.json"
        code = main(["ablate", "--scenes", str(scenes), "--out", str(out)])
        assert code == 0
        report = json.loads(out.read_text())
        assert report["scene_count"] == 2
        assert set(report["reasoning"]) == {"baseline", "cmr", "fpv", "full"}

    def test_ablate_empty_dir_fails(self, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        assert main(["ablate", "--scenes", str(empty), "--out", str(tmp_path / "r.json")]) == 2


class TestConfigFile:
    def test_config_round_trip(self, tmp_path):
        from refvos.pipeline import PipelineConfig

        config = PipelineConfig(keyframe_interval=10, use_or=False, seed=9)
        path = tmp_path / "config.json"
        config.to_file(path)
        loaded = PipelineConfig.from_file(path)
        assert loaded == config

    def test_run_with_config_file(self, scene_dir, tmp_path):
        from refvos.pipeline import PipelineConfig

        config_path = tmp_path / "config.json"
        PipelineConfig().to_file(config_path)
        query = (scene_dir / "query.txt").read_text().strip()
        out = tmp_path / "run"
        code = main(
            [
                "run",
                "--bundle",
                str(scene_dir),
                "--query",
                query,
                "--config",
                str(config_path),
                "--out",
                str(out),
                "--offline",
            ]
        )
        assert code == 0

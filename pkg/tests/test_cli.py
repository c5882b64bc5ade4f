"""End-to-end CLI behavior: subcommands, exit codes, file outputs."""

import json
import math

import numpy as np
import pytest

from scenefuse.cli import main
from scenefuse.formats import read_track_records
from scenefuse.geometry import rotation_z
from scenefuse.jobs import BenchReport


def _write_config(path, cameras=1, zones=None, rules=None, sinks=None, extra=None):
    def cam(i, tx=0.0):
        return {
            "id": i,
            "intrinsics": {"fx": 100, "fy": 100, "cx": 50, "cy": 50,
                           "width": 100, "height": 100},
            "pose": {"rotation": [1, 0, 0, 0, 1, 0, 0, 0, 1],
                     "translation": [tx, 0, 0]},
        }

    doc = {
        "cameras": [cam(i, tx=0.1 * i) for i in range(cameras)],
        "sync_window_s": 0.05,
        "fusion": {"voxel_size": 0.1, "merge_radius": 0.5, "cloud_stride": 4},
        "tracker": {"gate_distance": 1.0, "confirm_hits": 2, "max_misses": 5,
                    "process_noise_accel": 1.0, "measurement_noise": 0.05},
        "zones": zones or [],
        "rules": rules or [],
        "sinks": sinks or [],
    }
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc))
    return path


def _write_scene(path, actors=None, duration=1.0, noise=None):
    doc = {
        "duration": duration,
        "frame_rate": 10,
        "actors": actors if actors is not None else [],
        "cameras": [],
    }
    if noise:
        doc["noise"] = noise
    path.write_text(json.dumps(doc))
    return path


MOVING_SPHERE = {
    "class_id": 1,
    "shape": {"type": "sphere", "center": [0, 0, 4.0], "radius": 0.4},
    "trajectory": [[0.0, 0, 0, 4.0], [3.0, 1.0, 0, 4.0]],
}


class TestSimulateCommand:
    def test_empty_scene_succeeds_with_zero_tracks(self, tmp_path):
        config = _write_config(tmp_path / "config.json")
        scene = _write_scene(tmp_path / "scene.json", actors=[], duration=0.5)
        out = tmp_path / "out"
        assert main(["simulate", "--scene", str(scene), "--config", str(config),
                     "--output", str(out)]) == 0
        assert (out / "tracks.jsonl").read_text() == ""
        assert (out / "events.jsonl").exists()

    def test_constant_velocity_actor_one_confirmed_track(self, tmp_path):
        config = _write_config(tmp_path / "config.json")
        scene = _write_scene(tmp_path / "scene.json", actors=[MOVING_SPHERE],
                             duration=3.0)
        out = tmp_path / "out"
        assert main(["simulate", "--scene", str(scene), "--config", str(config),
                     "--output", str(out)]) == 0
        records = read_track_records(out / "tracks.jsonl")
        confirmed_ids = {r["id"] for r in records if r["status"] == "confirmed"}
        assert len(confirmed_ids) == 1

    def test_same_seed_byte_identical(self, tmp_path):
        config = _write_config(tmp_path / "config.json")
        scene = _write_scene(tmp_path / "scene.json", actors=[MOVING_SPHERE],
                             duration=1.0,
                             noise={"enabled": True, "disparity_std": 0.25,
                                    "baseline": 0.12})
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert main(["simulate", "--scene", str(scene), "--config", str(config),
                         "--output", str(out), "--seed", "5"]) == 0
        for name in ("events.jsonl", "tracks.jsonl"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
        assert ((out_a / "sim_input" / "ground_truth.jsonl").read_bytes()
                == (out_b / "sim_input" / "ground_truth.jsonl").read_bytes())


class TestRunCommand:
    def _generate_input(self, tmp_path):
        config = _write_config(tmp_path / "config.json")
        scene = _write_scene(tmp_path / "scene.json", actors=[MOVING_SPHERE],
                             duration=1.0)
        gen_out = tmp_path / "gen"
        assert main(["simulate", "--scene", str(scene), "--config", str(config),
                     "--output", str(gen_out)]) == 0
        return config, gen_out / "sim_input"

    def test_valid_replay_exits_zero(self, tmp_path):
        config, input_dir = self._generate_input(tmp_path)
        out = tmp_path / "replay"
        assert main(["run", "--config", str(config), "--input", str(input_dir),
                     "--output", str(out)]) == 0
        stats = json.loads((out / "stats.json").read_text())
        assert stats["frames"] == 11
        assert stats["fps_overall"] > 0

    def test_unknown_config_key_exit_2(self, tmp_path, capsys):
        config = _write_config(tmp_path / "config.json", extra={"zonez": []})
        out = tmp_path / "out"
        code = main(["run", "--config", str(config), "--input", str(tmp_path),
                     "--output", str(out)])
        assert code == 2
        assert "zonez" in capsys.readouterr().err

    def test_truncated_depth_file_exit_3(self, tmp_path, capsys):
        config, input_dir = self._generate_input(tmp_path)
        victim = sorted((input_dir / "cam0").glob("frame_*.dpt"))[0]
        data = victim.read_bytes()
        victim.write_bytes(data[:-10])
        out = tmp_path / "replay"
        code = main(["run", "--config", str(config), "--input", str(input_dir),
                     "--output", str(out)])
        assert code == 3
        err = capsys.readouterr().err
        assert str(len(data)) in err and str(len(data) - 10) in err

    def test_missing_input_dir_exit_3(self, tmp_path):
        config = _write_config(tmp_path / "config.json")
        code = main(["run", "--config", str(config),
                     "--input", str(tmp_path / "nope"),
                     "--output", str(tmp_path / "out")])
        assert code == 3

    def test_replay_determinism(self, tmp_path):
        config, input_dir = self._generate_input(tmp_path)
        outs = [tmp_path / "r1", tmp_path / "r2"]
        for out in outs:
            assert main(["run", "--config", str(config), "--input", str(input_dir),
                         "--output", str(out)]) == 0
        for name in ("events.jsonl", "tracks.jsonl"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_realtime_flag_paces_replay(self, tmp_path):
        import time

        config, input_dir = self._generate_input(tmp_path)  # 11 frames at 10 Hz
        out = tmp_path / "rt"
        started = time.perf_counter()
        assert main(["run", "--config", str(config), "--input", str(input_dir),
                     "--output", str(out), "--realtime"]) == 0
        # recorded span is 1.0 s; pacing must consume most of it
        assert time.perf_counter() - started >= 0.8

    def test_alarm_file_sink_through_config(self, tmp_path):
        zones = [{"id": "z", "footprint": [[-1, -1], [1, -1], [1, 1], [-1, 1]],
                  "z_range": [0.0, 10.0], "on_exit_alarm": True}]
        sinks = [{"kind": "file", "target": "alarms.jsonl"}]
        config = _write_config(tmp_path / "config.json", zones=zones, sinks=sinks)
        # actor starts on-axis (inside the zone footprint at x=0) and walks
        # out past x=1 so the zone exit alarm must fire
        actor = {
            "class_id": 1,
            "shape": {"type": "sphere", "center": [0, 0, 4.0], "radius": 0.4},
            "trajectory": [[0.0, 0, 0, 4.0], [3.0, 2.5, 0, 4.0]],
        }
        scene = _write_scene(tmp_path / "scene.json", actors=[actor], duration=3.0)
        out = tmp_path / "out"
        assert main(["simulate", "--scene", str(scene), "--config", str(config),
                     "--output", str(out)]) == 0
        alarm_lines = (out / "alarms.jsonl").read_text().strip().splitlines()
        assert len(alarm_lines) >= 1
        assert json.loads(alarm_lines[0])["kind"] == "ZoneExit"


class TestCalibrateCommand:
    def _write_pairs(self, path, pairs):
        with open(path, "w") as fh:
            for s, t in pairs:
                fh.write(json.dumps({"source": list(s), "target": list(t)}) + "\n")

    def test_identity(self, tmp_path):
        pairs_path = tmp_path / "pairs.jsonl"
        pts = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]
        self._write_pairs(pairs_path, [(p, p) for p in pts])
        pose_path = tmp_path / "pose.json"
        assert main(["calibrate", "--pairs", str(pairs_path),
                     "--output", str(pose_path)]) == 0
        doc = json.loads(pose_path.read_text())
        assert np.allclose(np.array(doc["rotation"]).reshape(3, 3), np.eye(3),
                           atol=1e-9)
        assert doc["rms_residual"] < 1e-9

    def test_translation(self, tmp_path):
        pairs_path = tmp_path / "pairs.jsonl"
        pts = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]
        self._write_pairs(pairs_path, [(p, (p[0] + 1, p[1] + 2, p[2] + 3)) for p in pts])
        pose_path = tmp_path / "pose.json"
        assert main(["calibrate", "--pairs", str(pairs_path),
                     "--output", str(pose_path)]) == 0
        doc = json.loads(pose_path.read_text())
        assert np.allclose(doc["translation"], [1, 2, 3], atol=1e-9)

    def test_rz90(self, tmp_path):
        pairs_path = tmp_path / "pairs.jsonl"
        src = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
        tgt = [(0, 1, 0), (-1, 0, 0), (0, 0, 1)]
        self._write_pairs(pairs_path, list(zip(src, tgt)))
        pose_path = tmp_path / "pose.json"
        assert main(["calibrate", "--pairs", str(pairs_path),
                     "--output", str(pose_path)]) == 0
        doc = json.loads(pose_path.read_text())
        assert np.allclose(np.array(doc["rotation"]).reshape(3, 3),
                           rotation_z(math.pi / 2), atol=1e-9)

    def test_degenerate_exit_2(self, tmp_path):
        pairs_path = tmp_path / "pairs.jsonl"
        self._write_pairs(pairs_path, [((0, 0, 0), (0, 0, 0)),
                                       ((1, 0, 0), (1, 0, 0)),
                                       ((2, 0, 0), (2, 0, 0))])
        code = main(["calibrate", "--pairs", str(pairs_path),
                     "--output", str(tmp_path / "pose.json")])
        assert code == 2

    def test_missing_pairs_exit_3(self, tmp_path):
        code = main(["calibrate", "--pairs", str(tmp_path / "none.jsonl"),
                     "--output", str(tmp_path / "pose.json")])
        assert code == 3

    def test_icp_refinement_path(self, tmp_path):
        from scenefuse.cloud import PointCloud, save_ply

        rng = np.random.default_rng(17)
        pts = rng.uniform(0, 2, size=(300, 3))
        src_ply = tmp_path / "src.ply"
        tgt_ply = tmp_path / "tgt.ply"
        save_ply(PointCloud(pts), src_ply)
        save_ply(PointCloud(pts + np.array([0.05, 0.0, 0.0])), tgt_ply)

        pairs_path = tmp_path / "pairs.jsonl"
        anchor = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]
        self._write_pairs(pairs_path,
                          [(p, (p[0] + 0.05, p[1], p[2])) for p in anchor])
        pose_path = tmp_path / "pose.json"
        assert main(["calibrate", "--pairs", str(pairs_path),
                     "--source-cloud", str(src_ply),
                     "--target-cloud", str(tgt_ply),
                     "--output", str(pose_path)]) == 0
        doc = json.loads(pose_path.read_text())
        assert "icp_rms_residual" in doc
        assert np.allclose(doc["translation"], [0.05, 0, 0], atol=0.02)


class TestBenchCommand:
    def test_bench_runs_and_orders(self, tmp_path):
        config = _write_config(tmp_path / "config.json", cameras=2)
        out = tmp_path / "bench"
        assert main(["bench", "--config", str(config), "--output", str(out),
                     "--frames", "30"]) == 0
        report = BenchReport.from_doc(json.loads((out / "bench.json").read_text()))
        assert report.frames_per_config == 30
        by_name = {r.name: r for r in report.results}
        assert set(by_name) == {"single_camera", "two_cameras", "one_file", "two_files"}
        assert all(r.frames == 30 for r in report.results)

    def test_bench_needs_two_cameras(self, tmp_path):
        config = _write_config(tmp_path / "config.json", cameras=1)
        code = main(["bench", "--config", str(config),
                     "--output", str(tmp_path / "b"), "--frames", "5"])
        assert code == 2

    def test_duration_flag_sets_frame_count(self, tmp_path):
        config = _write_config(tmp_path / "config.json", cameras=2)
        out = tmp_path / "bench"
        assert main(["bench", "--config", str(config), "--output", str(out),
                     "--duration", "1.0"]) == 0
        report = BenchReport.from_doc(json.loads((out / "bench.json").read_text()))
        assert report.frames_per_config == 10


class TestAccuracyCommand:
    def _experiment(self, tmp_path, n_conditions=3, noise=False):
        conditions = [
            {"name": f"c{i}", "width": 320, "height": 180, "focal": 175.0,
             "seed": i, "noise_enabled": noise}
            for i in range(n_conditions)
        ]
        path = tmp_path / "experiment.json"
        path.write_text(json.dumps({"conditions": conditions}))
        return path

    def test_three_conditions_four_outputs(self, tmp_path):
        exp = self._experiment(tmp_path, n_conditions=3)
        out = tmp_path / "acc"
        assert main(["accuracy", "--config", str(exp), "--output", str(out)]) == 0
        csvs = sorted(p.name for p in out.glob("heatmap_*.csv"))
        ppms = sorted(p.name for p in out.glob("heatmap_*.ppm"))
        assert len(csvs) == 4 and len(ppms) == 4
        assert "heatmap_average.csv" in csvs

    def test_noise_off_all_errors_green(self, tmp_path):
        exp = self._experiment(tmp_path, n_conditions=1, noise=False)
        out = tmp_path / "acc"
        assert main(["accuracy", "--config", str(exp), "--output", str(out)]) == 0
        rows = (out / "heatmap_c0.csv").read_text().strip().splitlines()[1:]
        for row in rows:
            err = float(row.split(",")[5])
            assert err < 0.30

    def test_same_seed_identical_csv(self, tmp_path):
        exp = self._experiment(tmp_path, n_conditions=1, noise=True)
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            assert main(["accuracy", "--config", str(exp), "--output", str(out)]) == 0
        assert ((outs[0] / "heatmap_c0.csv").read_bytes()
                == (outs[1] / "heatmap_c0.csv").read_bytes())

    def test_unknown_experiment_key_exit_2(self, tmp_path):
        path = tmp_path / "experiment.json"
        path.write_text(json.dumps({"condishuns": []}))
        assert main(["accuracy", "--config", str(path),
                     "--output", str(tmp_path / "o")]) == 2

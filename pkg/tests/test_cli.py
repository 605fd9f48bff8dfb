from __future__ import annotations

import json

import numpy as np
import pytest

from surgecast.cli import main
from surgecast.clips import load_index
from surgecast.ingest import read_sfld
from surgecast.synthetic import StormParams, structured_mesh, write_storm_inputs


def quiet_main(capsys, argv):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def storm_inputs(tmp_path_factory):
    """Three node-space synthetic storms on a shared toy mesh."""
    root = tmp_path_factory.mktemp("inputs")
    mesh = structured_mesh(n=10)
    params = [
        StormParams(0.35, 0.5, 0.010, 0.002, 1.8, 0.14, 30, 14.0),
        StormParams(0.6, 0.4, -0.008, 0.006, 1.5, 0.12, 28, 15.0),
        StormParams(0.5, 0.6, 0.004, -0.010, 2.0, 0.15, 32, 13.0),
    ]
    for k, p in enumerate(params):
        write_storm_inputs(root / f"storm{k}", p, mesh=mesh, n_frames=60)
    return root


def rasterize_all(storm_inputs, out_root, width=12, height=12):
    for sdir in sorted(storm_inputs.iterdir()):
        code = main([
            "rasterize",
            "--mesh", str(sdir / "mesh.grd"),
            "--zeta", str(sdir / "zeta.sfld"),
            "--windx", str(sdir / "windx.sfld"),
            "--windy", str(sdir / "windy.sfld"),
            "--roi", "0", "1", "0", "1",
            "--width", str(width), "--height", str(height),
            "--region", "toy",
            "--storm", sdir.name,
            "--out", str(out_root / sdir.name),
        ])
        assert code == 0
    return out_root


class TestRasterizeCommand:
    def test_writes_grids_and_sidecar(self, storm_inputs, tmp_path, capsys):
        out = rasterize_all(storm_inputs, tmp_path / "grids")
        storm_dir = out / "storm0"
        for name in ("zeta", "windx", "windy", "depth"):
            assert (storm_dir / f"{name}.sfld").exists()
        sidecar = json.loads((storm_dir / "roi.json").read_text())
        assert len(sidecar["mean_zeta"]) == 60
        assert sidecar["region_id"] == "toy"
        assert (storm_dir / "run_manifest.json").exists()
        capsys.readouterr()

    def test_gridded_output_roundtrips_bit_exactly(self, storm_inputs, tmp_path, capsys):
        out = rasterize_all(storm_inputs, tmp_path / "grids")
        _, times, values, _ = read_sfld(out / "storm0" / "zeta.sfld")
        assert times.shape[0] == 60
        assert values.shape[1] == 12 * 12
        # re-running produces identical bytes
        out2 = rasterize_all(storm_inputs, tmp_path / "grids2")
        a = (out / "storm0" / "zeta.sfld").read_bytes()
        b = (out2 / "storm0" / "zeta.sfld").read_bytes()
        assert a == b
        capsys.readouterr()

    def test_missing_mesh_exits_nonzero(self, tmp_path, capsys):
        code, _out, err = quiet_main(capsys, [
            "rasterize", "--mesh", str(tmp_path / "absent.grd"),
            "--zeta", "z", "--windx", "x", "--windy", "y",
            "--roi", "0", "1", "0", "1", "--out", str(tmp_path / "o"),
        ])
        assert code != 0
        assert err.startswith("error:")

    def test_dry_nodes_rasterize_to_background(self, tmp_path, capsys):
        mesh = structured_mesh(n=8)
        write_storm_inputs(
            tmp_path / "storm", StormParams(0.5, 0.5, 0.0, 0.0, 2.0, 0.15, 30, 12.0),
            mesh=mesh, n_frames=31, dry_margin=0.05,
        )
        code, _o, _e = quiet_main(capsys, [
            "rasterize", "--mesh", str(tmp_path / "storm/mesh.grd"),
            "--zeta", str(tmp_path / "storm/zeta.sfld"),
            "--windx", str(tmp_path / "storm/windx.sfld"),
            "--windy", str(tmp_path / "storm/windy.sfld"),
            "--roi", "0", "1", "0", "1", "--width", "8", "--height", "8",
            "--background", "-1.5", "--out", str(tmp_path / "grids"),
        ])
        assert code == 0
        _, _, values, _ = read_sfld(tmp_path / "grids/zeta.sfld")
        frame0 = values[0].reshape(8, 8)
        # frame 0 is far from the peak: bump nearly gone, corners dry
        assert (frame0 == np.float32(-1.5)).any()


@pytest.fixture(scope="module")
def built_dataset(storm_inputs, tmp_path_factory):
    grids = rasterize_all(storm_inputs, tmp_path_factory.mktemp("grids"))
    data = tmp_path_factory.mktemp("data") / "clips"
    code = main([
        "build-clips", "--grids", str(grids), "--out", str(data), "--seed", "1",
    ])
    assert code == 0
    return data


class TestBuildClipsCommand:
    def test_sixty_frame_storms_make_twelve_clips_each(self, built_dataset):
        index = load_index(built_dataset)
        per_storm = {}
        for r in index.records:
            per_storm[r.storm_id] = per_storm.get(r.storm_id, 0) + 1
        assert set(per_storm.values()) == {12}

    def test_split_manifest_reproduced_on_rerun(self, storm_inputs, built_dataset,
                                                tmp_path, capsys):
        grids = rasterize_all(storm_inputs, tmp_path / "grids")
        again = tmp_path / "clips2"
        code = main(["build-clips", "--grids", str(grids), "--out", str(again),
                     "--seed", "1"])
        assert code == 0
        a = load_index(built_dataset)
        b = load_index(again)
        assert a.split == b.split
        assert (built_dataset / "index.json").read_bytes() == (again / "index.json").read_bytes()
        capsys.readouterr()

    def test_short_storm_warns_and_produces_no_clips(self, storm_inputs, tmp_path, capsys):
        mesh = structured_mesh(n=6)
        short_root = tmp_path / "short_inputs"
        write_storm_inputs(short_root / "shorty", StormParams(0.5, 0.5, 0.01, 0.0, 1.5, 0.12, 14, 10.0),
                           mesh=mesh, n_frames=29)
        write_storm_inputs(short_root / "longy", StormParams(0.5, 0.5, 0.01, 0.0, 1.5, 0.12, 30, 10.0),
                           mesh=mesh, n_frames=60)
        grids = rasterize_all(short_root, tmp_path / "grids", width=8, height=8)
        code, _out, err = quiet_main(capsys, [
            "build-clips", "--grids", str(grids), "--out", str(tmp_path / "d"), "--seed", "2",
        ])
        assert code == 0
        assert "no clips" in err
        index = load_index(tmp_path / "d")
        assert all(r.storm_id != "shorty" for r in index.records)


@pytest.fixture(scope="module")
def trained_run(built_dataset, tmp_path_factory):
    run = tmp_path_factory.mktemp("run")
    code = main([
        "train", "--data", str(built_dataset), "--out", str(run),
        "--epochs", "1", "--batch-size", "2", "--hidden-dims", "4,4",
        "--seed", "3", "--deterministic",
    ])
    assert code == 0
    return run


class TestTrainCommand:
    def test_checkpoints_and_log_exist(self, trained_run):
        assert (trained_run / "best.ckpt").exists()
        assert (trained_run / "last.ckpt").exists()
        log = (trained_run / "train_log.csv").read_text().splitlines()
        assert log[0].startswith("epoch,")
        assert len(log) == 2

    def test_checkpoint_carries_ranges_and_colormap(self, trained_run):
        from surgecast.model import load_checkpoint

        _model, meta = load_checkpoint(trained_run / "best.ckpt")
        assert "ranges" in meta and "colormap" in meta
        assert meta["ranges"]["zeta"] == [0.0, 2.5]

    def test_config_file_with_flag_override(self, built_dataset, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("epochs = 3\nbatch_size = 2\nseed = 5\n")
        run = tmp_path / "run"
        code, out, _err = quiet_main(capsys, [
            "train", "--data", str(built_dataset), "--out", str(run),
            "--config-file", str(cfg), "--epochs", "1", "--hidden-dims", "4",
        ])
        assert code == 0
        manifest = json.loads((run / "run_manifest.json").read_text())
        assert manifest["config"]["epochs"] == 1  # flag beat the file
        assert manifest["config"]["seed"] == 5  # file value survived


class TestForecastAndExport:
    def test_forecast_emits_24_pngs(self, built_dataset, trained_run, tmp_path, capsys):
        index = load_index(built_dataset)
        clip_id = index.records_for(index.split.test_storms)[0].clip_id
        out = tmp_path / "frames"
        code, _o, _e = quiet_main(capsys, [
            "forecast", "--checkpoint", str(trained_run / "best.ckpt"),
            "--data", str(built_dataset), "--clip", clip_id, "--out", str(out),
        ])
        assert code == 0
        pngs = sorted(out.glob("*.png"))
        assert len(pngs) == 24
        assert pngs[0].name == f"{clip_id}_01.png"

    def test_export_uniform_background_frame_quantizes_to_dark_blue(self, tmp_path, capsys):
        """A frame whose pixels all encode u=0 exports as solid (0, 0, 128)."""
        from PIL import Image

        from surgecast.clips import Clip, ClipDatasetIndex, ClipRecord, SplitManifest, write_clip, write_index
        from surgecast.encode import Colormap

        rgb0 = Colormap.default().encode(0.0)
        target = np.zeros((24, 3, 8, 8), dtype=np.float32)
        target[:, 0] = rgb0[0]
        target[:, 1] = rgb0[1]
        target[:, 2] = rgb0[2]
        clip = Clip(
            storm_id="s0", region_id="r",
            context=np.zeros((6, 6, 8, 8), dtype=np.float32),
            target=target,
            future_wind=np.zeros((24, 2, 8, 8), dtype=np.float32),
            bathymetry=np.zeros((1, 8, 8), dtype=np.float32),
        )
        data = tmp_path / "data"
        data.mkdir()
        write_clip(clip, data / "c0.sclp")
        index = ClipDatasetIndex(
            height=8, width=8,
            split=SplitManifest(seed=0, train_storms=("s0",), test_storms=("s1",)),
            records=[ClipRecord("c0", "s0", "r", "c0.sclp", 0, 29)],
        )
        write_index(index, data / "index.json")
        out = tmp_path / "png"
        code, _o, _e = quiet_main(capsys, [
            "export-frames", "--data", str(data), "--clip", "c0", "--out", str(out),
        ])
        assert code == 0
        img = np.asarray(Image.open(out / "c0_01.png"))
        assert img.shape == (8, 8, 3)
        assert (img == np.array([0, 0, 128], dtype=np.uint8)).all()

    def test_unknown_clip_id_fails(self, built_dataset, trained_run, tmp_path, capsys):
        code, _o, err = quiet_main(capsys, [
            "forecast", "--checkpoint", str(trained_run / "best.ckpt"),
            "--data", str(built_dataset), "--clip", "nope", "--out", str(tmp_path / "o"),
        ])
        assert code == 1
        assert "not found" in err


class TestEvaluateCommand:
    def test_reports_written(self, built_dataset, trained_run, tmp_path, capsys):
        out = tmp_path / "eval"
        code, _o, _e = quiet_main(capsys, [
            "evaluate", "--checkpoint", str(trained_run / "best.ckpt"),
            "--data", str(built_dataset), "--out", str(out),
        ])
        assert code == 0
        assert (out / "metrics.csv").exists()
        assert (out / "summary.csv").exists()
        assert (out / "metrics_meters.csv").exists()
        lines = (out / "metrics.csv").read_text().splitlines()
        assert len(lines) == 1 + 12 * 24  # one test storm -> 12 clips x 24 steps

    def test_no_test_clips_exits_nonzero(self, trained_run, tmp_path, capsys):
        from surgecast.clips import ClipDatasetIndex, SplitManifest, write_index

        data = tmp_path / "empty"
        data.mkdir()
        index = ClipDatasetIndex(
            height=8, width=8,
            split=SplitManifest(seed=0, train_storms=("a",), test_storms=("b",)),
            records=[],
        )
        write_index(index, data / "index.json")
        code, _o, err = quiet_main(capsys, [
            "evaluate", "--checkpoint", str(trained_run / "best.ckpt"),
            "--data", str(data), "--out", str(tmp_path / "o"),
        ])
        assert code == 1
        assert "no test clips" in err


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "surgecast" in capsys.readouterr().out

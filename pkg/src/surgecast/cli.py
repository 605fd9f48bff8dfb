"""Command-line pipeline: rasterize, build-clips, train, forecast, evaluate,
export-frames.

Every subcommand writes a run manifest into its output directory before doing
any work, exits 0 on success, and reports failures as a single
``error: <message>`` line on standard error with a nonzero exit code.  With
``--deterministic --seed S`` the produced datasets, checkpoints, and metric
CSVs are byte-identical across runs on one platform.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .clips import HORIZON, StormFrames, build_dataset
from .encode import Colormap, ValueRange, VariableRanges, assemble_frame, to_uint8
from .forecast import forecast_clip
from .ingest import load_mesh, load_series, read_sfld, write_sfld
from .metrics import evaluate_run
from .model import NetworkConfig, build_model, load_checkpoint
from .raster import GridField, Roi, build_index, mean_over_roi, rasterize
from .train import ClipDataset, make_train_config, train_loop


def _apply_thread_cap(deterministic: bool) -> None:
    import torch

    if deterministic:
        torch.set_num_threads(1)
        return
    raw = os.environ.get("SURGECAST_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"SURGECAST_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError("SURGECAST_THREADS must be >= 0 (0 = auto)")
    if n > 0:
        torch.set_num_threads(n)


def write_run_manifest(out_dir: Path, subcommand: str, args: argparse.Namespace,
                       config_snapshot: dict) -> None:
    """Persist what this run is about to do, before it does it."""
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subcommand": subcommand,
        "version": __version__,
        "seed": getattr(args, "seed", None),
        "deterministic": bool(getattr(args, "deterministic", False)),
        "config": config_snapshot,
        "paths": {
            k: str(v)
            for k, v in vars(args).items()
            if k.endswith(("mesh", "zeta", "windx", "windy", "data", "grids",
                           "checkpoint", "out", "config_file", "colormap_file"))
            and v is not None
        },
    }
    (out_dir / "run_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def _ranges_from_args(args: argparse.Namespace) -> VariableRanges:
    def vr(pair, default):
        return ValueRange(pair[0], pair[1]) if pair else default

    d = VariableRanges()
    return VariableRanges(
        zeta=vr(args.zeta_range, d.zeta),
        windx=vr(args.windx_range, d.windx),
        windy=vr(args.windy_range, d.windy),
        depth=vr(args.depth_range, d.depth),
    )


def _colormap_from_args(args: argparse.Namespace) -> Colormap:
    if getattr(args, "colormap_file", None):
        return Colormap.from_table_file(args.colormap_file)
    return Colormap.default()


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_rasterize(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    roi = Roi(
        lon_min=args.roi[0], lon_max=args.roi[1],
        lat_min=args.roi[2], lat_max=args.roi[3],
        width=args.width, height=args.height,
    )
    write_run_manifest(out_dir, "rasterize", args, {
        "roi": dict(vars(roi)),
        "background": args.background,
        "region": args.region,
        "storm": args.storm,
    })

    mesh = load_mesh(args.mesh)
    index = build_index(mesh, roi)
    sidecar = {
        "roi": {
            "lon_min": roi.lon_min, "lon_max": roi.lon_max,
            "lat_min": roi.lat_min, "lat_max": roi.lat_max,
            "width": roi.width, "height": roi.height,
        },
        "region_id": args.region,
        "storm_id": args.storm,
        "background": args.background,
    }

    for name, path in (("zeta", args.zeta), ("windx", args.windx), ("windy", args.windy)):
        series = load_series(path, mesh)
        if series.variable != name:
            raise ValueError(
                f"{path} holds variable {series.variable!r}, expected {name!r}"
            )
        grids = np.stack([
            rasterize(index, series.values[t], series.fill_value, args.background).values
            for t in range(series.n_times)
        ])
        write_sfld(out_dir / f"{name}.sfld", name, series.times,
                   grids.reshape(series.n_times, -1))
        if name == "zeta":
            sidecar["times"] = [float(t) for t in series.times]
            sidecar["mean_zeta"] = [float(v) for v in mean_over_roi(mesh, series, roi)]
            sidecar["fill_value"] = series.fill_value

    depth_grid = rasterize(index, mesh.depth, None, args.background).values
    write_sfld(out_dir / "depth.sfld", "depth", np.zeros(1), depth_grid.reshape(1, -1))
    (out_dir / "roi.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    print(f"rasterized {len(sidecar['times'])} frames to {out_dir}")
    return 0


def _read_grid_stack(path: Path, height: int, width: int) -> np.ndarray:
    variable, _times, values, _fill = read_sfld(path)
    if values.shape[1] != height * width:
        raise ValueError(
            f"{path}: gridded series has {values.shape[1]} pixels, "
            f"ROI is {height}x{width}"
        )
    return values.reshape(values.shape[0], height, width)


def cmd_build_clips(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    ranges = _ranges_from_args(args)
    cmap = _colormap_from_args(args)
    write_run_manifest(out_dir, "build-clips", args, {
        "seed": args.seed,
        "test_fraction": args.test_fraction,
        "ranges": ranges.as_dict(),
    })

    grids_root = Path(args.grids)
    storm_dirs = sorted(p for p in grids_root.iterdir() if (p / "roi.json").is_file())
    if not storm_dirs:
        raise ValueError(f"no rasterized storm directories under {grids_root}")

    storms: list[StormFrames] = []
    for sdir in storm_dirs:
        sidecar = json.loads((sdir / "roi.json").read_text())
        h, w = sidecar["roi"]["height"], sidecar["roi"]["width"]
        zeta = _read_grid_stack(sdir / "zeta.sfld", h, w)
        windx = _read_grid_stack(sdir / "windx.sfld", h, w)
        windy = _read_grid_stack(sdir / "windy.sfld", h, w)
        depth = _read_grid_stack(sdir / "depth.sfld", h, w)[0]
        mean_zeta = np.asarray(sidecar["mean_zeta"], dtype=np.float64)
        n_frames = zeta.shape[0]
        if mean_zeta.shape[0] != n_frames:
            raise ValueError(f"{sdir}: sidecar mean_zeta length != zeta frames")
        mask = np.ones((h, w), dtype=bool)
        frames = np.stack([
            assemble_frame(
                GridField(values=zeta[t].astype(np.float64), mask=mask),
                GridField(values=windx[t].astype(np.float64), mask=mask),
                GridField(values=windy[t].astype(np.float64), mask=mask),
                GridField(values=depth.astype(np.float64), mask=mask),
                ranges, cmap,
            )
            for t in range(n_frames)
        ])
        storm_id = sidecar.get("storm_id") or sdir.name
        if n_frames < 30:
            print(f"warning: storm {storm_id} has {n_frames} frames, no clips", file=sys.stderr)
        storms.append(StormFrames(
            storm_id=storm_id,
            region_id=sidecar.get("region_id") or "region0",
            frames=frames,
            mean_zeta=mean_zeta,
        ))

    index = build_dataset(
        storms, out_dir, seed=args.seed, test_fraction=args.test_fraction,
        ranges=ranges.as_dict(),
        colormap=[list(row) for row in cmap.points],
    )
    print(f"built {len(index.records)} clips from {len(storms)} storms into {out_dir}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    cfg = make_train_config(
        args.config_file,
        batch_size=args.batch_size,
        lr=args.lr,
        epochs=args.epochs,
        teacher_forcing_p=args.teacher_forcing_p,
        seed=args.seed,
    )
    write_run_manifest(out_dir, "train", args, cfg.as_dict())
    _apply_thread_cap(args.deterministic)

    dataset = ClipDataset(args.data)
    net_cfg = NetworkConfig(
        hidden_dims=tuple(int(d) for d in args.hidden_dims.split(",")),
        kernel_size=(args.kernel, args.kernel),
        dropout_p=args.dropout_p,
    )
    model = build_model(net_cfg, seed=cfg.seed)
    extra = {}
    if dataset.index.ranges:
        extra["ranges"] = dataset.index.ranges
    if dataset.index.colormap:
        extra["colormap"] = dataset.index.colormap

    result = train_loop(
        dataset, cfg, out_dir, model=model, checkpoint_extra=extra,
        log_fn=lambda r: print(
            f"epoch {r.epoch}: train {r.train_loss:.6f} val {r.val_loss:.6f} lr {r.lr:g}"
        ),
    )
    print(f"finished {len(result.epoch_log)} epochs; best val {result.best_val_loss:.6f}")
    return 0


def _load_clip_by_id(dataset: ClipDataset, clip_id: str):
    for record in dataset.records:
        if record.clip_id == clip_id:
            return record, dataset.load(record)
    raise ValueError(f"clip {clip_id!r} not found in dataset index")


def _save_png(rgb_chw: np.ndarray, path: Path) -> None:
    from PIL import Image

    arr = to_uint8(np.moveaxis(rgb_chw, 0, -1))
    Image.fromarray(arr, "RGB").save(path)


def cmd_forecast(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    write_run_manifest(out_dir, "forecast", args, {
        "clip": args.clip, "horizon": args.horizon,
    })
    _apply_thread_cap(args.deterministic)

    model, _meta = load_checkpoint(args.checkpoint)
    dataset = ClipDataset(args.data)
    _record, clip = _load_clip_by_id(dataset, args.clip)
    preds = forecast_clip(
        model, clip.context, clip.future_wind, clip.bathymetry, horizon=args.horizon
    )
    for t in range(preds.shape[0]):
        _save_png(preds[t], out_dir / f"{args.clip}_{t + 1:02d}.png")
    print(f"wrote {preds.shape[0]} prediction frames to {out_dir}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    write_run_manifest(out_dir, "evaluate", args, {})
    _apply_thread_cap(args.deterministic)

    model, meta = load_checkpoint(args.checkpoint)
    dataset = ClipDataset(args.data)
    records = dataset.test_records()
    if not records:
        raise ValueError("dataset has no test clips to evaluate")
    expected_hw = (dataset.index.height, dataset.index.width)

    cmap = Colormap(meta["colormap"]) if meta.get("colormap") else None
    ranges = VariableRanges.from_dict(meta["ranges"]) if meta.get("ranges") else None

    def clip_iter():
        for record in records:
            clip = dataset.load(record)
            if (clip.height, clip.width) != expected_hw:
                raise ValueError(
                    f"clip {record.clip_id} is {clip.height}x{clip.width}, "
                    f"index says {expected_hw[0]}x{expected_hw[1]}"
                )
            yield record.clip_id, clip

    rows, _summaries = evaluate_run(model, clip_iter(), out_dir, cmap=cmap, ranges=ranges)
    print(f"evaluated {len(rows) // HORIZON} clips; reports in {out_dir}")
    return 0


def cmd_export_frames(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    write_run_manifest(out_dir, "export-frames", args, {"which": args.which})

    dataset = ClipDataset(args.data)
    _record, clip = _load_clip_by_id(dataset, args.clip)
    if args.which == "target":
        frames = clip.target
    else:
        frames = clip.context[:, 0:3]
    for t in range(frames.shape[0]):
        _save_png(frames[t], out_dir / f"{args.clip}_{t + 1:02d}.png")
    print(f"wrote {frames.shape[0]} {args.which} frames to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="run seed")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded, byte-reproducible outputs")


def _add_range_flags(p: argparse.ArgumentParser) -> None:
    for name in ("zeta", "windx", "windy", "depth"):
        p.add_argument(f"--{name}-range", nargs=2, type=float, metavar=("LO", "HI"),
                       default=None, help=f"physical {name} range mapped to [0, 1]")
    p.add_argument("--colormap-file", default=None,
                   help="colormap control table, one 't r g b' row per line")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surgecast",
        description="Storm-surge surrogate pipeline: rasterize model output, "
                    "build clip datasets, train and evaluate the forecaster.",
    )
    parser.add_argument("--version", action="version", version=f"surgecast {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("rasterize", help="project nodal series onto an ROI pixel grid")
    p.add_argument("--mesh", required=True, help="ASCII grid mesh file")
    p.add_argument("--zeta", required=True, help="elevation SFLD file")
    p.add_argument("--windx", required=True, help="wind-x SFLD file")
    p.add_argument("--windy", required=True, help="wind-y SFLD file")
    p.add_argument("--roi", nargs=4, type=float, required=True,
                   metavar=("LON_MIN", "LON_MAX", "LAT_MIN", "LAT_MAX"))
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--background", type=float, default=0.0,
                   help="value for dry or uncovered pixels, physical units")
    p.add_argument("--region", default="region0")
    p.add_argument("--storm", default=None, help="storm id recorded in the sidecar")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("build-clips", help="encode grids and cut peak-centered clips")
    p.add_argument("--grids", required=True,
                   help="directory of per-storm rasterize outputs")
    p.add_argument("--out", required=True)
    p.add_argument("--test-fraction", type=float, default=0.10)
    _add_range_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_build_clips)

    p = sub.add_parser("train", help="train the forecaster on a clip dataset")
    p.add_argument("--data", required=True, help="clip dataset directory")
    p.add_argument("--out", required=True, help="run directory for checkpoints and logs")
    p.add_argument("--config-file", default=None, help="key=value training config")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--teacher-forcing-p", type=float, default=None)
    p.add_argument("--hidden-dims", default="128,128,64",
                   help="comma-separated hidden channels per layer")
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--dropout-p", type=float, default=0.1)
    # seed=None keeps a config-file seed effective unless the flag is given
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded, byte-reproducible outputs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="roll out one clip and export PNG frames")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--clip", required=True, help="clip id from index.json")
    p.add_argument("--horizon", type=int, default=HORIZON)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", help="score the test split and write CSV reports")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-frames", help="export stored clip frames as PNGs")
    p.add_argument("--data", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--which", choices=("target", "context"), default="target")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_export_frames)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``.  The end-to-end training
criterion takes several minutes on CPU; everything else is fast.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest
import torch

from oracles import naive_cell_step, naive_mae, naive_mse, naive_r2, random_triangle_soup
from surgecast.clips import build_dataset, event_window, find_peak_frame, split_storms
from surgecast.encode import Colormap, to_uint8
from surgecast.forecast import RolloutConfig, rollout, warmup
from surgecast.ingest import Mesh
from surgecast.metrics import frame_metrics
from surgecast.model import ConvLSTMCell, NetworkConfig, SurgeForecastNet, build_model, gradients
from surgecast.raster import Roi, build_index, build_index_exhaustive, rasterize
from surgecast.synthetic import make_storm_set
from surgecast.train import AdamState, ClipDataset, TrainConfig, adam_step, mse_loss, train_loop


def report(criterion: int, label: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {criterion:2d}] {label}: {status} {detail}".rstrip())
    assert ok, f"criterion {criterion} ({label}) failed: {detail}"


def soup_mesh(rng, n_triangles) -> Mesh:
    lon, lat, tris = random_triangle_soup(rng, n_triangles)
    return Mesh(lon=lon, lat=lat, depth=np.zeros(lon.size), triangles=tris)


def test_criterion_1_rasterization_oracle():
    tic = time.perf_counter()
    rng = np.random.default_rng(101)
    roi = Roi(0.0, 1.0, 0.0, 1.0, width=32, height=32)
    lon_c, lat_c = roi.pixel_centers()
    for case in range(50):
        mesh = soup_mesh(rng, int(rng.integers(5, 51)))
        fast = build_index(mesh, roi)
        slow = build_index_exhaustive(mesh, roi)
        assert np.array_equal(fast.triangle, slow.triangle), f"mask mismatch, case {case}"

        values = rng.normal(size=mesh.node_count)
        got = rasterize(fast, values)
        want = rasterize(slow, values)
        assert np.array_equal(got.mask, want.mask)
        assert np.abs(got.values - want.values).max() <= 1e-12, f"values, case {case}"

        a, b, c = rng.normal(size=3)
        linear = a * mesh.lon + b * mesh.lat + c
        grid = rasterize(fast, linear)
        cov = fast.covered()
        expected = a * lon_c[cov] + b * lat_c[cov] + c
        assert np.abs(grid.values[cov] - expected).max() <= 1e-9, f"linear, case {case}"
    elapsed = time.perf_counter() - tic
    report(1, "rasterization matches exhaustive oracle on 50 random meshes",
           elapsed < 30.0, f"({elapsed:.1f}s)")


def test_criterion_2_colormap_roundtrip():
    tic = time.perf_counter()
    cmap = Colormap.default()
    u = np.linspace(0.0, 1.0, 1001)
    float_err = np.abs(cmap.decode(cmap.encode(u)) - u).max()
    assert float_err < 1e-9, f"float round trip error {float_err}"
    rgb8 = to_uint8(cmap.encode(u)).astype(np.float64) / 255.0
    quant_err = np.abs(cmap.decode(rgb8) - u).max()
    assert quant_err <= 0.004, f"8-bit round trip error {quant_err}"
    elapsed = time.perf_counter() - tic
    report(2, "colormap decode(encode(u)) within 1e-9 float / 0.004 at 8-bit",
           elapsed < 1.0, f"(float {float_err:.2e}, 8-bit {quant_err:.4f}, {elapsed:.2f}s)")


def test_criterion_3_convlstm_analytic_zero_case():
    cell = ConvLSTMCell(2, 3).double()
    with torch.no_grad():
        for p in cell.parameters():
            p.zero_()
    rng = np.random.default_rng(103)
    c0 = rng.normal(size=(3, 6, 6))
    x = torch.from_numpy(rng.normal(size=(2, 6, 6)))
    with torch.no_grad():
        h1, c1 = cell(x, (torch.zeros(3, 6, 6, dtype=torch.float64), torch.from_numpy(c0)))
    err_c = np.abs(c1.numpy() - 0.5 * c0).max()
    err_h = np.abs(h1.numpy() - 0.5 * np.tanh(0.5 * c0)).max()
    report(3, "zero-parameter cell gives C'=0.5C, H'=0.5tanh(0.5C)",
           err_c <= 1e-12 and err_h <= 1e-12, f"(errC {err_c:.1e}, errH {err_h:.1e})")


def test_criterion_4_gate_equation_oracle():
    rng = np.random.default_rng(104)
    worst = 0.0
    for _ in range(100):
        c_in = int(rng.integers(1, 4))
        d = int(rng.integers(1, 4))
        size = int(rng.integers(3, 6))
        cell = ConvLSTMCell(c_in, d).double()
        with torch.no_grad():
            for p in cell.parameters():
                p.copy_(torch.from_numpy(rng.normal(scale=0.5, size=tuple(p.shape))))
        x = rng.normal(size=(c_in, size, size))
        h0 = rng.normal(size=(d, size, size)) * 0.5
        c0 = rng.normal(size=(d, size, size))
        with torch.no_grad():
            h1, c1 = cell(torch.from_numpy(x), (torch.from_numpy(h0), torch.from_numpy(c0)))
        gates = {
            name: (
                getattr(cell, f"w_{name}").weight.detach().numpy().astype(np.float64),
                getattr(cell, f"w_{name}").bias.detach().numpy().astype(np.float64),
            )
            for name in ("f", "i", "c", "o")
        }
        ref_h, ref_c = naive_cell_step(x, h0, c0, gates)
        worst = max(worst, np.abs(h1.numpy() - ref_h).max(), np.abs(c1.numpy() - ref_c).max())
    report(4, "cell step matches scalar-loop gate equations on 100 instances",
           worst <= 1e-10, f"(worst {worst:.1e})")


def test_criterion_5_gradient_check():
    tic = time.perf_counter()
    model = SurgeForecastNet(NetworkConfig(hidden_dims=(2, 2))).double()
    rng = np.random.default_rng(105)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(torch.from_numpy(rng.normal(scale=0.4, size=tuple(p.shape))))
    frames = torch.from_numpy(rng.random((2, 6, 5, 5)))
    targets = torch.from_numpy(rng.random((2, 3, 5, 5)))

    def loss_fn():
        states = model.init_states(5, 5, dtype=torch.float64)
        total = 0.0
        for t in range(2):
            rgb, states = model.forward_step(frames[t], states)
            total = total + torch.mean((rgb - targets[t]) ** 2)
        return total

    analytic = gradients(loss_fn(), model)
    step = 1e-3
    n_checked = 0
    worst = 0.0
    for name, p in model.named_parameters():
        flat = p.detach().view(-1)
        grad_flat = analytic[name].ravel()
        for k in range(flat.numel()):
            orig = float(flat[k])
            with torch.no_grad():
                flat[k] = orig + step
                lp = float(loss_fn())
                flat[k] = orig - step
                lm = float(loss_fn())
                flat[k] = orig
            numeric = (lp - lm) / (2 * step)
            if abs(numeric) + abs(grad_flat[k]) < 1e-8:
                continue
            rel = abs(numeric - grad_flat[k]) / max(abs(numeric), abs(grad_flat[k]))
            worst = max(worst, rel)
            n_checked += 1
            assert rel < 1e-4, f"{name}[{k}]: rel error {rel:.2e}"
    elapsed = time.perf_counter() - tic
    report(5, "finite differences confirm reverse-mode gradients",
           elapsed < 120.0, f"({n_checked} params, worst rel {worst:.1e}, {elapsed:.1f}s)")


def test_criterion_6_overfit_two_clips():
    tic = time.perf_counter()
    from surgecast.clips import storm_clips
    from surgecast.synthetic import StormParams, make_storm_frames

    rng = np.random.default_rng(106)
    clips = []
    # A raised still-water base keeps the encoded colors off the colormap's
    # saturated endpoints, which a logistic decoder can only approach.
    for k, params in enumerate([
        StormParams(0.55, 0.45, -0.004, 0.002, 0.8, 0.20, 16, 18.0, base=0.9),
        StormParams(0.45, 0.55, 0.003, -0.003, 0.7, 0.22, 16, 20.0, base=0.85),
    ]):
        storm = make_storm_frames(f"s{k}", rng, n_frames=32, size=16, params=params)
        clips.append(storm_clips(storm)[0][0])
    ctx = torch.from_numpy(np.stack([c.context for c in clips]))
    tgt = torch.from_numpy(np.stack([c.target for c in clips]))
    wind = torch.from_numpy(np.stack([c.future_wind for c in clips]))
    bathy = torch.from_numpy(np.stack([c.bathymetry for c in clips]))

    model = build_model(NetworkConfig(hidden_dims=(8, 8), dropout_p=0.0), seed=106)
    params = dict(model.named_parameters())
    state = AdamState.for_model(model)
    final = None
    for step_idx in range(500):
        roll_cfg = RolloutConfig(teacher_forcing_p=0.5, rng_seed=step_idx)
        states, y0 = warmup(model, ctx)
        preds = rollout(model, states, y0, wind, bathy, roll_cfg, targets=tgt)
        loss = mse_loss(preds, tgt)
        final = float(loss.detach())
        if final < 1e-3:
            break
        grads_list = torch.autograd.grad(loss, list(params.values()))
        adam_step(params, dict(zip(params, grads_list)), state, lr=1e-3)
    elapsed = time.perf_counter() - tic
    report(6, "two-clip training MSE drops below 1e-3 within 500 steps",
           final < 1e-3 and elapsed < 300.0,
           f"(mse {final:.2e} after {state.step} steps, {elapsed:.0f}s)")


def test_criterion_7_synthetic_end_to_end(tmp_path):
    tic = time.perf_counter()
    storms = make_storm_set(30, seed=2024, n_frames=60, size=32)
    build_dataset(storms, tmp_path / "data", seed=7)
    dataset = ClipDataset(tmp_path / "data")

    cfg = TrainConfig(batch_size=3, lr=1e-3, epochs=20, teacher_forcing_p=0.5, seed=7)
    model = build_model(NetworkConfig(hidden_dims=(8, 8), dropout_p=0.1), seed=7)
    train_loop(dataset, cfg, tmp_path / "run", model=model)

    from surgecast.forecast import forecast_clip

    model_r2 = {t: [] for t in range(1, 25)}
    pers_r2 = {t: [] for t in range(1, 25)}
    test_records = dataset.test_records()
    assert test_records, "no held-out storms"
    for rec in test_records:
        clip = dataset.load(rec)
        preds = forecast_clip(model, clip.context, clip.future_wind, clip.bathymetry)
        last_frame = clip.context[5, 0:3]
        for t in range(24):
            model_r2[t + 1].append(frame_metrics(preds[t], clip.target[t]).r2)
            pers_r2[t + 1].append(frame_metrics(last_frame, clip.target[t]).r2)

    margins = {
        t: float(np.median(model_r2[t]) - np.median(pers_r2[t])) for t in range(6, 25)
    }
    worst_step = min(margins, key=margins.get)
    elapsed = time.perf_counter() - tic
    ok = all(m >= 0.05 for m in margins.values()) and elapsed < 1800.0
    report(7, "trained model beats persistence by >= 0.05 median R2 at steps 6-24",
           ok, f"(worst margin {margins[worst_step]:+.3f} at step {worst_step}, "
               f"{len(test_records)} test clips, {elapsed:.0f}s)")


def test_criterion_8_clip_bookkeeping():
    mean_zeta = np.exp(-0.5 * ((np.arange(60) - 30) / 6.0) ** 2)
    peak = find_peak_frame(mean_zeta)
    window = event_window(peak, 60)
    n_clips = (window[1] - window[0] + 1) - 30 + 1
    ok = peak == 30 and window == (10, 50) and n_clips == 12
    ok = ok and event_window(5, 60) == (0, 25) and event_window(58, 60) == (38, 59)
    ok = ok and event_window(0, 60) == (0, 20) and event_window(59, 60) == (39, 59)
    report(8, "peak-at-30 of 60 frames gives window (10, 50) and 12 clips", ok)


def test_criterion_9_split_leakage():
    checked = 0
    for n, expected_test in ((10, 1), (15, 2), (446, 45), (5, 1), (2, 1)):
        ids = [f"s{i:03d}" for i in range(n)]
        for seed in range(100):
            manifest = split_storms(ids, seed=seed)
            train, test = set(manifest.train_storms), set(manifest.test_storms)
            assert not train & test, f"leak at n={n} seed={seed}"
            assert train | test == set(ids)
            assert len(test) == expected_test, f"n={n}: {len(test)} test storms"
            checked += 1
    report(9, "storm-level splits leak-free over 100 seeds", checked == 500,
           f"({checked} manifests)")


def test_criterion_10_metric_identities():
    rng = np.random.default_rng(110)
    for _ in range(100):
        pred = rng.random((3, 6, 6))
        truth = rng.random((3, 6, 6))
        m = frame_metrics(pred, truth)
        assert abs(m.rmse**2 - m.mse) <= 1e-12
        assert m.mae <= m.rmse + 1e-15
        assert m.r2 <= 1.0
        assert abs(m.mse - naive_mse(pred, truth)) < 1e-10
        assert abs(m.mae - naive_mae(pred, truth)) < 1e-10
        assert abs(m.r2 - naive_r2(pred, truth)) < 1e-10
    perfect = frame_metrics(truth, truth)
    assert perfect.r2 == 1.0 and perfect.mse == 0.0
    mean_pred = np.full_like(truth, truth.mean())
    assert frame_metrics(mean_pred, truth).r2 == pytest.approx(0.0, abs=1e-12)
    assert math.isnan(frame_metrics(truth, np.full_like(truth, 0.3)).r2)
    report(10, "metric identities and naive-loop agreement hold", True)


def test_criterion_11_cli_determinism(tmp_path):
    from surgecast.cli import main
    from surgecast.synthetic import StormParams, structured_mesh, write_storm_inputs

    mesh = structured_mesh(n=10)
    inputs = tmp_path / "inputs"
    for k, p in enumerate([
        StormParams(0.8, 0.45, -0.01, 0.002, 1.8, 0.13, 30, 12.0),
        StormParams(0.2, 0.55, 0.011, -0.003, 1.5, 0.12, 28, 13.0),
        StormParams(0.5, 0.8, 0.002, -0.012, 2.0, 0.14, 32, 12.0),
    ]):
        write_storm_inputs(inputs / f"storm{k}", p, mesh=mesh, n_frames=60)

    def run_pipeline(root):
        grids = root / "grids"
        for sdir in sorted(inputs.iterdir()):
            assert main([
                "rasterize", "--mesh", str(sdir / "mesh.grd"),
                "--zeta", str(sdir / "zeta.sfld"), "--windx", str(sdir / "windx.sfld"),
                "--windy", str(sdir / "windy.sfld"), "--roi", "0", "1", "0", "1",
                "--width", "12", "--height", "12", "--storm", sdir.name,
                "--out", str(grids / sdir.name), "--deterministic", "--seed", "7",
            ]) == 0
        assert main(["build-clips", "--grids", str(grids), "--out", str(root / "clips"),
                     "--seed", "7", "--deterministic"]) == 0
        assert main(["train", "--data", str(root / "clips"), "--out", str(root / "run"),
                     "--epochs", "2", "--batch-size", "2", "--hidden-dims", "4",
                     "--seed", "7", "--deterministic"]) == 0
        assert main(["evaluate", "--checkpoint", str(root / "run" / "best.ckpt"),
                     "--data", str(root / "clips"), "--out", str(root / "eval"),
                     "--deterministic", "--seed", "7"]) == 0
        sclp = {
            f.name: f.read_bytes() for f in sorted((root / "clips").glob("*.sclp"))
        }
        return {
            "sclp": sclp,
            "index": (root / "clips" / "index.json").read_bytes(),
            "best": (root / "run" / "best.ckpt").read_bytes(),
            "last": (root / "run" / "last.ckpt").read_bytes(),
            "metrics": (root / "eval" / "metrics.csv").read_bytes(),
        }

    a = run_pipeline(tmp_path / "a")
    b = run_pipeline(tmp_path / "b")
    ok = a == b
    report(11, "deterministic seed 7 reruns are byte-identical", ok,
           f"({len(a['sclp'])} clip files, checkpoint, metrics.csv)")

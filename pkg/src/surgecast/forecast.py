"""Autoregressive rollout over the forecast horizon.

After a warmup pass over the 6 context frames, the model feeds each predicted
elevation frame back as the next step's input, concatenated with the known
future wind channels and the static bathymetry.  During training the previous
ground-truth frame is probabilistically substituted for the model's own
output (teacher forcing); wind is always ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from .clips import CONTEXT_LEN, HORIZON
from .model import SurgeForecastNet


@dataclass(frozen=True)
class RolloutConfig:
    """Horizon and teacher-forcing behaviour of one rollout."""

    horizon: int = HORIZON
    teacher_forcing_p: float = 0.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not 0.0 <= self.teacher_forcing_p <= 1.0:
            raise ValueError("teacher_forcing_p must lie in [0, 1]")


def warmup(
    model: SurgeForecastNet,
    context: Tensor,
    *,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[list[tuple[Tensor, Tensor]], Tensor]:
    """Run the model over the context window.

    ``context`` is (..., 6, 6, H, W) with the frame axis second-to-last of
    the leading block.  Returns the per-layer states after the final context
    frame and the seed prediction: the elevation-RGB sub-channels of the last
    context frame (not a model output).
    """
    if context.shape[-4] != CONTEXT_LEN:
        raise ValueError(f"context must hold {CONTEXT_LEN} frames, got {context.shape[-4]}")
    h, w = context.shape[-2], context.shape[-1]
    batch = context.shape[0] if context.dim() == 5 else None
    states = model.init_states(h, w, batch=batch, dtype=context.dtype)
    for t in range(CONTEXT_LEN):
        frame = context[..., t, :, :, :]
        _, states = model.forward_step(frame, states, dropout_rng=dropout_rng)
    y0 = context[..., CONTEXT_LEN - 1, 0:3, :, :]
    return states, y0


def rollout(
    model: SurgeForecastNet,
    states: list[tuple[Tensor, Tensor]],
    y0: Tensor,
    future_wind: Tensor,
    bathymetry: Tensor,
    cfg: RolloutConfig,
    targets: Tensor | None = None,
    *,
    dropout_rng: np.random.Generator | None = None,
) -> Tensor:
    """Generate ``cfg.horizon`` elevation-RGB frames autoregressively.

    Step input is the fixed 6-channel concatenation
    [previous elevation RGB, wind x, wind y, bathymetry].  With probability
    ``cfg.teacher_forcing_p`` (one seeded draw per step) the ground-truth
    previous frame replaces the model's own; ``targets`` must be supplied iff
    that probability is positive.
    """
    if future_wind.shape[-4] != cfg.horizon:
        raise ValueError(
            f"future_wind holds {future_wind.shape[-4]} steps, horizon is {cfg.horizon}"
        )
    if cfg.teacher_forcing_p > 0 and targets is None:
        raise ValueError("teacher forcing requires ground-truth targets")

    rng = np.random.default_rng(cfg.rng_seed)
    substitute = rng.random(cfg.horizon) < cfg.teacher_forcing_p

    prev = y0
    outputs = []
    for step in range(cfg.horizon):
        if substitute[step] and targets is not None:
            # Ground truth for step - 1; for the first step that is y0 itself.
            prev = y0 if step == 0 else targets[..., step - 1, :, :, :]
        x = torch.cat(
            [prev, future_wind[..., step, :, :, :], bathymetry], dim=-3
        )
        pred, states = model.forward_step(x, states, dropout_rng=dropout_rng)
        outputs.append(pred)
        prev = pred
    return torch.stack(outputs, dim=-4)


def forecast_clip(
    model: SurgeForecastNet,
    context: np.ndarray,
    future_wind: np.ndarray,
    bathymetry: np.ndarray,
    *,
    horizon: int = HORIZON,
) -> np.ndarray:
    """Pure inference rollout for one clip given as numpy arrays.

    Returns (horizon, 3, H, W) float32 predictions in [0, 1].
    """
    if horizon > future_wind.shape[0]:
        raise ValueError(
            f"horizon {horizon} exceeds the {future_wind.shape[0]} available wind steps"
        )
    with torch.no_grad():
        ctx = torch.from_numpy(np.ascontiguousarray(context, dtype=np.float32))
        wind = torch.from_numpy(np.ascontiguousarray(future_wind[:horizon], dtype=np.float32))
        bathy = torch.from_numpy(np.ascontiguousarray(bathymetry, dtype=np.float32))
        states, y0 = warmup(model, ctx)
        preds = rollout(model, states, y0, wind, bathy, RolloutConfig(horizon=horizon))
    return preds.numpy()

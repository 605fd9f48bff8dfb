"""Stacked convolutional-recurrent network and its checkpoint format.

The compute core is a stack of ConvLSTM cells (gate transforms are 2-D
convolutions over the channel-concatenated input and hidden grids) followed
by a 1x1 convolutional decoder squashed to [0, 1].  torch supplies the tensor
and reverse-mode machinery; the cell arithmetic, initialization, dropout and
serialization are defined here so runs are reproducible from a seed alone.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import Tensor
from torch.nn import functional as F

SSCK_MAGIC = b"SSCK"
SSCK_VERSION = 1


class CheckpointFormatError(ValueError):
    """Raised when an SSCK checkpoint cannot be parsed."""


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture settings for the forecasting network."""

    hidden_dims: tuple[int, ...] = (128, 128, 64)
    kernel_size: tuple[int, int] = (3, 3)
    in_channels: int = 6
    out_channels: int = 3
    dropout_p: float = 0.1

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        object.__setattr__(self, "kernel_size", tuple(int(k) for k in self.kernel_size))
        if len(self.hidden_dims) < 1:
            raise ValueError("need at least one recurrent layer")
        if any(k % 2 == 0 or k < 1 for k in self.kernel_size):
            raise ValueError("kernel size must be odd so same-padding preserves H x W")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")

    def as_dict(self) -> dict:
        return {
            "hidden_dims": list(self.hidden_dims),
            "kernel_size": list(self.kernel_size),
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "dropout_p": self.dropout_p,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(
            hidden_dims=tuple(d["hidden_dims"]),
            kernel_size=tuple(d["kernel_size"]),
            in_channels=int(d["in_channels"]),
            out_channels=int(d["out_channels"]),
            dropout_p=float(d["dropout_p"]),
        )


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           padding: tuple[int, int] | None = None) -> Tensor:
    """Zero-padded cross-correlation of (..., C_in, H, W) with an
    (C_out, C_in, kh, kw) kernel; defaults to same-padding."""
    if x.shape[-3] != weight.shape[1]:
        raise ValueError(
            f"input has {x.shape[-3]} channels, kernel expects {weight.shape[1]}"
        )
    if padding is None:
        padding = ((weight.shape[2] - 1) // 2, (weight.shape[3] - 1) // 2)
    unbatched = x.dim() == 3
    if unbatched:
        x = x.unsqueeze(0)
    y = F.conv2d(x, weight, bias, padding=padding)
    return y.squeeze(0) if unbatched else y


def inverted_dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Train-time dropout scaled by 1/(1-p); the mask comes from a caller
    owned numpy generator so runs replay exactly."""
    if p <= 0.0:
        return x
    keep = torch.from_numpy(
        (rng.random(tuple(x.shape)) >= p).astype(np.float64)
    ).to(x.dtype)
    return x * keep / (1.0 - p)


class ConvLSTMCell(torch.nn.Module):
    """One recurrent layer: four convolutional gates over [x, H] concatenation.

    Update per step: F = sig(Wf*[x,H]+bf), I = sig(Wi*[x,H]+bi),
    Ccand = tanh(Wc*[x,H]+bc), C' = F.C + I.Ccand, O = sig(Wo*[x,H]+bo),
    H' = O.tanh(C').
    """

    def __init__(self, in_channels: int, hidden_channels: int,
                 kernel_size: tuple[int, int] = (3, 3)) -> None:
        super().__init__()
        kh, kw = kernel_size
        pad = ((kh - 1) // 2, (kw - 1) // 2)
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        make = lambda: torch.nn.Conv2d(
            in_channels + hidden_channels, hidden_channels, (kh, kw), padding=pad
        )
        self.w_f = make()
        self.w_i = make()
        self.w_c = make()
        self.w_o = make()

    def forward(self, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        h, c = state
        if x.shape[-3] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {x.shape[-3]}")
        if h.shape[-2:] != x.shape[-2:] or c.shape[-2:] != x.shape[-2:]:
            raise ValueError("state grids must match the input's spatial shape")
        z = torch.cat([x, h], dim=-3)  # concatenation order [x, H] is fixed
        # One fused convolution over the four gate kernels: each output
        # channel is computed independently, so this equals four separate
        # gate convolutions while paying the dispatch cost once.
        weight = torch.cat(
            [self.w_f.weight, self.w_i.weight, self.w_c.weight, self.w_o.weight]
        )
        bias = torch.cat([self.w_f.bias, self.w_i.bias, self.w_c.bias, self.w_o.bias])
        pre = conv2d(z, weight, bias)
        pre_f, pre_i, pre_c, pre_o = torch.split(pre, self.hidden_channels, dim=-3)
        forget = torch.sigmoid(pre_f)
        ingate = torch.sigmoid(pre_i)
        cand = torch.tanh(pre_c)
        c_new = forget * c + ingate * cand
        out = torch.sigmoid(pre_o)
        h_new = out * torch.tanh(c_new)
        return h_new, c_new


class SurgeForecastNet(torch.nn.Module):
    """ConvLSTM stack with inter-layer dropout and a 1x1 decoder.

    ``forward_step`` consumes one 6-channel frame and the per-layer states,
    returning the squashed 3-channel prediction and the new states.
    """

    def __init__(self, config: NetworkConfig) -> None:
        super().__init__()
        self.config = config
        cells = []
        c_in = config.in_channels
        for d in config.hidden_dims:
            cells.append(ConvLSTMCell(c_in, d, config.kernel_size))
            c_in = d
        self.cells = torch.nn.ModuleList(cells)
        self.decoder = torch.nn.Conv2d(config.hidden_dims[-1], config.out_channels, 1)

    def init_states(self, height: int, width: int, *, batch: int | None = None,
                    dtype: torch.dtype = torch.float32) -> list[tuple[Tensor, Tensor]]:
        """Zero hidden and cell grids for every layer."""
        lead = () if batch is None else (batch,)
        return [
            (
                torch.zeros(lead + (d, height, width), dtype=dtype),
                torch.zeros(lead + (d, height, width), dtype=dtype),
            )
            for d in self.config.hidden_dims
        ]

    def forward_step(
        self,
        frame: Tensor,
        states: list[tuple[Tensor, Tensor]],
        *,
        dropout_rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, list[tuple[Tensor, Tensor]]]:
        """Advance every layer one step; dropout runs only when an rng is given."""
        if len(states) != len(self.cells):
            raise ValueError(f"expected {len(self.cells)} layer states, got {len(states)}")
        new_states = []
        h = frame
        for layer, cell in enumerate(self.cells):
            h, c = cell(h, states[layer])
            new_states.append((h, c))
            if layer < len(self.cells) - 1 and dropout_rng is not None:
                h = inverted_dropout(h, self.config.dropout_p, dropout_rng)
        rgb = torch.sigmoid(self.decoder(h))
        return rgb, new_states

    def named_parameter_arrays(self) -> dict[str, np.ndarray]:
        return {
            name: p.detach().cpu().numpy().copy()
            for name, p in sorted(self.named_parameters())
        }


def init_params(model: SurgeForecastNet, seed: int) -> None:
    """Seeded initialization: gate and decoder weights ~ U(+-sqrt(6/(fan_in+fan_out))),
    biases zero except the forget gate's, which starts at 1 to keep early
    memory gradients alive."""
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for name, p in sorted(model.named_parameters()):
            if name.endswith(".bias"):
                p.zero_()
                if ".w_f." in name:
                    p.fill_(1.0)
            else:
                out_c, in_c, kh, kw = p.shape
                bound = float(np.sqrt(6.0 / ((in_c + out_c) * kh * kw)))
                vals = rng.uniform(-bound, bound, size=tuple(p.shape))
                p.copy_(torch.from_numpy(vals).to(p.dtype))


def build_model(config: NetworkConfig, seed: int = 0) -> SurgeForecastNet:
    model = SurgeForecastNet(config)
    init_params(model, seed)
    model.eval()
    return model


def gradients(loss: Tensor, model: torch.nn.Module) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of a recorded scalar loss, keyed by parameter name."""
    if loss.grad_fn is None:
        raise RuntimeError("gradients() requires a loss from a recorded forward pass")
    names, params = zip(*sorted(model.named_parameters()))
    grads = torch.autograd.grad(loss, params, allow_unused=False)
    return {n: g.detach().cpu().numpy().copy() for n, g in zip(names, grads)}


# ---------------------------------------------------------------------------
# SSCK checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path: str | Path, model: SurgeForecastNet, *, extra: dict | None = None) -> None:
    """Write the model to an SSCK file.

    Layout (little-endian): magic ``SSCK``, version u32, JSON blob length u32
    + UTF-8 JSON (network config plus any extra metadata such as value ranges
    and colormap control points), then per-parameter records in sorted-name
    order: name length u16 + UTF-8 name, rank u8, dims u32[rank], f32 data.
    """
    meta = {"config": model.config.as_dict()}
    if extra:
        meta.update(extra)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(SSCK_MAGIC)
        fh.write(struct.pack("<I", SSCK_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name, arr in model.named_parameter_arrays().items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path: str | Path) -> tuple[SurgeForecastNet, dict]:
    """Read an SSCK file back into a model plus its JSON metadata."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SSCK_MAGIC:
            raise CheckpointFormatError(f"{path}: bad magic {magic!r}, expected {SSCK_MAGIC!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != SSCK_VERSION:
            raise CheckpointFormatError(f"{path}: unsupported version {version}")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(blob_len).decode("utf-8"))
        arrays: dict[str, np.ndarray] = {}
        while True:
            head = fh.read(2)
            if not head:
                break
            (name_len,) = struct.unpack("<H", head)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            count = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4")
            if data.shape[0] != count:
                raise CheckpointFormatError(f"{path}: truncated data for parameter {name!r}")
            arrays[name] = data.reshape(dims).copy()

    config = NetworkConfig.from_dict(meta["config"])
    model = SurgeForecastNet(config)
    expected = dict(model.named_parameters())
    if set(arrays) != set(expected):
        missing = set(expected) - set(arrays)
        surplus = set(arrays) - set(expected)
        raise CheckpointFormatError(
            f"{path}: parameter names do not match the config "
            f"(missing={sorted(missing)}, surplus={sorted(surplus)})"
        )
    with torch.no_grad():
        for name, p in expected.items():
            if tuple(arrays[name].shape) != tuple(p.shape):
                raise CheckpointFormatError(
                    f"{path}: parameter {name!r} has shape {arrays[name].shape}, "
                    f"expected {tuple(p.shape)}"
                )
            p.copy_(torch.from_numpy(arrays[name]))
    model.eval()
    return model, meta

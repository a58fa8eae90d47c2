"""SVBR-Net: dual-branch encoder-decoder for non-blind deblurring.

Two U-Net branches consume the normalized blurry image and the blur map
(radii divided by 6). Five block types compose each branch:

  I   3x3 conv -> batch norm -> ReLU
  II  two type-I blocks with a residual connection (channels preserved)
  III downsampling: [I, I, 2x2 average pool] summed with a parallel
      2x2 stride-2 conv + batch norm; doubles channels, halves resolution
  IV  upsampling: 2x2 stride-2 transpose conv -> BN -> ReLU, concatenate
      the encoder skip, then a type-I reduction and a type-II fuse
  V   output: concatenate both branches, 3x3 conv to RGB, logistic squash

At every encoder and decoder level each branch concatenates the sibling
branch's same-level features and fuses them back to the level width with
a type-I block; intra-branch skips are the usual U-Net concatenations.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .common import SvbrError, ensure_image
from .kernels import MAX_RADIUS, BlurField
from .metrics import DEFAULT_SSIM, SsimConfig, ssim_loss_torch


class CheckpointError(SvbrError):
    """Malformed or truncated checkpoint container."""


@dataclass(frozen=True)
class NetworkConfig:
    """Width/depth layout; level l runs at H/2^l with base_width * 2^l channels."""

    depth: int = 4
    base_width: int = 32
    image_channels: int = 3
    map_channels: int = 1

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_width < 1:
            raise ValueError("base_width must be >= 1")

    def level_width(self, level: int) -> int:
        return self.base_width * (2**level)


TINY_CONFIG = NetworkConfig(depth=2, base_width=4)
TOY_CONFIG = NetworkConfig(depth=2, base_width=8)


class ConvBlock(nn.Module):
    """Type I: 3x3 same-padded conv, batch norm, ReLU.

    The conv carries no bias: the batch norm shift makes it redundant.
    """

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1, bias=False)
        self.bn = nn.BatchNorm2d(out_channels)
        self.act = nn.ReLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.bn(self.conv(x)))


class ResidualBlock(nn.Module):
    """Type II: x + I(I(x)); channel count preserved."""

    def __init__(self, channels: int):
        super().__init__()
        self.inner1 = ConvBlock(channels, channels)
        self.inner2 = ConvBlock(channels, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.inner2(self.inner1(x))


class DownBlock(nn.Module):
    """Type III: doubles channels, halves resolution.

    Sum of (I, I, 2x2 average pool) and a parallel 2x2 stride-2 conv
    followed by batch norm.
    """

    def __init__(self, in_channels: int):
        super().__init__()
        out = 2 * in_channels
        self.pre1 = ConvBlock(in_channels, out)
        self.pre2 = ConvBlock(out, out)
        self.pool = nn.AvgPool2d(2)
        self.strided = nn.Conv2d(in_channels, out, 2, stride=2, bias=False)
        self.strided_bn = nn.BatchNorm2d(out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2] % 2 or x.shape[-1] % 2:
            raise ValueError(f"downsampling needs even spatial dims, got {tuple(x.shape[-2:])}")
        return self.pool(self.pre2(self.pre1(x))) + self.strided_bn(self.strided(x))


class UpBlock(nn.Module):
    """Type IV: halves channels, doubles resolution, fuses the skip."""

    def __init__(self, in_channels: int, skip_channels: int):
        super().__init__()
        if in_channels % 2:
            raise ValueError("UpBlock input channels must be even")
        out = in_channels // 2
        self.up = nn.ConvTranspose2d(in_channels, out, 2, stride=2, bias=False)
        self.bn = nn.BatchNorm2d(out)
        self.act = nn.ReLU()
        self.fuse_in = ConvBlock(out + skip_channels, out)
        self.fuse_res = ResidualBlock(out)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        y = self.act(self.bn(self.up(x)))
        if y.shape[-2:] != skip.shape[-2:]:
            raise ValueError(f"skip spatial {tuple(skip.shape[-2:])} != {tuple(y.shape[-2:])}")
        return self.fuse_res(self.fuse_in(torch.cat([y, skip], dim=1)))


class OutputBlock(nn.Module):
    """Type V: concatenate the two branch heads, 3x3 conv to RGB, sigmoid."""

    def __init__(self, in_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, 3, 3, padding=1)

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.conv(torch.cat([a, b], dim=1)))


class SVBRNet(nn.Module):
    """Dual-branch U-Net; forward takes (image, blur_map) tensors in [0, 1]."""

    def __init__(self, config: NetworkConfig = NetworkConfig()):
        super().__init__()
        self.config = config
        d = config.depth
        widths = [config.level_width(l) for l in range(d + 1)]

        self.stem_img = ConvBlock(config.image_channels, widths[0])
        self.stem_map = ConvBlock(config.map_channels, widths[0])

        self.enc_fuse_img = nn.ModuleList(ConvBlock(2 * widths[l], widths[l]) for l in range(d))
        self.enc_fuse_map = nn.ModuleList(ConvBlock(2 * widths[l], widths[l]) for l in range(d))
        self.down_img = nn.ModuleList(DownBlock(widths[l]) for l in range(d))
        self.down_map = nn.ModuleList(DownBlock(widths[l]) for l in range(d))

        self.bot_fuse_img = ConvBlock(2 * widths[d], widths[d])
        self.bot_fuse_map = ConvBlock(2 * widths[d], widths[d])
        self.bot_res_img = ResidualBlock(widths[d])
        self.bot_res_map = ResidualBlock(widths[d])

        self.up_img = nn.ModuleList(UpBlock(widths[l + 1], widths[l]) for l in range(d))
        self.up_map = nn.ModuleList(UpBlock(widths[l + 1], widths[l]) for l in range(d))
        self.dec_fuse_img = nn.ModuleList(ConvBlock(2 * widths[l], widths[l]) for l in range(1, d))
        self.dec_fuse_map = nn.ModuleList(ConvBlock(2 * widths[l], widths[l]) for l in range(1, d))

        self.out_block = OutputBlock(2 * widths[0])

    def _check_inputs(self, image: torch.Tensor, blur_map: torch.Tensor) -> None:
        if image.ndim != 4 or blur_map.ndim != 4:
            raise ValueError("expected batched (B, C, H, W) tensors")
        if image.shape[-2:] != blur_map.shape[-2:]:
            raise ValueError("image and blur map spatial shapes differ")
        div = 2**self.config.depth
        if image.shape[-2] % div or image.shape[-1] % div:
            raise ValueError(
                f"spatial dims {tuple(image.shape[-2:])} not divisible by 2^depth = {div}"
            )

    def forward(
        self, image: torch.Tensor, blur_map: torch.Tensor, collect: dict | None = None
    ) -> torch.Tensor:
        self._check_inputs(image, blur_map)
        d = self.config.depth
        a = self.stem_img(image)
        m = self.stem_map(blur_map)
        skips_a: list[torch.Tensor] = []
        skips_m: list[torch.Tensor] = []
        for l in range(d):
            ca, cm = torch.cat([a, m], dim=1), torch.cat([m, a], dim=1)
            a = self.enc_fuse_img[l](ca)
            m = self.enc_fuse_map[l](cm)
            skips_a.append(a)
            skips_m.append(m)
            a = self.down_img[l](a)
            m = self.down_map[l](m)
            if collect is not None:
                collect[f"enc{l + 1}_img"] = a
                collect[f"enc{l + 1}_map"] = m
        ca, cm = torch.cat([a, m], dim=1), torch.cat([m, a], dim=1)
        a = self.bot_res_img(self.bot_fuse_img(ca))
        m = self.bot_res_map(self.bot_fuse_map(cm))
        for l in reversed(range(d)):
            a = self.up_img[l](a, skips_a[l])
            m = self.up_map[l](m, skips_m[l])
            if collect is not None:
                collect[f"dec{l}_img"] = a
                collect[f"dec{l}_map"] = m
            if l > 0:
                ca, cm = torch.cat([a, m], dim=1), torch.cat([m, a], dim=1)
                a = self.dec_fuse_img[l - 1](ca)
                m = self.dec_fuse_map[l - 1](cm)
        return self.out_block(a, m)


def _convblock_param_count(in_ch: int, out_ch: int) -> int:
    return 9 * in_ch * out_ch + 2 * out_ch  # bias-free conv, bn scale+shift


def _residual_param_count(ch: int) -> int:
    return 2 * _convblock_param_count(ch, ch)


def _down_param_count(in_ch: int) -> int:
    out = 2 * in_ch
    return (
        _convblock_param_count(in_ch, out)
        + _convblock_param_count(out, out)
        + 4 * in_ch * out  # 2x2 strided conv, bias-free
        + 2 * out  # its batch norm
    )


def _up_param_count(in_ch: int, skip_ch: int) -> int:
    out = in_ch // 2
    return (
        4 * in_ch * out  # 2x2 transpose conv, bias-free
        + 2 * out  # its batch norm
        + _convblock_param_count(out + skip_ch, out)
        + _residual_param_count(out)
    )


def expected_parameter_count(cfg: NetworkConfig) -> int:
    """Closed-form learnable-parameter count of SVBRNet(cfg)."""
    d = cfg.depth
    widths = [cfg.level_width(l) for l in range(d + 1)]
    total = _convblock_param_count(cfg.image_channels, widths[0])
    total += _convblock_param_count(cfg.map_channels, widths[0])
    for l in range(d):
        total += 2 * _convblock_param_count(2 * widths[l], widths[l])  # encoder cross-fuses
        total += 2 * _down_param_count(widths[l])
    total += 2 * _convblock_param_count(2 * widths[d], widths[d])  # bottleneck cross-fuses
    total += 2 * _residual_param_count(widths[d])
    for l in range(d):
        total += 2 * _up_param_count(widths[l + 1], widths[l])
    for l in range(1, d):
        total += 2 * _convblock_param_count(2 * widths[l], widths[l])  # decoder cross-fuses
    total += 9 * 2 * widths[0] * 3 + 3  # output conv
    return total


def normalize_blur_map(field: BlurField | np.ndarray) -> np.ndarray:
    """Blur radii -> [0, 1] network input (divide by the 6-pixel maximum)."""
    radii = field.radii if isinstance(field, BlurField) else np.asarray(field, dtype=np.float64)
    return radii / MAX_RADIUS


def deblur_image(
    net: SVBRNet, image: np.ndarray, field: BlurField, mode: str = "eval"
) -> np.ndarray:
    """Run the network on one numpy image + blur field; returns H x W x 3.

    ``mode`` selects batch statistics ("train") or running statistics
    ("eval") for the batch-norm layers.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    img = ensure_image(image, channels=3)
    if img.shape[:2] != (field.height, field.width):
        raise ValueError("image and blur field shapes differ")
    dtype = next(net.parameters()).dtype
    x = torch.from_numpy(img.transpose(2, 0, 1)[None]).to(dtype)
    m = torch.from_numpy(normalize_blur_map(field)[None, None]).to(dtype)
    was_training = net.training
    net.train(mode == "train")
    try:
        with torch.no_grad():
            out = net(x, m)
    finally:
        net.train(was_training)
    return out[0].permute(1, 2, 0).numpy().astype(np.float64)


# --- gradient verification --------------------------------------------------


class GradCheckResult(NamedTuple):
    max_rel_error: float
    worst_param: str
    n_checked: int
    n_skipped_kinks: int


class _ReluSignTap:
    """Records the sign pattern of every ReLU input during a forward pass.

    A parameter probe is only a valid finite-difference point if no ReLU
    input changes sign across the probed interval: the loss restricted
    to that segment is then smooth and central differences are a true
    derivative oracle. Sign flips mark kink-straddling probes to skip.
    """

    def __init__(self, module: nn.Module):
        self.signs: list[torch.Tensor] = []
        self.handles = [
            m.register_forward_pre_hook(self._record)
            for m in module.modules()
            if isinstance(m, nn.ReLU)
        ]

    def _record(self, module, inputs):
        self.signs.append(inputs[0] > 0)

    def reset(self) -> None:
        self.signs = []

    def matches(self, other: list[torch.Tensor]) -> bool:
        if len(self.signs) != len(other):
            return False
        return all(torch.equal(a, b) for a, b in zip(self.signs, other))

    def close(self) -> None:
        for h in self.handles:
            h.remove()


def _relative_errors(
    loss_fn,
    module: nn.Module,
    params: list[tuple[str, torch.Tensor]],
    sample_iter,
    n_target: int,
    epsilon: float,
    corrupt: bool = False,
) -> GradCheckResult:
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [p for _, p in params], allow_unused=True)
    tap = _ReluSignTap(module)
    worst = (0.0, "none")
    checked = 0
    skipped = 0
    try:
        for param_idx, flat_idx in sample_iter:
            if checked >= n_target:
                break
            name, p = params[param_idx]
            g = grads[param_idx]
            analytic = 0.0 if g is None else float(g.reshape(-1)[flat_idx])
            if corrupt and checked == 0:
                analytic += 1.0
            with torch.no_grad():
                flat = p.reshape(-1)
                orig = float(flat[flat_idx])
                flat[flat_idx] = orig + epsilon
                tap.reset()
                loss_plus = float(loss_fn())
                signs_plus = tap.signs
                flat[flat_idx] = orig - epsilon
                tap.reset()
                loss_minus = float(loss_fn())
                flat[flat_idx] = orig
            if not tap.matches(signs_plus):
                skipped += 1
                continue
            numeric = (loss_plus - loss_minus) / (2 * epsilon)
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
            if rel > worst[0]:
                worst = (rel, f"{name}[{flat_idx}]")
            checked += 1
    finally:
        tap.close()
    return GradCheckResult(worst[0], worst[1], checked, skipped)


def gradient_check(
    net: SVBRNet | None = None,
    seed: int = 0,
    n_params: int = 200,
    epsilon: float = 1e-5,
    corrupt: bool = False,
    ssim_cfg: SsimConfig = DEFAULT_SSIM,
) -> GradCheckResult:
    """Compare analytic SSIM-loss gradients against central differences.

    Runs the tiny profile (depth 2, base 4, 16x16 inputs) in double
    precision on n_params randomly sampled parameter entries. Probes
    whose +/- epsilon interval straddles a ReLU kink are skipped and
    resampled (central differences are not a derivative oracle across a
    nondifferentiable point); the skip count is reported. ``corrupt``
    deliberately breaks one analytic gradient (negative control for the
    verification harness itself).
    """
    torch.manual_seed(seed)
    if net is None:
        net = SVBRNet(TINY_CONFIG)
    net = net.double()
    net.train()
    image = torch.rand(2, net.config.image_channels, 16, 16, dtype=torch.float64)
    blur_map = torch.rand(2, net.config.map_channels, 16, 16, dtype=torch.float64)
    target = torch.rand(2, 3, 16, 16, dtype=torch.float64)

    def loss_fn():
        return ssim_loss_torch(net(image, blur_map), target, ssim_cfg)

    params = [(n, p) for n, p in net.named_parameters()]
    rng = np.random.default_rng(seed)

    def sample_iter():
        for _ in range(4 * n_params):
            pi = int(rng.integers(len(params)))
            yield pi, int(rng.integers(params[pi][1].numel()))

    return _relative_errors(loss_fn, net, params, sample_iter(), n_params, epsilon, corrupt)


def gradient_check_blocks(
    seed: int = 0, n_params: int = 40, epsilon: float = 1e-5
) -> dict[str, GradCheckResult]:
    """Finite-difference check for each block type in isolation."""
    torch.manual_seed(seed)
    cases: dict[str, tuple[nn.Module, tuple[torch.Tensor, ...]]] = {
        "I": (ConvBlock(4, 8), (torch.rand(2, 4, 8, 8, dtype=torch.float64),)),
        "II": (ResidualBlock(6), (torch.rand(2, 6, 8, 8, dtype=torch.float64),)),
        "III": (DownBlock(4), (torch.rand(2, 4, 8, 8, dtype=torch.float64),)),
        "IV": (
            UpBlock(8, 4),
            (
                torch.rand(2, 8, 4, 4, dtype=torch.float64),
                torch.rand(2, 4, 8, 8, dtype=torch.float64),
            ),
        ),
        "V": (
            OutputBlock(8),
            (
                torch.rand(2, 4, 8, 8, dtype=torch.float64),
                torch.rand(2, 4, 8, 8, dtype=torch.float64),
            ),
        ),
    }
    results: dict[str, GradCheckResult] = {}
    rng = np.random.default_rng(seed)
    for kind, (block, inputs) in cases.items():
        block = block.double()
        block.train()
        target = torch.rand_like(block(*inputs))

        def loss_fn(block=block, inputs=inputs, target=target):
            return ((block(*inputs) - target) ** 2).mean()

        params = [(n, p) for n, p in block.named_parameters()]

        def sample_iter(params=params):
            for _ in range(4 * n_params):
                pi = int(rng.integers(len(params)))
                yield pi, int(rng.integers(params[pi][1].numel()))

        results[kind] = _relative_errors(loss_fn, block, params, sample_iter(), n_params, epsilon)
    return results


# --- checkpoint container ---------------------------------------------------

CHECKPOINT_MAGIC = b"SVBR"
CHECKPOINT_VERSION = 1


def checkpoint_bytes(net: SVBRNet) -> bytes:
    """Serialize config + parameters/buffers to the checkpoint container.

    Layout: magic "SVBR", version u16, u32-length-prefixed UTF-8 JSON
    config, then per-tensor records (name length u16, name, rank u8,
    dims u32 each, float32 little-endian row-major data).
    """
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<H", CHECKPOINT_VERSION))
    meta = json.dumps(asdict(net.config), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    for name, tensor in net.state_dict().items():
        if name.endswith("num_batches_tracked"):
            continue
        arr = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f4")
        name_b = name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(arr.tobytes())
    return buf.getvalue()


def save_checkpoint(net: SVBRNet, path) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(net))


def _read_exact(buf: io.BytesIO, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data


def load_checkpoint_bytes(data: bytes) -> SVBRNet:
    buf = io.BytesIO(data)
    if _read_exact(buf, 4) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (version,) = struct.unpack("<H", _read_exact(buf, 2))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<I", _read_exact(buf, 4))
    try:
        meta = json.loads(_read_exact(buf, meta_len).decode("utf-8"))
        config = NetworkConfig(**meta)
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"bad checkpoint config: {exc}") from exc
    state: dict[str, torch.Tensor] = {}
    while True:
        head = buf.read(2)
        if not head:
            break
        if len(head) != 2:
            raise CheckpointError("truncated checkpoint")
        (name_len,) = struct.unpack("<H", head)
        name = _read_exact(buf, name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", _read_exact(buf, 1))
        dims = struct.unpack(f"<{rank}I", _read_exact(buf, 4 * rank)) if rank else ()
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = _read_exact(buf, 4 * count)
        state[name] = torch.from_numpy(np.frombuffer(raw, dtype="<f4").reshape(dims).copy())
    net = SVBRNet(config)
    missing, unexpected = net.load_state_dict(state, strict=False)
    unexpected = [n for n in unexpected]
    missing = [n for n in missing if not n.endswith("num_batches_tracked")]
    if missing or unexpected:
        raise CheckpointError(f"checkpoint keys mismatch: missing={missing} unexpected={unexpected}")
    return net


def load_checkpoint(path) -> SVBRNet:
    with open(path, "rb") as f:
        return load_checkpoint_bytes(f.read())

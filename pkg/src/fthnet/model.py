"""The quality-scoring network.

Four parts, channels-last end to end:

* a windowed-attention backbone (patch embed + 4 stages of transformer
  blocks, spatial halving and channel doubling between stages),
* a distortion perception network that turns each stage's feature map
  into a fixed-length vector and concatenates them,
* a parameter hypernetwork that generates per-image weights and biases
  for the target network from the final backbone feature,
* a target network of five linear layers mapping the distortion vector
  to a scalar score.

All math routes through :mod:`fthnet.kernels`; modules here only hold
parameters and wire shapes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from . import kernels
from .config import TARGET_LAYERS, FthnetConfig

# Regression head bias prior: scores live on a 0-100 scale, so starting
# the generated output bias mid-range avoids a long warm-up from zero.
SCORE_BIAS_PRIOR = 65.0
# Init scale of the final-layer generator. The default 0.02 leaves the
# score nearly insensitive to the image, which stalls short schedules.
HEAD_INIT_STD = 0.5


# ---------------------------------------------------------------------------
# parameter-holding wrappers around the functional kernels


class LinearLayer(nn.Module):
    def __init__(self, din: int, dout: int, bias: bool = True):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(din, dout))
        nn.init.trunc_normal_(self.weight, std=0.02)
        self.bias = nn.Parameter(torch.zeros(dout)) if bias else None

    def forward(self, x):
        return kernels.linear(x, self.weight, self.bias)


class Conv2dLayer(nn.Module):
    def __init__(self, cin: int, cout: int, kernel: int, stride: int = 1,
                 padding: int = 0, bias: bool = True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = nn.Parameter(torch.empty(kernel, kernel, cin, cout))
        bound = 1.0 / math.sqrt(cin * kernel * kernel)
        nn.init.uniform_(self.weight, -bound, bound)
        if bias:
            self.bias = nn.Parameter(torch.empty(cout))
            nn.init.uniform_(self.bias, -bound, bound)
        else:
            self.bias = None

    def forward(self, x):
        return kernels.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ChannelNorm(nn.Module):
    def __init__(self, dim: int, epsilon: float = 1e-5):
        super().__init__()
        self.epsilon = epsilon
        self.gamma = nn.Parameter(torch.ones(dim))
        self.beta = nn.Parameter(torch.zeros(dim))

    def forward(self, x):
        return kernels.layer_norm(x, self.gamma, self.beta, self.epsilon)


# ---------------------------------------------------------------------------
# window bookkeeping


def window_partition(x: torch.Tensor, window: int) -> torch.Tensor:
    """(N, H, W, C) -> (N * nH * nW, window^2, C), row-major window order."""
    n, h, w, c = x.shape
    if h % window or w % window:
        raise kernels.DimensionError(
            f"spatial dims {h}x{w} not divisible by window {window}")
    x = x.reshape(n, h // window, window, w // window, window, c)
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(-1, window * window, c)


def window_merge(windows: torch.Tensor, window: int, h: int, w: int) -> torch.Tensor:
    """Inverse of :func:`window_partition`."""
    nw, t, c = windows.shape
    if t != window * window:
        raise kernels.DimensionError(f"window tokens {t} != window^2 {window * window}")
    per_image = (h // window) * (w // window)
    if nw % per_image:
        raise kernels.DimensionError(
            f"window count {nw} not a multiple of windows per image {per_image}")
    n = nw // per_image
    x = windows.reshape(n, h // window, w // window, window, window, c)
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(n, h, w, c)


def cyclic_shift(x: torch.Tensor, offset: int) -> torch.Tensor:
    """Toroidal roll along both spatial axes of an NHWC tensor."""
    n, h, w, c = x.shape
    if abs(offset) >= min(h, w):
        raise kernels.DimensionError(f"|offset| {abs(offset)} must be < min(H, W) = {min(h, w)}")
    if offset == 0:
        return x
    return torch.roll(x, shifts=(offset, offset), dims=(1, 2))


# ---------------------------------------------------------------------------
# backbone


class WindowAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        for name in ("q_w", "k_w", "v_w", "o_w"):
            p = nn.Parameter(torch.empty(dim, dim))
            nn.init.trunc_normal_(p, std=0.02)
            setattr(self, name, p)

    def forward(self, x):
        return kernels.window_attention(x, self.q_w, self.k_w, self.v_w, self.o_w, self.heads)


class Mlp(nn.Module):
    """linear -> GELU -> dropout -> linear -> dropout."""

    def __init__(self, dim: int, hidden: int, drop_rate: float):
        super().__init__()
        self.fc1 = LinearLayer(dim, hidden)
        self.fc2 = LinearLayer(hidden, dim)
        self.drop_rate = drop_rate

    def forward(self, x):
        x = kernels.dropout(kernels.gelu(self.fc1(x)), self.drop_rate, self.training)
        return kernels.dropout(self.fc2(x), self.drop_rate, self.training)


class BasicTransformerBlock(nn.Module):
    """Pre-norm attention and MLP, each with a residual connection.

    Shifted blocks roll the feature by half a window before partitioning
    and roll back after merging, connecting neighbouring windows.
    """

    def __init__(self, dim: int, heads: int, window: int, mlp_ratio: float,
                 shifted: bool, drop_rate: float = 0.0):
        super().__init__()
        self.window = window
        self.shifted = shifted
        self.offset = window // 2
        self.norm1 = ChannelNorm(dim)
        self.attn = WindowAttention(dim, heads)
        self.norm2 = ChannelNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), drop_rate)

    def forward(self, x):
        n, h, w, c = x.shape
        y = self.norm1(x)
        if self.shifted:
            y = cyclic_shift(y, self.offset)
        y = window_merge(self.attn(window_partition(y, self.window)), self.window, h, w)
        if self.shifted:
            y = cyclic_shift(y, -self.offset)
        x = x + y
        return x + self.mlp(self.norm2(x))


class Stage(nn.Module):
    def __init__(self, dim: int, depth: int, heads: int, window: int,
                 mlp_ratio: float, shift: bool, drop_rate: float, downsample: bool):
        super().__init__()
        self.blocks = nn.ModuleList([
            BasicTransformerBlock(dim, heads, window, mlp_ratio,
                                  shifted=shift and (j % 2 == 1), drop_rate=drop_rate)
            for j in range(depth)
        ])
        # 4x4 stride-2 conv, padding 1: halves the spatial size, doubles channels.
        self.downsample = Conv2dLayer(dim, 2 * dim, 4, stride=2, padding=1) if downsample else None

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x


class Backbone(nn.Module):
    def __init__(self, cfg: FthnetConfig):
        super().__init__()
        self.patch_embed = Conv2dLayer(3, cfg.embed_channels, 4, stride=4)
        self.stages = nn.ModuleList([
            Stage(dim, depth, heads, cfg.window_size, cfg.mlp_ratio, cfg.shift,
                  cfg.drop_rate, downsample=(i < 3))
            for i, (dim, depth, heads) in enumerate(zip(cfg.stage_channels, cfg.depths,
                                                        cfg.heads_per_stage))
        ])

    def forward(self, images: torch.Tensor) -> list[torch.Tensor]:
        """Returns the per-stage features [X0, X1, X2, X3]."""
        x = self.patch_embed(images)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
            if stage.downsample is not None:
                x = stage.downsample(x)
        return feats


# ---------------------------------------------------------------------------
# distortion perception


class DistortionBlock(nn.Module):
    """1x1 conv to C/8 channels, softpool downscale, flatten, linear."""

    def __init__(self, in_ch: int, size: int, pool: int, out_len: int):
        super().__init__()
        self.pool = pool
        self.merge = Conv2dLayer(in_ch, in_ch // 8, 1)
        self.flat = (size // pool) ** 2 * (in_ch // 8)
        self.proj = LinearLayer(self.flat, out_len)

    def forward(self, x):
        y = kernels.softpool2d(self.merge(x), self.pool)
        return self.proj(y.reshape(y.shape[0], -1))


class DistortionNetwork(nn.Module):
    def __init__(self, cfg: FthnetConfig):
        super().__init__()
        self.blocks = nn.ModuleList([
            DistortionBlock(ch, size, cfg.dpb_pool, cfg.dpb_out_len)
            for ch, size in zip(cfg.stage_channels, cfg.stage_sizes)
        ])

    def forward(self, feats: list[torch.Tensor]) -> torch.Tensor:
        """Concatenates the four stage vectors, stage order preserved."""
        return torch.cat([blk(f) for blk, f in zip(self.blocks, feats)], dim=-1)


# ---------------------------------------------------------------------------
# parameter hypernetwork and target network


@dataclass
class GeneratedParams:
    """Per-sample target-network parameters; leading axis is the batch."""

    weights: tuple[torch.Tensor, ...]  # layer i: (N, in_dim, out_dim)
    biases: tuple[torch.Tensor, ...]   # layer i: (N, out_dim)

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise kernels.DimensionError("weights and biases must pair up per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] != b.shape[0] or w.shape[-1] != b.shape[-1]:
                raise kernels.DimensionError(
                    f"layer {i + 1}: weight {tuple(w.shape)} and bias {tuple(b.shape)} disagree")


class ParamGeneratingLayer(nn.Module):
    """Two branches: 3x3 conv reshaped into the weight matrix, and a
    globally softpooled linear projection for the bias vector."""

    def __init__(self, in_ch: int, map_size: int, in_dim: int, out_dim: int):
        super().__init__()
        self.map_size = map_size
        self.in_dim = in_dim
        self.out_dim = out_dim
        conv_out = in_dim * out_dim // map_size ** 2
        self.weight_conv = Conv2dLayer(in_ch, conv_out, 3, stride=1, padding=1)
        self.bias_proj = LinearLayer(in_ch, out_dim)

    def forward(self, p):
        n = p.shape[0]
        w = self.weight_conv(p).reshape(n, self.in_dim, self.out_dim)
        pooled = kernels.softpool2d(p, self.map_size).reshape(n, -1)
        return w, self.bias_proj(pooled)


class PooledParamLayer(nn.Module):
    """Final-layer generator: the reshape rule is non-integral for the
    36 -> 1 layer, so both its weight and bias come from the pooled
    linear branch."""

    def __init__(self, in_ch: int, map_size: int, in_dim: int):
        super().__init__()
        self.map_size = map_size
        self.in_dim = in_dim
        self.weight_proj = LinearLayer(in_ch, in_dim)
        self.bias_proj = LinearLayer(in_ch, 1)
        with torch.no_grad():
            nn.init.trunc_normal_(self.weight_proj.weight, std=HEAD_INIT_STD)
            nn.init.trunc_normal_(self.bias_proj.weight, std=HEAD_INIT_STD)
            self.bias_proj.bias.fill_(SCORE_BIAS_PRIOR)

    def forward(self, p):
        n = p.shape[0]
        pooled = kernels.softpool2d(p, self.map_size).reshape(n, -1)
        w = self.weight_proj(pooled).reshape(n, self.in_dim, 1)
        return w, self.bias_proj(pooled)


class ParameterHypernetwork(nn.Module):
    """Five stages of 1x1 channel-halving merges feeding the generators.

    ``stepwise`` chains each merge off the previous stage's output;
    ``direct`` runs five independent merges off the final backbone
    feature. Merge convs carry no bias so their parameter counts follow
    the closed-form channel arithmetic exactly.
    """

    def __init__(self, cfg: FthnetConfig):
        super().__init__()
        if cfg.hypernet_mode not in ("stepwise", "direct"):
            raise kernels.KernelConfigError(f"hypernetwork cannot be built in mode {cfg.hypernet_mode!r}")
        self.mode = cfg.hypernet_mode
        self.map_size = cfg.map_size
        c8 = 8 * cfg.embed_channels
        chans = cfg.hypernet_channels
        if self.mode == "stepwise":
            ins = (c8,) + chans[:-1]
        else:
            ins = (c8,) * TARGET_LAYERS
        self.merges = nn.ModuleList([
            Conv2dLayer(ci, co, 1, bias=False) for ci, co in zip(ins, chans)
        ])
        widths = cfg.target_widths
        gens: list[nn.Module] = [
            ParamGeneratingLayer(chans[i], cfg.map_size, widths[i], widths[i + 1])
            for i in range(TARGET_LAYERS - 1)
        ]
        gens.append(PooledParamLayer(chans[-1], cfg.map_size, widths[TARGET_LAYERS - 1]))
        self.generators = nn.ModuleList(gens)

    def forward(self, x3: torch.Tensor) -> GeneratedParams:
        if self.mode == "stepwise":
            stages = []
            p = x3
            for merge in self.merges:
                p = merge(p)
                stages.append(p)
        else:
            stages = [merge(x3) for merge in self.merges]
        outs = [gen(p) for gen, p in zip(self.generators, stages)]
        return GeneratedParams(tuple(w for w, _ in outs), tuple(b for _, b in outs))


class DirectTargetParams(nn.Module):
    """Learned target-network parameters for the no-hypernetwork ablation."""

    def __init__(self, cfg: FthnetConfig):
        super().__init__()
        widths = cfg.target_widths
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        for din, dout in zip(widths[:-1], widths[1:]):
            w = nn.Parameter(torch.empty(din, dout))
            nn.init.trunc_normal_(w, std=0.02)
            self.weights.append(w)
            self.biases.append(nn.Parameter(torch.zeros(dout)))
        with torch.no_grad():
            nn.init.trunc_normal_(self.weights[-1], std=HEAD_INIT_STD)
            self.biases[-1].fill_(SCORE_BIAS_PRIOR)

    def as_generated(self, batch: int) -> GeneratedParams:
        return GeneratedParams(
            tuple(w.unsqueeze(0).expand(batch, -1, -1) for w in self.weights),
            tuple(b.unsqueeze(0).expand(batch, -1) for b in self.biases),
        )


def target_forward(v: torch.Tensor, params: GeneratedParams) -> torch.Tensor:
    """Five linear layers with ReLU between them, none after the last.

    ``v`` is (N, L); returns raw (unclamped) scores of shape (N,).
    """
    if v.ndim != 2:
        raise kernels.DimensionError(f"target input must be (N, L), got {tuple(v.shape)}")
    x = v.unsqueeze(1)  # (N, 1, L)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if w.shape[-2] != x.shape[-1]:
            raise kernels.DimensionError(
                f"target layer {i + 1}: weight expects {w.shape[-2]} features, got {x.shape[-1]}")
        x = x @ w + b.unsqueeze(1)
        if i < last:
            x = kernels.relu(x)
    return x.reshape(-1)


# ---------------------------------------------------------------------------
# the full model


class FTHNet(nn.Module):
    def __init__(self, cfg: FthnetConfig):
        super().__init__()
        self.config = cfg
        self.backbone = Backbone(cfg)
        self.dpn = DistortionNetwork(cfg)
        if cfg.hypernet_mode == "off":
            self.target = DirectTargetParams(cfg)
            self.hypernet = None
        else:
            self.hypernet = ParameterHypernetwork(cfg)
            self.target = None

    def _check_images(self, images: torch.Tensor) -> None:
        s = self.config.input_size
        if images.ndim != 4 or images.shape[1] != s or images.shape[2] != s or images.shape[3] != 3:
            raise kernels.DimensionError(
                f"expected images (N, {s}, {s}, 3), got {tuple(images.shape)}")

    def generated_params(self, images: torch.Tensor) -> GeneratedParams:
        self._check_images(images)
        feats = self.backbone(images)
        if self.hypernet is None:
            return self.target.as_generated(images.shape[0])
        return self.hypernet(feats[-1])

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """Raw quality scores, one per image; clamping is a serving concern."""
        self._check_images(images)
        feats = self.backbone(images)
        v = self.dpn(feats)
        if self.hypernet is None:
            params = self.target.as_generated(images.shape[0])
        else:
            params = self.hypernet(feats[-1])
        return target_forward(v, params)


def build_model(cfg: FthnetConfig, seed: int | None = None) -> FTHNet:
    """Construct a model, optionally with a fixed initialization seed."""
    if seed is not None:
        torch.manual_seed(seed)
    return FTHNet(cfg)


# ---------------------------------------------------------------------------
# accounting


def count_params(module: nn.Module) -> int:
    """Number of learnable scalars."""
    return sum(p.numel() for p in module.parameters())


def downsample_param_counts(cfg: FthnetConfig, mode: str | None = None) -> list[int]:
    """Per-layer parameter counts of the hypernetwork's 1x1 merge convs."""
    c8 = 8 * cfg.embed_channels
    chans = cfg.hypernet_channels
    ins = (c8,) + chans[:-1] if (mode or cfg.hypernet_mode) == "stepwise" else (c8,) * TARGET_LAYERS
    return [ci * co for ci, co in zip(ins, chans)]


def downsample_mac_counts(cfg: FthnetConfig, mode: str | None = None) -> list[int]:
    """Per-layer multiply-accumulates of the merge convs at map resolution."""
    m2 = cfg.map_size ** 2
    return [p * m2 for p in downsample_param_counts(cfg, mode)]


def count_flops(cfg: FthnetConfig) -> int:
    """FLOPs of one forward pass at cfg.input_size, counted as
    multiply-accumulates x 2 over convs, linears and attention matmuls."""
    macs = 0
    # patch embed
    s = cfg.stage_sizes[0]
    macs += s * s * 16 * 3 * cfg.embed_channels
    t = cfg.window_size ** 2
    for i, (size, ch, depth) in enumerate(zip(cfg.stage_sizes, cfg.stage_channels, cfg.depths)):
        area = size * size
        per_block = 4 * area * ch * ch          # q, k, v, o projections
        per_block += 2 * area * t * ch          # attention score and mix matmuls
        per_block += 2 * area * ch * int(cfg.mlp_ratio * ch)  # MLP
        macs += depth * per_block
        if i < 3:
            macs += (size // 2) ** 2 * 16 * ch * (2 * ch)     # downsample conv
        # distortion block
        macs += area * ch * (ch // 8)
        macs += (size // cfg.dpb_pool) ** 2 * (ch // 8) * cfg.dpb_out_len
    if cfg.hypernet_mode != "off":
        macs += sum(downsample_mac_counts(cfg))
        m2 = cfg.map_size ** 2
        widths = cfg.target_widths
        chans = cfg.hypernet_channels
        for i in range(TARGET_LAYERS - 1):
            macs += m2 * 9 * chans[i] * cfg.pgl_conv_channels(i + 1)  # weight conv
            macs += chans[i] * widths[i + 1]                          # bias linear
        macs += chans[-1] * widths[TARGET_LAYERS - 1] + chans[-1]     # pooled final layer
    # target network
    macs += sum(a * b for a, b in zip(cfg.target_widths[:-1], cfg.target_widths[1:]))
    return 2 * macs

"""Differentiable numeric kernels used by every layer of the model.

Image-like tensors are channels-last ``(N, H, W, C)`` throughout. Each
kernel validates its shapes up front, checks the output for NaN/Inf, and
is deterministic given its inputs (dropout takes an explicit seed).
Gradients are provided by autograd; ``gradcheck`` verifies them against
central finite differences.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

Tensor = torch.Tensor


class DimensionError(ValueError):
    """Shapes do not line up; the message names the offending axes."""


class KernelConfigError(ValueError):
    """A kernel hyperparameter is invalid (heads, dropout rate, ...)."""


class NonFiniteError(FloatingPointError):
    """A kernel produced NaN or Inf."""


def _check_finite(out: Tensor, op: str) -> Tensor:
    if not torch.isfinite(out).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2D convolution on NHWC input with an (KH, KW, Cin, Cout) weight.

    Output spatial size is ``floor((H + 2*padding - K) / stride) + 1``.
    """
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be NHWC, got {x.ndim}D {tuple(x.shape)}")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d weight must be (KH, KW, Cin, Cout), got {tuple(weight.shape)}")
    kh, kw, cin, cout = weight.shape
    n, h, w, c = x.shape
    if c != cin:
        raise DimensionError(f"conv2d channel mismatch: input C={c} (axis 3), weight Cin={cin} (axis 2)")
    if bias is not None and tuple(bias.shape) != (cout,):
        raise DimensionError(f"conv2d bias must be ({cout},), got {tuple(bias.shape)}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise DimensionError(
            f"conv2d kernel {kh}x{kw} does not fit padded input {h + 2 * padding}x{w + 2 * padding}")
    out = F.conv2d(x.permute(0, 3, 1, 2), weight.permute(3, 2, 0, 1), bias,
                   stride=stride, padding=padding)
    return _check_finite(out.permute(0, 2, 3, 1).contiguous(), "conv2d")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x @ weight + bias``, weight (Din, Dout)."""
    if weight.ndim != 2:
        raise DimensionError(f"linear weight must be (Din, Dout), got {tuple(weight.shape)}")
    din, dout = weight.shape
    if x.shape[-1] != din:
        raise DimensionError(f"linear input last axis {x.shape[-1]} != weight Din {din}")
    if bias is not None and tuple(bias.shape) != (dout,):
        raise DimensionError(f"linear bias must be ({dout},), got {tuple(bias.shape)}")
    out = x @ weight
    if bias is not None:
        out = out + bias
    return _check_finite(out, "linear")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, epsilon: float = 1e-5) -> Tensor:
    """Layer normalization over the channel (last) axis, population variance."""
    c = x.shape[-1]
    if tuple(gamma.shape) != (c,) or tuple(beta.shape) != (c,):
        raise DimensionError(
            f"layer_norm gamma/beta must be ({c},), got {tuple(gamma.shape)} / {tuple(beta.shape)}")
    out = F.layer_norm(x, (c,), gamma, beta, epsilon)
    return _check_finite(out, "layer_norm")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return _check_finite(F.softmax(x, dim=axis), "softmax")


def gelu(x: Tensor) -> Tensor:
    return _check_finite(F.gelu(x), "gelu")


def relu(x: Tensor) -> Tensor:
    return _check_finite(F.relu(x), "relu")


def dropout(x: Tensor, rate: float, training: bool, seed: int | None = None) -> Tensor:
    """Inverted dropout; exact identity when not training or rate == 0.

    With an explicit ``seed`` the mask is fully determined by it;
    otherwise the mask comes from torch's global RNG (so a process-level
    ``torch.manual_seed`` still pins it).
    """
    if not 0.0 <= rate < 1.0:
        raise KernelConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    gen = None
    if seed is not None:
        gen = torch.Generator(device=x.device)
        gen.manual_seed(seed)
    keep = (torch.rand(x.shape, generator=gen, device=x.device, dtype=x.dtype) >= rate)
    return _check_finite(x * keep.to(x.dtype) / (1.0 - rate), "dropout")


def softpool2d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    """Exponentially weighted pooling over non-overlapping kernel regions.

    Each output cell is ``sum_i softmax(a)_i * a_i`` over its region, per
    channel, so the result always lies in [min, max] of the region.
    Requires kernel == stride and spatial dims divisible by the kernel.
    """
    if stride is None:
        stride = kernel
    if stride != kernel:
        raise KernelConfigError(f"softpool2d requires kernel == stride, got {kernel} != {stride}")
    if x.ndim != 4:
        raise DimensionError(f"softpool2d input must be NHWC, got {x.ndim}D {tuple(x.shape)}")
    n, h, w, c = x.shape
    if h % kernel or w % kernel:
        raise DimensionError(f"softpool2d spatial dims {h}x{w} not divisible by kernel {kernel}")
    ho, wo = h // kernel, w // kernel
    # (N, Ho, k, Wo, k, C) -> (N, Ho, Wo, C, k*k); softmax weights keep exp stable
    regions = x.reshape(n, ho, kernel, wo, kernel, c).permute(0, 1, 3, 5, 2, 4)
    regions = regions.reshape(n, ho, wo, c, kernel * kernel)
    weights = F.softmax(regions, dim=-1)
    return _check_finite((weights * regions).sum(dim=-1), "softpool2d")


def window_attention(x: Tensor, q_w: Tensor, k_w: Tensor, v_w: Tensor,
                     o_w: Tensor, heads: int) -> Tensor:
    """Multi-head self-attention within each window of a (Nw, T, C) batch.

    Scaled dot-product per head with scale 1/sqrt(C/heads); heads are
    concatenated and projected by ``o_w``. Windows never mix.
    """
    if x.ndim != 3:
        raise DimensionError(f"window_attention input must be (Nw, T, C), got {tuple(x.shape)}")
    nw, t, c = x.shape
    for name, w in (("q_w", q_w), ("k_w", k_w), ("v_w", v_w), ("o_w", o_w)):
        if tuple(w.shape) != (c, c):
            raise DimensionError(f"window_attention {name} must be ({c}, {c}), got {tuple(w.shape)}")
    if heads < 1 or c % heads != 0:
        raise KernelConfigError(f"window_attention heads={heads} must divide C={c}")
    hd = c // heads
    scale = 1.0 / math.sqrt(hd)

    def split(t_: Tensor) -> Tensor:
        return t_.reshape(nw, t, heads, hd).transpose(1, 2)  # (Nw, heads, T, hd)

    q, k, v = split(x @ q_w), split(x @ k_w), split(x @ v_w)
    attn = F.softmax((q @ k.transpose(-2, -1)) * scale, dim=-1)
    out = (attn @ v).transpose(1, 2).reshape(nw, t, c)
    return _check_finite(out @ o_w, "window_attention")

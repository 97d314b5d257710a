"""Finite-difference verification of kernel gradients.

Every kernel is registered here with a sampler that draws small O(1)
inputs. ``check_gradient`` runs the kernel at float64, pulls analytic
input-gradients out of autograd, and compares them against central
differences. Samplers that can land on a non-differentiable point (relu
at zero) are resampled a bounded number of times.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import torch

from . import kernels

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-3
# Elements where both gradients are this small are compared absolutely.
TINY_GRAD = 1e-6


@dataclass
class KernelGrad:
    """One analytic gradient evaluation of a registered op."""

    op: str
    inputs: tuple[torch.Tensor, ...]
    grad_output: torch.Tensor
    input_grads: tuple[torch.Tensor, ...]


@dataclass
class GradCheckReport:
    op: str
    passed: bool
    max_rel_err: float
    per_input: dict[int, float]
    tolerance: float
    resamples: int = 0


@dataclass
class KernelEntry:
    fn: Callable[..., torch.Tensor]
    sampler: Callable[[torch.Generator], tuple[tuple, dict]]
    differentiable: Sequence[int]
    # Returns True when the sampled inputs sit too close to a kink.
    near_kink: Callable[[tuple], bool] | None = None


_REGISTRY: dict[str, KernelEntry] = {}


def register_kernel(name: str, fn, sampler, differentiable, near_kink=None) -> None:
    _REGISTRY[name] = KernelEntry(fn, sampler, differentiable, near_kink)


def registered_kernels() -> list[str]:
    return sorted(_REGISTRY)


def kernel_grad(op: str, inputs: tuple, kwargs: dict | None = None,
                grad_output: torch.Tensor | None = None) -> KernelGrad:
    """Evaluate analytic input-gradients of a registered op via autograd."""
    entry = _REGISTRY[op]
    kwargs = kwargs or {}
    leaves = []
    args = []
    for i, a in enumerate(inputs):
        if i in entry.differentiable:
            a = a.detach().clone().requires_grad_(True)
            leaves.append(a)
        args.append(a)
    out = entry.fn(*args, **kwargs)
    if grad_output is None:
        grad_output = torch.ones_like(out)
    grads = torch.autograd.grad((out * grad_output).sum(), leaves)
    for g, leaf in zip(grads, leaves):
        if tuple(g.shape) != tuple(leaf.shape):
            raise kernels.DimensionError(
                f"{op} input-gradient shape {tuple(g.shape)} != input shape {tuple(leaf.shape)}")
    return KernelGrad(op, tuple(args), grad_output, tuple(grads))


def _numeric_grad(fn, args, kwargs, idx, grad_output, h):
    x = args[idx]
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for j in range(flat.numel()):
        orig = flat[j].item()
        flat[j] = orig + h
        plus = (fn(*args, **kwargs) * grad_output).sum().item()
        flat[j] = orig - h
        minus = (fn(*args, **kwargs) * grad_output).sum().item()
        flat[j] = orig
        gflat[j] = (plus - minus) / (2.0 * h)
    return grad


def _compare(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    diff = (analytic - numeric).abs()
    denom = torch.maximum(analytic.abs(), numeric.abs())
    rel = diff / denom.clamp_min(TINY_GRAD)
    rel = torch.where(denom <= TINY_GRAD, torch.zeros_like(rel), rel)
    return float(rel.max()) if rel.numel() else 0.0


def check_gradient(op: str, inputs: tuple | None = None, kwargs: dict | None = None,
                   tolerance: float = DEFAULT_TOLERANCE, seed: int = 0,
                   h: float = DEFAULT_STEP, max_resamples: int = 5) -> GradCheckReport:
    """Compare analytic gradients of a registered op against central differences.

    Runs at float64. When ``inputs`` is omitted the op's sampler draws
    them from ``seed``; inputs near a kink are resampled up to
    ``max_resamples`` times before giving up.
    """
    entry = _REGISTRY[op]
    resamples = 0
    if inputs is None:
        gen = torch.Generator().manual_seed(seed)
        args, skw = entry.sampler(gen)
        while entry.near_kink is not None and entry.near_kink(args):
            resamples += 1
            if resamples > max_resamples:
                raise RuntimeError(f"{op}: could not sample away from a non-differentiable point")
            args, skw = entry.sampler(gen)
        kwargs = {**skw, **(kwargs or {})}
    else:
        args = inputs
        kwargs = kwargs or {}
    args = tuple(a.detach().double() if isinstance(a, torch.Tensor) else a for a in args)

    out = entry.fn(*args, **kwargs)
    gen_go = torch.Generator().manual_seed(seed + 7919)
    grad_output = torch.rand(out.shape, generator=gen_go, dtype=torch.float64)

    analytic = kernel_grad(op, args, kwargs, grad_output)
    per_input = {}
    for pos, idx in enumerate(entry.differentiable):
        numeric = _numeric_grad(entry.fn, [a.clone() if isinstance(a, torch.Tensor) else a
                                           for a in args], kwargs, idx, grad_output, h)
        per_input[idx] = _compare(analytic.input_grads[pos], numeric)
    worst = max(per_input.values()) if per_input else 0.0
    return GradCheckReport(op, worst <= tolerance, worst, per_input, tolerance, resamples)


def _rand(gen, *shape):
    return torch.rand(shape, generator=gen, dtype=torch.float64) * 2.0 - 1.0


def _sample_conv2d(gen):
    x = _rand(gen, 1, 8, 8, 2)
    w = _rand(gen, 3, 3, 2, 3)
    b = _rand(gen, 3)
    return (x, w, b), {"stride": 1, "padding": 1}


def _sample_linear(gen):
    return (_rand(gen, 4, 3), _rand(gen, 3, 5), _rand(gen, 5)), {}


def _sample_layer_norm(gen):
    return (_rand(gen, 2, 4, 6), _rand(gen, 6), _rand(gen, 6)), {}


def _sample_softmax(gen):
    return (_rand(gen, 3, 7),), {"axis": -1}


def _sample_gelu(gen):
    return (_rand(gen, 4, 5),), {}


def _sample_relu(gen):
    return (_rand(gen, 4, 5),), {}


def _relu_near_kink(args):
    return bool((args[0].abs() < 1e-3).any())


def _sample_dropout(gen):
    # Fixed mask seed keeps the op a (deterministic) linear map.
    return (_rand(gen, 4, 6),), {"rate": 0.3, "training": True, "seed": 1234}


def _sample_softpool(gen):
    return (_rand(gen, 1, 4, 4, 2),), {"kernel": 2}


def _sample_window_attention(gen):
    x = _rand(gen, 2, 4, 6)
    return (x, _rand(gen, 6, 6), _rand(gen, 6, 6), _rand(gen, 6, 6), _rand(gen, 6, 6)), {"heads": 2}


register_kernel("conv2d", kernels.conv2d, _sample_conv2d, (0, 1, 2))
register_kernel("linear", kernels.linear, _sample_linear, (0, 1, 2))
register_kernel("layer_norm", kernels.layer_norm, _sample_layer_norm, (0, 1, 2))
register_kernel("softmax", kernels.softmax, _sample_softmax, (0,))
register_kernel("gelu", kernels.gelu, _sample_gelu, (0,))
register_kernel("relu", kernels.relu, _sample_relu, (0,), near_kink=_relu_near_kink)
register_kernel("dropout", kernels.dropout, _sample_dropout, (0,))
register_kernel("softpool2d", kernels.softpool2d, _sample_softpool, (0,))
register_kernel("window_attention", kernels.window_attention, _sample_window_attention,
                (0, 1, 2, 3, 4))

"""Shared test utilities: a float64 central-difference gradient oracle and tiny configs."""

from __future__ import annotations

import torch

from dgspnet.config import ModelConfig

FD_STEP = 1e-5
FD_TOL = 1e-6


def tiny_model_config(**overrides) -> ModelConfig:
    cfg = ModelConfig(widths=[4, 8, 8, 16, 16], dec_width=8, bridge_heads=2, tgsa_dim=8,
                      inv_channels=8, inv_heads=2, text_dim=16, text_heads=2)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    cfg.validate()
    return cfg


def numeric_grad(fn, x: torch.Tensor, step: float = FD_STEP) -> torch.Tensor:
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``x`` (perturbed in place)."""
    grad = torch.zeros_like(x)
    flat, gflat = x.data.view(-1), grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + step
            up = float(fn())
            flat[i] = orig - step
            down = float(fn())
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
    return grad


def rel_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    scale = max(analytic.norm().item(), numeric.norm().item(), 1e-12)
    return (analytic - numeric).norm().item() / scale


def grad_check(fn, tensors: list[torch.Tensor], step: float = FD_STEP) -> float:
    """Relative error between autograd and central differences over the joint gradient.

    The error is measured on the concatenation of all gradients so tensors
    whose true gradient is zero (e.g. a conv bias feeding BatchNorm) do not
    turn roundoff into a spurious relative error. ``fn`` must rebuild its
    graph on each call and return a float64 scalar.
    """
    for t in tensors:
        t.grad = None
        t.requires_grad_(True)
    fn().backward()
    analytic = [t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t)
                for t in tensors]
    numeric = [numeric_grad(fn, t, step) for t in tensors]
    return rel_error(torch.cat([a.flatten() for a in analytic]),
                     torch.cat([n.flatten() for n in numeric]))

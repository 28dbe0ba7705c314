"""Shared utilities for the test suite."""

import numpy as np
import torch

torch.set_num_threads(1)


def weights64(module):
    """state_dict tensors as float64 numpy arrays keyed by parameter path."""
    return {k: v.detach().double().numpy() for k, v in module.state_dict().items()}


def t64(arr):
    return torch.from_numpy(np.asarray(arr, dtype=np.float64))


def t32(arr):
    return torch.from_numpy(np.asarray(arr, dtype=np.float32))


def rand64(rng, *shape):
    return rng.standard_normal(shape)


def max_abs_diff(a, b):
    a = a.detach().cpu().numpy() if torch.is_tensor(a) else np.asarray(a)
    b = b.detach().cpu().numpy() if torch.is_tensor(b) else np.asarray(b)
    return float(np.max(np.abs(a - b)))


def analytic_grads(scalar_fn, params):
    """Gradients of scalar_fn() with respect to params via backprop."""
    for p in params:
        if p.grad is not None:
            p.grad = None
    value = scalar_fn()
    value.backward()
    return [p.grad.detach().clone().numpy() for p in params]


def finite_difference_grads(scalar_fn, params, eps=1e-5):
    """Central finite differences of scalar_fn() wrt each element of params."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = np.zeros(p.numel(), dtype=np.float64)
            flat = p.view(-1)
            for i in range(p.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                f_plus = scalar_fn().item()
                flat[i] = orig - eps
                f_minus = scalar_fn().item()
                flat[i] = orig
                g[i] = (f_plus - f_minus) / (2.0 * eps)
            grads.append(g.reshape(tuple(p.shape)))
    return grads


def max_rel_err(analytic, numeric, floor=1e-8):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def projection_loss(out, seed=0):
    """Fixed random projection to a scalar; catches sign/permutation errors
    that a plain sum would miss."""
    gen = torch.Generator().manual_seed(seed)
    r = torch.randn(out.shape, generator=gen, dtype=out.dtype)
    return (out * r).sum()

"""Parser/restoration feature fusion blocks and the propagation gates.

BiPPF fuses the two streams bidirectionally with a shared multiplicative
fusion signal; PPFN is a gated feed-forward network whose content branch is
parser-fused before gating; CPFPGate is the learnable scalar gate that
controls how much parser feature reaches a block.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidArgumentError


class BiPPF(nn.Module):
    """Bidirectional parser-prompted fusion. All convolutions are 1x1.

    x_hat = x_proj(x); m_hat = m_proj(m); f = fuse_proj([x_hat, m_hat])
    out = out_proj([f * x_hat + x_hat, f * m_hat + m_hat]) + x
    """

    def __init__(self, dim, m_channels=None, bias=False):
        super().__init__()
        m_channels = dim if m_channels is None else m_channels
        self.x_proj = nn.Conv2d(dim, dim, kernel_size=1, bias=bias)
        self.m_proj = nn.Conv2d(m_channels, dim, kernel_size=1, bias=bias)
        self.fuse_proj = nn.Conv2d(dim * 2, dim, kernel_size=1, bias=bias)
        self.out_proj = nn.Conv2d(dim * 2, dim, kernel_size=1, bias=bias)

    def forward(self, x, m):
        if x.shape[-2:] != m.shape[-2:]:
            raise InvalidArgumentError(
                f"spatial mismatch: {tuple(x.shape[-2:])} vs {tuple(m.shape[-2:])}"
            )
        x_hat = self.x_proj(x)
        m_hat = self.m_proj(m)
        fused = self.fuse_proj(torch.cat([x_hat, m_hat], dim=1))
        x_tilde = fused * x_hat + x_hat
        m_tilde = fused * m_hat + m_hat
        return self.out_proj(torch.cat([x_tilde, m_tilde], dim=1)) + x


class PPFN(nn.Module):
    """Parser-prompted feed-forward network (gated depth-wise conv FFN).

    The input expands to two parallel branches of width expansion*dim; the
    first is fused with parser features via BiPPF and then gated by the
    GELU of the second. GELU is the exact erf form.
    """

    def __init__(self, dim, m_channels=None, expansion=3, bias=False):
        super().__init__()
        m_channels = dim if m_channels is None else m_channels
        hidden = dim * expansion
        self.expand_point = nn.Conv2d(dim, hidden * 2, kernel_size=1, bias=bias)
        self.expand_depth = nn.Conv2d(hidden * 2, hidden * 2, kernel_size=3, padding=1,
                                      groups=hidden * 2, bias=bias)
        self.fusion = BiPPF(hidden, m_channels=m_channels, bias=bias)
        self.project = nn.Conv2d(hidden, dim, kernel_size=1, bias=bias)

    def forward(self, x, m, residual=None):
        # `residual` lets transformer blocks keep the skip on the
        # pre-normalization features; standalone use defaults to x itself.
        if residual is None:
            residual = x
        x1, x2 = self.expand_depth(self.expand_point(x)).chunk(2, dim=1)
        fused = self.fusion(x1, m)
        return self.project(fused * F.gelu(x2)) + residual


class CPFPGate(nn.Module):
    """Controllable parser feature propagation: a sigmoid-squashed scalar gate."""

    def __init__(self, init=0.0):
        super().__init__()
        self.gamma = nn.Parameter(torch.tensor(float(init)))

    def forward(self, m):
        return torch.sigmoid(self.gamma) * m

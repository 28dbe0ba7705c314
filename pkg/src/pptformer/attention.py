"""Channel-wise (transposed) attention and the two parser-prompted variants.

All attention here operates over channel x channel similarity matrices, so the
cost is linear in spatial size. Queries/keys/values are produced by 1x1
point-wise plus 3x3 depth-wise convolutions, reshaped to
(batch, heads, channels-per-head, height*width) token layout.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from .errors import InvalidArgumentError, NumericError
from .fusion import BiPPF


def channel_attention(q, k, v, temperature, normalize_qk=True):
    """Transposed attention over the channel axis.

    q, k, v: (..., C, N) with N the flattened spatial size. `temperature`
    divides the pre-softmax logits and must broadcast against the leading
    dims (scalar, or (heads, 1, 1) for multi-head input). Each attention
    row (indexed by query channel) is softmax-normalized over key channels.
    """
    if q.shape[-2] != k.shape[-2] or k.shape[-2] != v.shape[-2]:
        raise InvalidArgumentError(
            f"q/k/v channel counts differ: {q.shape[-2]}, {k.shape[-2]}, {v.shape[-2]}"
        )
    if q.shape[-1] != k.shape[-1] or k.shape[-1] != v.shape[-1]:
        raise InvalidArgumentError(
            f"q/k/v token counts differ: {q.shape[-1]}, {k.shape[-1]}, {v.shape[-1]}"
        )
    for name, t in (("q", q), ("k", k), ("v", v)):
        if not torch.isfinite(t).all():
            raise NumericError(f"non-finite values in {name}")

    if normalize_qk:
        q = F.normalize(q, dim=-1)
        k = F.normalize(k, dim=-1)
    attn = (q @ k.transpose(-2, -1)) / temperature
    attn = attn.softmax(dim=-1)
    return attn @ v


class ChannelAttention(nn.Module):
    """Plain multi-head channel self-attention block (qkv convs + projection)."""

    def __init__(self, dim, num_heads, bias=False, normalize_qk=True):
        super().__init__()
        if dim % num_heads != 0:
            raise InvalidArgumentError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        self.normalize_qk = normalize_qk
        self.temperature = nn.Parameter(torch.ones(num_heads, 1, 1))

        self.qkv_point = nn.Conv2d(dim, dim * 3, kernel_size=1, bias=bias)
        self.qkv_depth = nn.Conv2d(dim * 3, dim * 3, kernel_size=3, padding=1,
                                   groups=dim * 3, bias=bias)
        self.project_out = nn.Conv2d(dim, dim, kernel_size=1, bias=bias)

    def forward(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv_depth(self.qkv_point(x)).chunk(3, dim=1)

        q = rearrange(q, 'b (head c) h w -> b head c (h w)', head=self.num_heads)
        k = rearrange(k, 'b (head c) h w -> b head c (h w)', head=self.num_heads)
        v = rearrange(v, 'b (head c) h w -> b head c (h w)', head=self.num_heads)

        out = channel_attention(q, k, v, self.temperature, self.normalize_qk)
        out = rearrange(out, 'b head c (h w) -> b (head c) h w', h=h, w=w)
        return self.project_out(out)


def _check_spatial(x, m):
    if x.shape[-2:] != m.shape[-2:]:
        raise InvalidArgumentError(
            f"spatial mismatch: restoration {tuple(x.shape[-2:])} vs parser {tuple(m.shape[-2:])}"
        )


class IntraPPA(nn.Module):
    """Intra parser-prompted attention.

    Cross-attention that implicitly perceives the parser: keys/values are
    split out of both the parser and restoration features, merged pairwise by
    concatenation + 1x1 convolution, and attended against restoration queries.
    """

    def __init__(self, dim, num_heads, m_channels=None, bias=False, normalize_qk=True):
        super().__init__()
        if dim % num_heads != 0:
            raise InvalidArgumentError(f"dim {dim} not divisible by num_heads {num_heads}")
        m_channels = dim if m_channels is None else m_channels
        self.num_heads = num_heads
        self.normalize_qk = normalize_qk
        self.temperature = nn.Parameter(torch.ones(num_heads, 1, 1))

        # parser side: K_M, V_M
        self.parser_point = nn.Conv2d(m_channels, dim * 2, kernel_size=1, bias=bias)
        self.parser_depth = nn.Conv2d(dim * 2, dim * 2, kernel_size=3, padding=1,
                                      groups=dim * 2, bias=bias)
        # restoration side: Q, K_R, V_R
        self.qkv_point = nn.Conv2d(dim, dim * 3, kernel_size=1, bias=bias)
        self.qkv_depth = nn.Conv2d(dim * 3, dim * 3, kernel_size=3, padding=1,
                                   groups=dim * 3, bias=bias)
        # pairwise merges back to the restoration width
        self.key_merge = nn.Conv2d(dim * 2, dim, kernel_size=1, bias=bias)
        self.value_merge = nn.Conv2d(dim * 2, dim, kernel_size=1, bias=bias)
        self.project_out = nn.Conv2d(dim, dim, kernel_size=1, bias=bias)

    def forward(self, x, m):
        _check_spatial(x, m)
        b, c, h, w = x.shape

        k_m, v_m = self.parser_depth(self.parser_point(m)).chunk(2, dim=1)
        q, k_r, v_r = self.qkv_depth(self.qkv_point(x)).chunk(3, dim=1)

        k = self.key_merge(torch.cat([k_m, k_r], dim=1))
        v = self.value_merge(torch.cat([v_m, v_r], dim=1))

        q = rearrange(q, 'b (head c) h w -> b head c (h w)', head=self.num_heads)
        k = rearrange(k, 'b (head c) h w -> b head c (h w)', head=self.num_heads)
        v = rearrange(v, 'b (head c) h w -> b head c (h w)', head=self.num_heads)

        out = channel_attention(q, k, v, self.temperature, self.normalize_qk)
        out = rearrange(out, 'b head c (h w) -> b (head c) h w', h=h, w=w)
        return self.project_out(out)


class InterPPA(nn.Module):
    """Inter parser-prompted attention.

    Explicit perception: parser and restoration features are first fused by
    BiPPF, then plain channel self-attention runs over the fused features.
    """

    def __init__(self, dim, num_heads, m_channels=None, bias=False, normalize_qk=True):
        super().__init__()
        self.fusion = BiPPF(dim, m_channels=m_channels, bias=bias)
        self.attn = ChannelAttention(dim, num_heads, bias=bias, normalize_qk=normalize_qk)

    def forward(self, x, m):
        _check_spatial(x, m)
        return self.attn(self.fusion(x, m))

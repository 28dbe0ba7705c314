"""IRNet: the 4-level encoder-decoder restoration branch.

Each level runs one IN2PPT block (parallel intra/inter parser-prompted
attention branches) followed by a stack of PPTBs (inter attention + gated
feed-forward, both parser-gated). Resampling is pixel-unshuffle/shuffle with
1x1 channel adjustment; skips concatenate encoder features into the decoder
and reduce back with 1x1 convolutions; the output is a residual added to the
degraded input.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import ChannelAttention, IntraPPA, InterPPA
from .config import ModelConfig
from .errors import InvalidArgumentError
from .fusion import CPFPGate, PPFN


class ChannelLayerNorm(nn.Module):
    """Layer normalization across the channel axis at each spatial position."""

    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))

    def forward(self, x):
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(var + self.eps)
        return x * self.weight[:, None, None] + self.bias[:, None, None]


class Downsample(nn.Module):
    """(B, C, H, W) -> pixel-unshuffle -> (B, 4C, H/2, W/2) -> 1x1 -> (B, 2C, H/2, W/2)."""

    def __init__(self, dim, bias=False):
        super().__init__()
        self.reduce = nn.Conv2d(dim * 4, dim * 2, kernel_size=1, bias=bias)

    def forward(self, x):
        if x.shape[-1] % 2 != 0 or x.shape[-2] % 2 != 0:
            raise InvalidArgumentError(f"spatial dims must be even, got {tuple(x.shape[-2:])}")
        return self.reduce(F.pixel_unshuffle(x, 2))


class Upsample(nn.Module):
    """(B, C, H, W) -> pixel-shuffle -> (B, C/4, 2H, 2W) -> 1x1 -> (B, C/2, 2H, 2W)."""

    def __init__(self, dim, bias=False):
        super().__init__()
        if dim % 4 != 0:
            raise InvalidArgumentError(f"upsample needs dim divisible by 4, got {dim}")
        self.expand = nn.Conv2d(dim // 4, dim // 2, kernel_size=1, bias=bias)

    def forward(self, x):
        return self.expand(F.pixel_shuffle(x, 2))


def pad_to_multiple(image, multiple):
    """Reflect-pad H and W up to the next multiple; returns (padded, (H, W)).

    Reflection indices are computed explicitly so degenerate 1-pixel axes
    still pad (the single value repeats).
    """
    h, w = image.shape[-2:]
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph:
        idx = _reflect_indices(h, ph, image.device)
        image = image.index_select(-2, idx)
    if pw:
        idx = _reflect_indices(w, pw, image.device)
        image = image.index_select(-1, idx)
    return image, (h, w)


def _reflect_indices(size, pad, device):
    idx = torch.arange(size + pad, device=device)
    if size == 1:
        return torch.zeros(size + pad, dtype=torch.long, device=device)
    period = 2 * size - 2
    idx = idx % period
    return torch.where(idx < size, idx, period - idx)


def crop_to(image, original_hw):
    h, w = original_hw
    return image[..., :h, :w]


class IN2PPTBlock(nn.Module):
    """Intra+inter parser-prompted transformer block.

    The attention branches run in parallel on the normalized input, get
    concatenated and fused by one 1x1 convolution, and feed a PPFN. With
    use_parser=False the branches degrade to plain channel self-attention
    and the FFN drops its fusion path.
    """

    def __init__(self, dim, num_heads, m_channels=None, expansion=3, bias=False,
                 normalize_qk=True, branches=("intra", "inter"), use_parser=True):
        super().__init__()
        if len(branches) == 0:
            raise InvalidArgumentError("IN2PPT needs at least one attention branch")
        self.use_parser = use_parser
        self.norm_attn = ChannelLayerNorm(dim)
        self.branches = nn.ModuleList()
        for kind in branches:
            if not use_parser:
                self.branches.append(ChannelAttention(dim, num_heads, bias, normalize_qk))
            elif kind == "intra":
                self.branches.append(IntraPPA(dim, num_heads, m_channels, bias, normalize_qk))
            elif kind == "inter":
                self.branches.append(InterPPA(dim, num_heads, m_channels, bias, normalize_qk))
            else:
                raise InvalidArgumentError(f"unknown attention branch {kind!r}")
        self.branch_merge = nn.Conv2d(dim * len(branches), dim, kernel_size=1, bias=bias)
        self.norm_ffn = ChannelLayerNorm(dim)
        self.ffn = PPFN(dim, m_channels=m_channels, expansion=expansion, bias=bias) \
            if use_parser else GatedFFN(dim, expansion=expansion, bias=bias)

    def forward(self, x, m=None):
        z = self.norm_attn(x)
        if self.use_parser:
            outs = [branch(z, m) for branch in self.branches]
        else:
            outs = [branch(z) for branch in self.branches]
        x = x + self.branch_merge(torch.cat(outs, dim=1))
        if self.use_parser:
            return self.ffn(self.norm_ffn(x), m, residual=x)
        return self.ffn(self.norm_ffn(x), residual=x)


class PPTB(nn.Module):
    """Parser-prompted transformer block: inter attention + PPFN, both CPFP-gated."""

    def __init__(self, dim, num_heads, m_channels=None, expansion=3, bias=False,
                 normalize_qk=True, use_parser=True):
        super().__init__()
        self.use_parser = use_parser
        self.norm_attn = ChannelLayerNorm(dim)
        self.norm_ffn = ChannelLayerNorm(dim)
        if use_parser:
            self.attn = InterPPA(dim, num_heads, m_channels, bias, normalize_qk)
            self.gate_attn = CPFPGate()
            self.ffn = PPFN(dim, m_channels=m_channels, expansion=expansion, bias=bias)
            self.gate_ffn = CPFPGate()
        else:
            self.attn = ChannelAttention(dim, num_heads, bias, normalize_qk)
            self.ffn = GatedFFN(dim, expansion=expansion, bias=bias)

    def forward(self, x, m=None):
        if self.use_parser:
            x = x + self.attn(self.norm_attn(x), self.gate_attn(m))
            return self.ffn(self.norm_ffn(x), self.gate_ffn(m), residual=x)
        x = x + self.attn(self.norm_attn(x))
        return self.ffn(self.norm_ffn(x), residual=x)


class GatedFFN(nn.Module):
    """Parser-free gated feed-forward (ablation path of PPFN)."""

    def __init__(self, dim, expansion=3, bias=False):
        super().__init__()
        hidden = dim * expansion
        self.expand_point = nn.Conv2d(dim, hidden * 2, kernel_size=1, bias=bias)
        self.expand_depth = nn.Conv2d(hidden * 2, hidden * 2, kernel_size=3, padding=1,
                                      groups=hidden * 2, bias=bias)
        self.project = nn.Conv2d(hidden, dim, kernel_size=1, bias=bias)

    def forward(self, x, residual=None):
        if residual is None:
            residual = x
        x1, x2 = self.expand_depth(self.expand_point(x)).chunk(2, dim=1)
        return self.project(x1 * F.gelu(x2)) + residual


class Level(nn.Module):
    """One encoder or decoder level: an IN2PPT block plus a PPTB stack."""

    def __init__(self, dim, num_heads, n_pptb, m_channels=None, expansion=3, bias=False,
                 normalize_qk=True, branches=("intra", "inter"), use_parser=True):
        super().__init__()
        self.in2ppt = IN2PPTBlock(dim, num_heads, m_channels, expansion, bias,
                                  normalize_qk, branches, use_parser)
        self.pptbs = nn.ModuleList([
            PPTB(dim, num_heads, m_channels, expansion, bias, normalize_qk, use_parser)
            for _ in range(n_pptb)
        ])

    def forward(self, x, m=None):
        x = self.in2ppt(x, m)
        for block in self.pptbs:
            x = block(x, m)
        return x


class IRNet(nn.Module):
    """Restoration branch: features -> encoder -> decoder -> residual image."""

    def __init__(self, config: ModelConfig, in_channels=3, bias=False,
                 branches=("intra", "inter"), use_parser=True):
        super().__init__()
        self.config = config
        self.use_parser = use_parser
        L = config.levels
        widths = [config.level_channels(l) for l in range(L)]
        heads = config.heads_per_level
        blocks = config.blocks_per_level
        kw = dict(expansion=config.ppfn_expansion, bias=bias,
                  normalize_qk=config.normalize_qk, use_parser=use_parser)

        self.feat_extract = nn.Conv2d(in_channels, widths[0], kernel_size=3, padding=1, bias=bias)

        self.enc_levels = nn.ModuleList([
            Level(widths[l], heads[l], blocks[l], m_channels=widths[l],
                  branches=branches, **kw)
            for l in range(L)
        ])
        self.downs = nn.ModuleList([Downsample(widths[l], bias) for l in range(L - 1)])

        self.ups = nn.ModuleList([Upsample(widths[l + 1], bias) for l in range(L - 1)])
        self.skip_reduce = nn.ModuleList([
            nn.Conv2d(widths[l] * 2, widths[l], kernel_size=1, bias=bias)
            for l in range(L - 1)
        ])
        self.dec_levels = nn.ModuleList([
            Level(widths[l], heads[l], blocks[l], m_channels=widths[l],
                  branches=branches, **kw)
            for l in range(L - 1)
        ])

        self.refinement = nn.ModuleList([
            PPTB(widths[0], heads[0], m_channels=widths[0], expansion=config.ppfn_expansion,
                 bias=bias, normalize_qk=config.normalize_qk, use_parser=use_parser)
            for _ in range(config.refinement_blocks)
        ])
        self.reconstruct = nn.Conv2d(widths[0], in_channels, kernel_size=3, padding=1, bias=bias)

    def extract_features(self, image):
        mult = self.config.spatial_multiple
        h, w = image.shape[-2:]
        if h % mult != 0 or w % mult != 0:
            raise InvalidArgumentError(
                f"spatial dims {(h, w)} not divisible by {mult}; pad the input first"
            )
        return self.feat_extract(image)

    def _check_pyramid(self, image, pyramid):
        if not self.use_parser:
            return [None] * self.config.levels
        if pyramid is None or len(pyramid) != self.config.levels:
            raise InvalidArgumentError(
                f"expected a {self.config.levels}-level parser pyramid, got "
                f"{'none' if pyramid is None else len(pyramid)}"
            )
        h, w = image.shape[-2:]
        for l, feat in enumerate(pyramid):
            want = (h // 2 ** l, w // 2 ** l)
            want_c = self.config.level_channels(l)
            if feat.shape[-2:] != want or feat.shape[-3] != want_c:
                raise InvalidArgumentError(
                    f"pyramid level {l}: expected {(want_c, *want)}, got {tuple(feat.shape[-3:])}"
                )
        return pyramid

    def forward(self, image, pyramid=None, clamp=None):
        """Restore `image` (B, 3, H, W in [0, 1]) guided by the parser pyramid.

        clamp=None clamps to [0, 1] in eval mode and leaves training output
        free so losses see the unclamped residual sum.
        """
        pyramid = self._check_pyramid(image, pyramid)
        x = self.extract_features(image)

        skips = []
        for l, level in enumerate(self.enc_levels):
            x = level(x, pyramid[l])
            if l < len(self.downs):
                skips.append(x)
                x = self.downs[l](x)

        for l in reversed(range(len(self.dec_levels))):
            x = self.ups[l](x)
            x = self.skip_reduce[l](torch.cat([x, skips[l]], dim=1))
            x = self.dec_levels[l](x, pyramid[l])

        for block in self.refinement:
            x = block(x, pyramid[0])

        out = image + self.reconstruct(x)
        if clamp is None:
            clamp = not self.training
        return out.clamp(0.0, 1.0) if clamp else out

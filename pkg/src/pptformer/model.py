"""The two-branch restoration pipeline: IRNet guided by PPFGNet features."""

import numpy as np
import torch
import torch.nn as nn

from .backbone import IRNet, crop_to, pad_to_multiple
from .config import ModelConfig
from .errors import InvalidArgumentError
from .parsers import PPFGNet

# Structural edits for the ablation variants that change the graph itself.
# sft_fusion builds like "full" and the training module swaps the fusion
# blocks afterwards; degraded_as_parser only changes what feeds the parser
# branch.
_VARIANT_BRANCHES = {
    "full": ("intra", "inter"),
    "degraded_as_parser": ("intra", "inter"),
    "sft_fusion": ("intra", "inter"),
    "no_parser": ("intra", "inter"),
    "no_intra": ("inter",),
    "no_inter": ("intra",),
    "both_intra": ("intra", "intra"),
    "both_inter": ("inter", "inter"),
}


class PPTformer(nn.Module):
    """IRNet plus the parser-feature branch feeding it at every level."""

    def __init__(self, config: ModelConfig, branches=("intra", "inter"), use_parser=True):
        super().__init__()
        self.config = config
        self.use_parser = use_parser
        self.irnet = IRNet(config, branches=branches, use_parser=use_parser)
        self.ppfgnet = PPFGNet(config) if use_parser else None

    def forward(self, image, parser=None, clamp=None):
        if self.use_parser:
            if parser is None:
                raise InvalidArgumentError("model was built with a parser branch; parser is required")
            pyramid = self.ppfgnet(parser)
        else:
            pyramid = None
        return self.irnet(image, pyramid, clamp=clamp)


def build_model(config: ModelConfig, variant="full"):
    if variant not in _VARIANT_BRANCHES:
        raise InvalidArgumentError(f"unknown ablation variant {variant!r}")
    return PPTformer(config, branches=_VARIANT_BRANCHES[variant],
                     use_parser=variant != "no_parser")


def to_tensor(image):
    """(H, W, 3) float array in [0, 1] -> (1, 3, H, W) tensor."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidArgumentError(f"expected (H, W, 3) image, got {arr.shape}")
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)


def to_image(tensor):
    """(1, 3, H, W) tensor -> (H, W, 3) float32 array."""
    return tensor.squeeze(0).permute(1, 2, 0).detach().cpu().numpy().astype(np.float32)


@torch.no_grad()
def restore(model, image, parser=None):
    """Restore one (H, W, 3) image; pads to the model's spatial multiple.

    The parser map (same layout) is required when the model uses the parser
    branch; it is padded identically.
    """
    model.eval()
    mult = model.config.spatial_multiple
    x, orig_hw = pad_to_multiple(to_tensor(image), mult)
    p = None
    if model.use_parser:
        if parser is None:
            raise InvalidArgumentError("parser map required for this model")
        if parser.shape[:2] != image.shape[:2]:
            raise InvalidArgumentError(
                f"parser {parser.shape[:2]} does not match image {image.shape[:2]}"
            )
        p, _ = pad_to_multiple(to_tensor(parser), mult)
    out = model(x, p, clamp=True)
    return to_image(crop_to(out, orig_hw))

"""Parameter and FLOP accounting for the ablation report.

FLOPs are counted for one 3-channel square input, multiply-add = 2 ops,
covering convolutions and attention matmuls; normalizations, softmax, and
activations are ignored (sub-percent at these widths).
"""

import torch
import torch.nn as nn

from .attention import ChannelAttention, IntraPPA


def count_parameters(model):
    return sum(p.numel() for p in model.parameters())


def _conv_flops(module, output):
    kh, kw = module.kernel_size
    per_position = module.in_channels // module.groups * kh * kw
    flops = 2 * output.numel() * per_position
    if module.bias is not None:
        flops += output.numel()
    return flops


def _attention_flops(module, x):
    dim = module.project_out.out_channels
    head_dim = dim // module.num_heads
    tokens = x.shape[-2] * x.shape[-1]
    # (c x n) @ (n x c) and (c x c) @ (c x n), per head, summed over heads.
    return 4 * dim * head_dim * tokens


@torch.no_grad()
def estimate_flops(model, size=64):
    """Forward-pass FLOPs for one (3, size, size) input (and parser map)."""
    total = [0]
    hooks = []

    def conv_hook(module, inputs, output):
        total[0] += _conv_flops(module, output)

    def attn_hook(module, inputs, output):
        total[0] += _attention_flops(module, inputs[0])

    for module in model.modules():
        if isinstance(module, nn.Conv2d):
            hooks.append(module.register_forward_hook(conv_hook))
        elif isinstance(module, (ChannelAttention, IntraPPA)):
            hooks.append(module.register_forward_hook(attn_hook))

    was_training = model.training
    model.eval()
    try:
        image = torch.zeros(1, 3, size, size)
        parser = torch.zeros(1, 3, size, size) if model.use_parser else None
        model(image, parser)
    finally:
        for h in hooks:
            h.remove()
        model.train(was_training)
    return int(total[0])

"""Dynamic-gated residual conv blocks and the encoder-decoder built from them."""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import SpecError


@dataclass(frozen=True)
class StackSpec:
    """Channel widths and block counts describing one encoder-decoder stack."""

    in_channels: int
    out_channels: int
    widths: tuple = (32, 64)
    blocks_per_scale: int = 2
    gate_reduction: int = 8

    def validate(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise SpecError("in/out channel counts must be positive")
        if not self.widths or any(w < 1 for w in self.widths):
            raise SpecError(f"inconsistent widths {self.widths}")
        if self.blocks_per_scale < 1:
            raise SpecError("need at least one block per scale")
        if self.gate_reduction < 1:
            raise SpecError("gate reduction must be positive")


class DynamicResidualBlock(nn.Module):
    """Two 3x3 convs with a globally pooled channel gate on the residual branch.

    The gate squeezes the branch features to per-channel statistics, passes
    them through a two-layer bottleneck, and emits per-channel scales in
    (0, 2) applied to the residual before the skip add. Setting
    `force_identity_gate` pins the scale to 1 (plain residual block);
    zeroing `conv2` makes the whole block the identity.
    """

    def __init__(self, channels: int, gate_reduction: int = 8):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        hidden = max(channels // gate_reduction, 1)
        self.gate_squeeze = nn.Conv2d(channels, hidden, 1)
        self.gate_expand = nn.Conv2d(hidden, channels, 1)
        self.force_identity_gate = False

    def forward(self, x):
        residual = self.conv2(F.relu(self.conv1(x)))
        if self.force_identity_gate:
            return x + residual
        pooled = residual.mean(dim=(-2, -1), keepdim=True)
        scale = 2.0 * torch.sigmoid(self.gate_expand(F.relu(self.gate_squeeze(pooled))))
        return x + scale * residual


class DmrbStack(nn.Module):
    """U-shaped stack of dynamic residual blocks with skip connections.

    One downsampling per extra width, so the spatial reduction factor is
    2 ** (len(widths) - 1); inputs of other sizes are replicate-padded and
    cropped back.
    """

    def __init__(self, spec: StackSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        widths = spec.widths
        scales = len(widths)
        self.factor = 2 ** (scales - 1)

        def blocks(width):
            return nn.Sequential(
                *[
                    DynamicResidualBlock(width, spec.gate_reduction)
                    for _ in range(spec.blocks_per_scale)
                ]
            )

        self.stem = nn.Conv2d(spec.in_channels, widths[0], 3, padding=1)
        self.encoders = nn.ModuleList(blocks(w) for w in widths)
        self.downs = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1)
            for i in range(scales - 1)
        )
        self.ups = nn.ModuleList(
            nn.ConvTranspose2d(widths[i + 1], widths[i], 2, stride=2)
            for i in range(scales - 1)
        )
        self.fusers = nn.ModuleList(
            nn.Conv2d(2 * widths[i], widths[i], 3, padding=1)
            for i in range(scales - 1)
        )
        self.decoders = nn.ModuleList(blocks(widths[i]) for i in range(scales - 1))
        self.head = nn.Conv2d(widths[0], spec.out_channels, 3, padding=1)

    def forward(self, x):
        h, w = x.shape[-2:]
        pad_h = (-h) % self.factor
        pad_w = (-w) % self.factor
        if pad_h or pad_w:
            x = F.pad(x, (0, pad_w, 0, pad_h), mode="replicate")

        feat = self.stem(x)
        skips = []
        for i in range(len(self.downs)):
            feat = self.encoders[i](feat)
            skips.append(feat)
            feat = F.relu(self.downs[i](feat))
        feat = self.encoders[-1](feat)
        for i in reversed(range(len(self.downs))):
            feat = self.ups[i](feat)
            feat = F.relu(self.fusers[i](torch.cat([feat, skips[i]], dim=1)))
            feat = self.decoders[i](feat)
        out = self.head(feat)
        return out[..., :h, :w]

    def zero_head_(self):
        """Zero the output conv so the stack emits exactly 0 at start."""
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        return self


def build_dmrb_stack(spec: StackSpec) -> DmrbStack:
    """Materialize the encoder-decoder described by `spec`."""
    return DmrbStack(spec)


def parameter_manifest(module: nn.Module) -> dict:
    """Ordered parameter-name -> shape map used to pin checkpoint layouts."""
    return {name: tuple(p.shape) for name, p in module.named_parameters()}


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())

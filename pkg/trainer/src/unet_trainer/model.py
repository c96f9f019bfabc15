"""Encoder-decoder image-to-image regression network.

Seven downsampling stages take a 2x128x128 displacement pair to a 1x1
latent of 512 channels; seven upsampling stages with skip connections
return a 1x128x128 modulus image.  Channel widths double from
``base_width`` and are capped at the latent width.  The output is linear
(no activation): targets are positive but unbounded under the
displacement-magnitude scaling.
"""

from __future__ import annotations

import hashlib

import torch
import torch.nn as nn

N_STAGES = 7
LATENT_WIDTH = 512


def stage_widths(base_width: int):
    return [min(base_width * 2 ** i, LATENT_WIDTH) for i in range(N_STAGES)]


class _Down(nn.Module):
    """Strided conv halves the resolution; a second conv refines in place."""

    def __init__(self, c_in, c_out):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(c_in, c_out, kernel_size=4, stride=2, padding=1),
            nn.BatchNorm2d(c_out),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(c_out, c_out, kernel_size=3, padding=1),
            nn.BatchNorm2d(c_out),
            nn.LeakyReLU(0.2, inplace=True),
        )

    def forward(self, x):
        return self.body(x)


class _Up(nn.Module):
    """Transposed conv doubles the resolution; a second conv refines."""

    def __init__(self, c_in, c_out):
        super().__init__()
        self.body = nn.Sequential(
            nn.ConvTranspose2d(c_in, c_out, kernel_size=4, stride=2, padding=1),
            nn.BatchNorm2d(c_out),
            nn.ReLU(inplace=True),
            nn.Conv2d(c_out, c_out, kernel_size=3, padding=1),
            nn.BatchNorm2d(c_out),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.body(x)


class UNet(nn.Module):
    """2-channel 128x128 input to 1-channel 128x128 output."""

    def __init__(self, base_width: int = 16):
        super().__init__()
        widths = stage_widths(base_width)
        self.base_width = base_width

        downs, c = [], 2
        for w in widths:
            downs.append(_Down(c, w))
            c = w
        self.downs = nn.ModuleList(downs)

        ups, c = [], widths[-1]
        for skip_w in reversed(widths[:-1]):
            ups.append(_Up(c, skip_w))
            c = 2 * skip_w          # concatenated with the encoder skip
        self.ups = nn.ModuleList(ups)
        self.head = nn.ConvTranspose2d(c, 1, kernel_size=4, stride=2, padding=1)

    def forward(self, x):
        skips = []
        for down in self.downs:
            x = down(x)
            skips.append(x)
        skips.pop()                  # the latent is not a skip
        for up in self.ups:
            x = up(x)
            x = torch.cat([x, skips.pop()], dim=1)
        return self.head(x)


def build_model(base_width: int = 16) -> UNet:
    model = UNet(base_width)
    n_params = sum(p.numel() for p in model.parameters())
    model.n_parameters = n_params
    return model


def architecture_hash(model: UNet) -> str:
    """Fingerprint of the layer layout, for checkpoint compatibility checks."""
    desc = f"{model.base_width}|" + "|".join(
        f"{name}:{tuple(p.shape)}" for name, p in model.named_parameters())
    return hashlib.sha256(desc.encode()).hexdigest()[:16]


def nmse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of sum((pred-target)^2) / sum(target^2)."""
    diff = (pred - target).flatten(1)
    denom = target.flatten(1).pow(2).sum(dim=1).clamp_min(1e-30)
    return (diff.pow(2).sum(dim=1) / denom).mean()

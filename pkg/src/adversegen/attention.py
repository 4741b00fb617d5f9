"""Dual attention: position attention, channel attention, and their fusion.

The position branch gates every channel with a single spatial map built from
a pyramid of pooled views; the channel branch reweights channels with a
row-normalized channel-affinity matrix. Both preserve the input shape, so
they can be dropped into a generator trunk as additive refinements.
"""

from fractions import Fraction

import torch
import torch.nn as nn
import torch.nn.functional as F

DEFAULT_POOL_SCALES = (Fraction(1, 1), Fraction(1, 2), Fraction(1, 4), Fraction(1, 16))


def _pool_divisors(pool_scales) -> list[int]:
    """Validate pool scales and return their integer inverses (1/s)."""
    divisors = []
    for s in pool_scales:
        frac = Fraction(s).limit_denominator(1024)
        if frac.numerator != 1 or frac.denominator < 1:
            raise ValueError(f"pool scale must be 1/k for integer k >= 1, got {s}")
        divisors.append(frac.denominator)
    if not divisors:
        raise ValueError("pool_scales must be non-empty")
    return divisors


def _check_feature(x: torch.Tensor, where: str) -> torch.Tensor:
    """Accept [C,H,W] or [B,C,H,W]; return a batched view and finiteness check."""
    if x.dim() == 3:
        x = x.unsqueeze(0)
    if x.dim() != 4:
        raise ValueError(f"{where}: expected a [C,H,W] or [B,C,H,W] tensor, got shape {tuple(x.shape)}")
    if not torch.isfinite(x).all():
        raise ValueError(f"{where}: input contains non-finite entries")
    return x


class PositionAttention(nn.Module):
    """Spatial gate from a pooling pyramid.

    Each pyramid branch average-pools the feature to 1/k resolution, projects
    it to one channel, and bilinearly upsamples back. The concatenated
    branches collapse through a final 1x1 projection and a sigmoid into a
    single attention map in (0,1), which multiplies every input channel.
    """

    def __init__(self, channels: int, pool_scales=DEFAULT_POOL_SCALES):
        super().__init__()
        self.channels = channels
        self.pool_divisors = _pool_divisors(pool_scales)
        # one independent 1-channel projection per pyramid branch
        self.branch_proj = nn.ModuleList(
            [nn.Conv2d(channels, 1, kernel_size=1) for _ in self.pool_divisors]
        )
        self.merge_proj = nn.Conv2d(len(self.pool_divisors), 1, kernel_size=1)

    def attention_map(self, x: torch.Tensor) -> torch.Tensor:
        """The [B,1,H,W] sigmoid gate, entries in (0,1)."""
        x = _check_feature(x, "PositionAttention")
        _, c, h, w = x.shape
        if c != self.channels:
            raise ValueError(f"PositionAttention built for {self.channels} channels, got {c}")
        largest = max(self.pool_divisors)
        if min(h, w) < largest:
            raise ValueError(
                f"spatial dims ({h}x{w}) too small: the 1/{largest} pooling branch "
                f"would be empty; need min(H,W) >= {largest}"
            )
        branches = []
        for div, proj in zip(self.pool_divisors, self.branch_proj):
            pooled = F.adaptive_avg_pool2d(x, (h // div, w // div))
            pooled = proj(pooled)
            if pooled.shape[-2:] != (h, w):
                pooled = F.interpolate(pooled, size=(h, w), mode="bilinear", align_corners=False)
            branches.append(pooled)
        merged = self.merge_proj(torch.cat(branches, dim=1))
        return torch.sigmoid(merged)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 3
        batched = _check_feature(x, "PositionAttention")
        out = self.attention_map(batched) * batched
        return out.squeeze(0) if squeeze else out


class ChannelAttention(nn.Module):
    """Channel reweighting by a row-softmax channel-affinity matrix.

    Parameter-free: the input reshaped to [C, H*W] plays all three roles in
    the affinity product. The affinity row-softmax makes each output channel
    a convex mixture of input channels, added back onto the input.
    """

    def attention_matrix(self, x: torch.Tensor) -> torch.Tensor:
        """Row-stochastic [B,C,C] affinity (rows sum to 1, entries >= 0)."""
        x = _check_feature(x, "ChannelAttention")
        b, c, h, w = x.shape
        flat = x.reshape(b, c, h * w)
        affinity = torch.bmm(flat, flat.transpose(1, 2))
        # subtract the row max before exponentiation to avoid overflow
        affinity = affinity - affinity.max(dim=2, keepdim=True).values
        return torch.softmax(affinity, dim=2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 3
        batched = _check_feature(x, "ChannelAttention")
        b, c, h, w = batched.shape
        flat = batched.reshape(b, c, h * w)
        attn = self.attention_matrix(batched)
        mixed = torch.bmm(attn, flat) + flat
        out = mixed.reshape(b, c, h, w)
        return out.squeeze(0) if squeeze else out


class DualAttention(nn.Module):
    """Two-branch fusion: 1x1-projected position and channel branches, summed.

    Either branch can be disabled for ablations. The caller adds the fused
    output onto its trunk feature.
    """

    def __init__(self, channels: int, use_pam: bool = True, use_cam: bool = True,
                 pool_scales=DEFAULT_POOL_SCALES):
        super().__init__()
        if not (use_pam or use_cam):
            raise ValueError("DualAttention needs at least one branch enabled")
        self.pam = PositionAttention(channels, pool_scales) if use_pam else None
        self.cam = ChannelAttention() if use_cam else None
        self.pam_proj = nn.Conv2d(channels, channels, kernel_size=1) if use_pam else None
        self.cam_proj = nn.Conv2d(channels, channels, kernel_size=1) if use_cam else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 3
        batched = _check_feature(x, "DualAttention")
        out = torch.zeros_like(batched)
        if self.pam is not None:
            out = out + self.pam_proj(self.pam(batched))
        if self.cam is not None:
            out = out + self.cam_proj(self.cam(batched))
        return out.squeeze(0) if squeeze else out

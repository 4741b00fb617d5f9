"""Translation generators: a coarse low-resolution generator embedded into a
full-resolution trunk, with optional dual attention at the fusion point.

The forward (normal-to-adverse) generator carries both the coarse branch and
dual attention; the backward generator is deliberately weaker: attention
only, no coarse branch. `build_pair` enforces that asymmetry.
"""

import math
from dataclasses import dataclass, field, asdict
from fractions import Fraction

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import DualAttention, DEFAULT_POOL_SCALES


@dataclass
class GeneratorConfig:
    base_channels: int = 64
    num_residual_blocks_g1: int = 6
    num_residual_blocks_g2: int = 9
    downsample_scale: Fraction = Fraction(1, 4)
    use_multiscale: bool = True
    use_pam: bool = True
    use_cam: bool = True
    image_channels: int = 3
    pool_scales: tuple = DEFAULT_POOL_SCALES

    def __post_init__(self):
        self.downsample_scale = Fraction(self.downsample_scale).limit_denominator(64)
        s = self.downsample_scale
        if not (0 < s <= 1):
            raise ValueError(f"downsample_scale must be in (0, 1], got {s}")
        if s.numerator != 1 or (s.denominator & (s.denominator - 1)) != 0:
            raise ValueError(f"downsample_scale must be 1/2^k, got {s}")
        if self.num_residual_blocks_g1 < 1 or self.num_residual_blocks_g2 < 1:
            raise ValueError("residual block counts must be >= 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")

    @property
    def coarse_depth(self) -> int:
        """Number of stride-2 stages in the coarse branch: log2(1/scale)."""
        return int(math.log2(self.downsample_scale.denominator))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["downsample_scale"] = str(self.downsample_scale)
        d["pool_scales"] = [str(Fraction(s)) for s in self.pool_scales]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        d["downsample_scale"] = Fraction(d["downsample_scale"])
        d["pool_scales"] = tuple(Fraction(s) for s in d.get("pool_scales", DEFAULT_POOL_SCALES))
        return cls(**d)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)

    def init_identity(self):
        """Zero the residual branch so the block is an exact identity."""
        last_conv = self.block[5]
        nn.init.zeros_(last_conv.weight)
        nn.init.zeros_(last_conv.bias)


def _stem(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.ReflectionPad2d(3),
        nn.Conv2d(in_ch, out_ch, 7),
        nn.InstanceNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


def _down(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1),
        nn.InstanceNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


def _up(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.ConvTranspose2d(in_ch, out_ch, 3, stride=2, padding=1, output_padding=1),
        nn.InstanceNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


def _require_divisible(h: int, w: int, multiple: int, who: str):
    if h % multiple or w % multiple:
        raise ValueError(
            f"{who}: spatial dims {h}x{w} must be multiples of {multiple}"
        )


class CoarseGenerator(nn.Module):
    """Low-resolution branch: resize by `scale`, then a symmetric
    downsample / residual / deconvolution stack.

    The number of stride-2 stages is log2(1/scale) on each side, so the
    returned tap feature sits at the resized resolution with base_channels
    channels; at scale 1/1 the stack is just stem + residual blocks.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        b = cfg.base_channels
        depth = cfg.coarse_depth
        self.stem = _stem(cfg.image_channels, b)
        downs, ch = [], b
        for _ in range(depth):
            downs.append(_down(ch, ch * 2))
            ch *= 2
        self.downs = nn.Sequential(*downs)
        self.blocks = nn.Sequential(*[ResidualBlock(ch) for _ in range(cfg.num_residual_blocks_g1)])
        ups = []
        for _ in range(depth):
            ups.append(_up(ch, ch // 2))
            ch //= 2
        self.ups = nn.Sequential(*ups)
        self.tap_channels = ch  # == base_channels

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        """Post-deconvolution tap feature at (base_channels, H*s, W*s)."""
        squeeze = image.dim() == 3
        if squeeze:
            image = image.unsqueeze(0)
        _, _, h, w = image.shape
        s = self.cfg.downsample_scale
        inv = s.denominator
        stack = 2 ** self.cfg.coarse_depth
        _require_divisible(h, w, inv * stack, "coarse generator")
        if inv > 1:
            image = F.interpolate(image, size=(h // inv, w // inv),
                                  mode="bilinear", align_corners=False)
        out = self.ups(self.blocks(self.downs(self.stem(image))))
        return out.squeeze(0) if squeeze else out


class TranslationGenerator(nn.Module):
    """Full-resolution trunk with optional coarse-branch fusion and dual
    attention after the second downsampling convolution.

    Output is tanh-bounded to [-1, 1] and keeps the input geometry.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        b = cfg.base_channels
        trunk_ch = 4 * b
        self.stem = _stem(cfg.image_channels, b)
        self.down1 = _down(b, 2 * b)
        self.down2 = _down(2 * b, trunk_ch)

        if cfg.use_multiscale:
            self.coarse = CoarseGenerator(cfg)
            self.fusion_proj = nn.Conv2d(self.coarse.tap_channels, trunk_ch, 1)
        else:
            self.coarse = None
            self.fusion_proj = None

        if cfg.use_pam or cfg.use_cam:
            self.attention = DualAttention(trunk_ch, use_pam=cfg.use_pam,
                                           use_cam=cfg.use_cam,
                                           pool_scales=cfg.pool_scales)
        else:
            self.attention = None

        self.blocks = nn.Sequential(*[ResidualBlock(trunk_ch) for _ in range(cfg.num_residual_blocks_g2)])
        self.up1 = _up(trunk_ch, 2 * b)
        self.up2 = _up(2 * b, b)
        self.out = nn.Sequential(
            nn.ReflectionPad2d(3),
            nn.Conv2d(b, cfg.image_channels, 7),
            nn.Tanh(),
        )

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        squeeze = image.dim() == 3
        if squeeze:
            image = image.unsqueeze(0)
        if not torch.isfinite(image).all():
            raise ValueError("generator input contains non-finite entries")
        _, _, h, w = image.shape
        _require_divisible(h, w, 4, "translation generator")
        feat = self.down2(self.down1(self.stem(image)))
        if self.coarse is not None:
            tap = self.coarse(image)
            if tap.shape[-2:] != feat.shape[-2:]:
                tap = F.interpolate(tap, size=feat.shape[-2:],
                                    mode="bilinear", align_corners=False)
            feat = feat + self.fusion_proj(tap)
        if self.attention is not None:
            feat = feat + self.attention(feat)
        out = self.out(self.up2(self.up1(self.blocks(feat))))
        return out.squeeze(0) if squeeze else out

    @property
    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


@dataclass
class GeneratorPair:
    """Asymmetric pair: the normal-to-adverse direction carries the coarse
    branch; the adverse-to-normal direction never does."""
    normal_to_adverse: TranslationGenerator
    adverse_to_normal: TranslationGenerator
    forward_config: GeneratorConfig = field(repr=False, default=None)
    backward_config: GeneratorConfig = field(repr=False, default=None)

    @property
    def parameter_counts(self) -> dict:
        return {
            "normal_to_adverse": self.normal_to_adverse.n_parameters,
            "adverse_to_normal": self.adverse_to_normal.n_parameters,
        }


def build_pair(cfg_forward: GeneratorConfig, cfg_backward: GeneratorConfig) -> GeneratorPair:
    if cfg_backward.use_multiscale:
        raise ValueError(
            "the adverse-to-normal generator is single-scale: "
            "cfg_backward.use_multiscale must be False"
        )
    return GeneratorPair(
        normal_to_adverse=TranslationGenerator(cfg_forward),
        adverse_to_normal=TranslationGenerator(cfg_backward),
        forward_config=cfg_forward,
        backward_config=cfg_backward,
    )


def init_weights_normal(module: nn.Module, std: float = 0.02):
    """Zero-mean normal init for all conv weights, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)

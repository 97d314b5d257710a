"""Architecture hyperparameters and the shape algebra that validates them.

A config is checked completely at construction: any setup that would
produce a fractional feature size, a non-integral generated-parameter
channel count, or a head count that does not divide the channels is
rejected here, never at forward time.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

HYPERNET_MODES = ("stepwise", "direct", "off")
LOSS_KINDS = ("l1", "l2", "l1+l2", "smooth_l1")

# Target network depth: four halving layers plus the scalar head.
TARGET_LAYERS = 5


class ConfigError(ValueError):
    """The hyperparameters violate a structural invariant."""


@dataclass(frozen=True)
class FthnetConfig:
    depths: tuple[int, int, int, int] = (2, 2, 6, 2)
    embed_channels: int = 64
    window_size: int = 12
    shift: bool = True
    heads_per_stage: tuple[int, int, int, int] = (2, 4, 8, 16)
    mlp_ratio: float = 4.0
    target_width: int = 576
    dpb_out_len: int = 144
    dpb_pool: int = 12
    hypernet_mode: str = "stepwise"
    loss_kind: str = "smooth_l1"
    input_size: int = 384
    drop_rate: float = 0.0
    # Reserved: relative position bias inside window attention (unused).
    rel_pos_bias: bool = False

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        object.__setattr__(self, "heads_per_stage", tuple(int(h) for h in self.heads_per_stage))
        self.validate()

    # -- derived shapes -------------------------------------------------

    @property
    def stage_sizes(self) -> tuple[int, ...]:
        """Spatial side of each of the four stages."""
        s0 = self.input_size // 4
        return tuple(s0 // (2 ** i) for i in range(4))

    @property
    def stage_channels(self) -> tuple[int, ...]:
        return tuple(self.embed_channels * (2 ** i) for i in range(4))

    @property
    def map_size(self) -> int:
        """Side of the final feature map, the hypernetwork's working grid."""
        return self.input_size // 32

    @property
    def target_widths(self) -> tuple[int, ...]:
        """Linear-chain widths, input first: L, L/2, ..., L/16, 1."""
        widths = [self.target_width // (2 ** i) for i in range(TARGET_LAYERS)]
        return tuple(widths) + (1,)

    @property
    def hypernet_channels(self) -> tuple[int, ...]:
        """Channels after each of the five halving merges, 8C/2^i for i=1..5."""
        c8 = 8 * self.embed_channels
        return tuple(c8 // (2 ** i) for i in range(1, TARGET_LAYERS + 1))

    def pgl_conv_channels(self, layer: int) -> int:
        """Output channels of the weight-branch conv for target layer 1..4.

        The reshape must balance element counts: map^2 * out_channels ==
        in_dim * out_dim.
        """
        widths = self.target_widths
        need = widths[layer - 1] * widths[layer]
        m2 = self.map_size ** 2
        if need % m2:
            raise ConfigError(
                f"target layer {layer}: {widths[layer - 1]}x{widths[layer]} parameters are not "
                f"reshapeable from a {self.map_size}x{self.map_size} map ({need} % {m2} != 0)")
        return need // m2

    # -- validation ------------------------------------------------------

    def validate(self) -> None:
        d = self.depths
        if len(d) != 4 or any(n < 1 for n in d):
            raise ConfigError(f"depths must be four positive ints, got {d}")
        if len(self.heads_per_stage) != 4 or any(h < 1 for h in self.heads_per_stage):
            raise ConfigError(f"heads_per_stage must be four positive ints, got {self.heads_per_stage}")
        if self.hypernet_mode not in HYPERNET_MODES:
            raise ConfigError(f"hypernet_mode must be one of {HYPERNET_MODES}, got {self.hypernet_mode!r}")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.input_size % 32:
            raise ConfigError(f"input_size must be divisible by 32, got {self.input_size}")
        c = self.embed_channels
        if c % 8:
            raise ConfigError(f"embed_channels must be divisible by 8, got {c}")
        for i, (size, ch, heads) in enumerate(zip(self.stage_sizes, self.stage_channels,
                                                  self.heads_per_stage)):
            if size % self.window_size:
                raise ConfigError(
                    f"stage {i} size {size} not divisible by window_size {self.window_size}")
            if size % self.dpb_pool:
                raise ConfigError(f"stage {i} size {size} not divisible by dpb_pool {self.dpb_pool}")
            if ch % heads:
                raise ConfigError(f"stage {i} channels {ch} not divisible by heads {heads}")
            if ch % 8:
                raise ConfigError(f"stage {i} channels {ch} not divisible by 8")
        if self.target_width != 4 * self.dpb_out_len:
            raise ConfigError(
                f"target_width {self.target_width} must be 4 * dpb_out_len ({4 * self.dpb_out_len})")
        if self.target_width % 32:
            raise ConfigError(f"target_width must be divisible by 32, got {self.target_width}")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ConfigError(f"drop_rate must be in [0, 1), got {self.drop_rate}")
        if self.mlp_ratio <= 0 or (self.mlp_ratio * c) != int(self.mlp_ratio * c):
            raise ConfigError(f"mlp_ratio {self.mlp_ratio} must give an integral hidden width")
        for layer in range(1, TARGET_LAYERS):
            self.pgl_conv_channels(layer)  # raises when non-integral

    # -- (de)serialization -----------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "FthnetConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def _scaled(input_size: int) -> dict:
    """Window/pool/vector sizes for a given input resolution.

    At 384 these are the reference values (12/12/144); smaller desk-scale
    resolutions shrink them so that every divisibility invariant holds.
    """
    table = {
        384: dict(window_size=12, dpb_pool=12, dpb_out_len=144, target_width=576),
        192: dict(window_size=6, dpb_pool=6, dpb_out_len=48, target_width=192),
        96: dict(window_size=3, dpb_pool=3, dpb_out_len=24, target_width=96),
        # 64 keeps the 96-wide distortion vector: the halving chain would
        # otherwise bottleneck at 2 units.
        64: dict(window_size=2, dpb_pool=2, dpb_out_len=24, target_width=96),
    }
    if input_size not in table:
        raise ConfigError(f"no scaled profile for input_size {input_size}; "
                          f"known sizes: {sorted(table)}")
    return dict(table[input_size], input_size=input_size)


def fthnet_l(input_size: int = 384, **overrides) -> FthnetConfig:
    """Large model: depths (2,2,6,2), 64 embed channels."""
    kw = dict(_scaled(input_size), depths=(2, 2, 6, 2), embed_channels=64,
              heads_per_stage=(2, 4, 8, 16))
    kw.update(overrides)
    return FthnetConfig(**kw)


def fthnet_l_deep(input_size: int = 384, **overrides) -> FthnetConfig:
    """Variant of the large model with depths (2,4,6,2)."""
    return fthnet_l(input_size, depths=(2, 4, 6, 2), **overrides)


def fthnet_s(input_size: int = 384, **overrides) -> FthnetConfig:
    """Small model: depths (2,4,6,2), 32 embed channels."""
    kw = dict(_scaled(input_size), depths=(2, 4, 6, 2), embed_channels=32,
              heads_per_stage=(1, 2, 4, 8))
    kw.update(overrides)
    return FthnetConfig(**kw)


def tiny(input_size: int = 64, **overrides) -> FthnetConfig:
    """Minimal config for gradient checks and fast tests."""
    kw = dict(_scaled(input_size), depths=(1, 1, 1, 1), embed_channels=8,
              heads_per_stage=(1, 1, 1, 1))
    if input_size == 64:
        kw.update(dpb_out_len=8, target_width=32)
    kw.update(overrides)
    return FthnetConfig(**kw)


PROFILES = {
    "fthnet-l": fthnet_l,
    "fthnet-l-deep": fthnet_l_deep,
    "fthnet-s": fthnet_s,
    "tiny": tiny,
}


def profile(name: str, **overrides) -> FthnetConfig:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; known: {sorted(PROFILES)}")
    return PROFILES[name](**overrides)

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from .data import LEXICON

DETECT_THRESHOLD = 0.5  # fixed: fusion fires only when p_detect is strictly above
CME_MODES = ("off", "on", "always", "every4")


@dataclass
class EncoderConfig:
    image_size: int = 32
    in_channels: int = 3
    channels: tuple[int, ...] = (16, 32, 64)
    text_width: int = 64
    text_heads: int = 4
    text_mlp_ratio: int = 12
    vocab_size: int = len(LEXICON)

    def __post_init__(self):
        self.channels = tuple(self.channels)
        size = self.image_size
        for _ in self.channels:
            if size % 2:
                raise ValueError(f"image size {self.image_size} does not halve {len(self.channels)} times")
            size //= 2
        if any(c <= 0 for c in self.channels) or self.text_width <= 0:
            raise ValueError("encoder widths must be positive")

    @property
    def n_levels(self) -> int:
        return len(self.channels)

    @property
    def level_sizes(self) -> list[int]:
        return [self.image_size // 2 ** (k + 1) for k in range(self.n_levels)]


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    d_dec: int = 32
    decoder_heads: int = 2
    bottleneck: int = 8
    adapter_heads: int = 1
    patch_sizes: tuple[int, ...] = (4, 2, 2)
    bank_capacity: int = 4
    # ablation switches; off means the sub-op is skipped (identity path)
    use_adapters: bool = True
    use_hsa: bool = True
    use_vta: bool = True
    use_tva: bool = True
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        self.patch_sizes = tuple(self.patch_sizes)
        if len(self.patch_sizes) != self.encoder.n_levels:
            raise ValueError("one patch size per encoder level")
        for p, s in zip(self.patch_sizes, self.encoder.level_sizes):
            if p <= 0 or s % p:
                raise ValueError(f"patch size {p} does not divide level size {s}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class StreamConfig:
    clip_len: int = 4
    lam: float = 0.5
    cme_mode: str = "on"

    def __post_init__(self):
        if self.clip_len < 1:
            raise ValueError("clip length must be positive")
        if not 0 < self.lam <= 1:
            raise ValueError("fusion weight must lie in (0, 1]")
        if self.cme_mode not in CME_MODES:
            raise ValueError(f"cme mode must be one of {CME_MODES}")

    @property
    def threshold(self) -> float:
        return DETECT_THRESHOLD

"""Declarative configuration with CLI-flag overrides.

All tunable values live here: the supervision loss weights, the tokenizer
shape and loss weights (desk-scale defaults, large-scale preset available),
metric flags, heatmap sigma, the keypoint noise model, and the master seed.
Everything random downstream derives from the seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

from .errors import ConfigurationError
from .metrics import LossWeights
from .tokenizer import TokenizerLossWeights


@dataclass(frozen=True)
class TemplateConfig:
    path: str | None = None
    n_vertices: int = 512
    seed: int = 0

    def validate(self):
        if self.path is None and self.n_vertices < 24:
            raise ConfigurationError("toy template needs n_vertices >= 24")


@dataclass(frozen=True)
class TokenizerConfig:
    codebook_size: int = 256
    code_dim: int = 64
    tokens: int = 16
    ema_gamma: float = 0.99
    reset_threshold: float = 0.01
    mix_weight: float = 100.0
    codebook_weight: float = 1.0
    commitment_weight: float = 1.0
    quadratic_reduction: str = "sum"

    def validate(self):
        if self.codebook_size < 1 or self.code_dim < 1 or self.tokens < 1:
            raise ConfigurationError("tokenizer shape values must be >= 1")
        if not 0.0 <= self.ema_gamma < 1.0:
            raise ConfigurationError("ema_gamma must be in [0, 1)")
        if self.reset_threshold < 0:
            raise ConfigurationError("reset_threshold must be >= 0")
        if self.quadratic_reduction not in ("sum", "mean"):
            raise ConfigurationError("quadratic_reduction must be 'sum' or 'mean'")
        for name in ("mix_weight", "codebook_weight", "commitment_weight"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")

    def loss_weights(self):
        return TokenizerLossWeights(
            mix=self.mix_weight,
            codebook=self.codebook_weight,
            commitment=self.commitment_weight,
        )


# Production-scale preset: large codebook, 320 tokens.
LARGE_SCALE_TOKENIZER = TokenizerConfig(codebook_size=2048, code_dim=256, tokens=320)


@dataclass(frozen=True)
class MetricConfig:
    pa_scale: bool = True
    include_amputated: bool = False


@dataclass(frozen=True)
class NoiseConfig:
    model: str = "subset"
    ratio: float = 0.0
    sigma_px: float | None = None  # None: 0.05 * bbox diagonal at use

    def validate(self):
        if self.model not in ("subset", "scale"):
            raise ConfigurationError("noise model must be 'subset' or 'scale'")
        if not 0.0 <= self.ratio <= 1.0:
            raise ConfigurationError("noise ratio must be in [0, 1]")
        if self.sigma_px is not None and self.sigma_px < 0:
            raise ConfigurationError("noise sigma_px must be >= 0")


@dataclass(frozen=True)
class Config:
    template: TemplateConfig = field(default_factory=TemplateConfig)
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    loss_pose: float = 1e-3
    loss_shape: float = 5e-4
    loss_joints2d: float = 1e-2
    loss_joints3d: float = 5e-2
    loss_classifier: float = 1e-2
    heatmap_sigma: float = 2.0
    image_width: int = 256
    image_height: int = 256
    amputee_fraction: float = 0.5
    seed: int = 0

    def validate(self):
        self.template.validate()
        self.tokenizer.validate()
        self.noise.validate()
        for name in ("loss_pose", "loss_shape", "loss_joints2d", "loss_joints3d",
                     "loss_classifier"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.heatmap_sigma <= 0:
            raise ConfigurationError("heatmap_sigma must be positive")
        if self.image_width < 8 or self.image_height < 8:
            raise ConfigurationError("image size must be at least 8 x 8")
        if not 0.0 <= self.amputee_fraction <= 1.0:
            raise ConfigurationError("amputee_fraction must be in [0, 1]")
        return self

    @property
    def image_size(self):
        return (self.image_width, self.image_height)

    def loss_weights(self):
        return LossWeights(
            pose=self.loss_pose,
            shape=self.loss_shape,
            joints2d=self.loss_joints2d,
            joints3d=self.loss_joints3d,
            classifier=self.loss_classifier,
        )

    def with_overrides(self, **kwargs):
        changed = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **changed).validate() if changed else self


def config_to_dict(cfg):
    return asdict(cfg)


def config_from_dict(data):
    data = dict(data)
    nested = {}
    for key, cls in (("template", TemplateConfig), ("tokenizer", TokenizerConfig),
                     ("metrics", MetricConfig), ("noise", NoiseConfig)):
        if key in data:
            sub = data.pop(key)
            if not isinstance(sub, dict):
                raise ConfigurationError(f"config section {key!r} must be an object")
            try:
                nested[key] = cls(**sub)
            except TypeError as exc:
                raise ConfigurationError(f"bad config section {key!r}: {exc}") from exc
    try:
        cfg = Config(**nested, **data)
    except TypeError as exc:
        raise ConfigurationError(f"bad config: {exc}") from exc
    return cfg.validate()


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config parse error at offset {exc.pos}: {exc.msg}") from exc
    return config_from_dict(data)


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, sort_keys=True, indent=2)
        fh.write("\n")

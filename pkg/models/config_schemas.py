"""Configuration models for encoders, training, ablations, voting and data generation."""
from math import isqrt
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

MODULE_IDS = ("ip", "is", "t", "mm")

ModuleId = Literal["ip", "is", "t", "mm"]


class EncoderConfig(BaseModel):
    """Widths and input geometry of the toy feature extractors."""

    model_config = ConfigDict(extra="forbid")

    d: int = Field(64, gt=0, description="Shared hidden width of every refined representation")
    hidden: Optional[int] = Field(None, gt=0, description="Hidden width of the one-layer MLPs (defaults to d)")
    text_len: int = Field(16, gt=0, description="Token count L_t after padding/truncation")
    image_tokens: int = Field(16, gt=0, description="Patch-token count L_is (a perfect square)")
    vocab_size: int = Field(64, gt=1, description="Vocabulary size including the pad id 0")
    grid: int = Field(32, gt=0, description="Image extent H = W")
    kernel_size: int = Field(3, gt=0, description="Constrained-convolution kernel extent (odd)")
    pattern_channels: int = Field(8, gt=0, description="Number of constrained kernels")
    d_ip: int = Field(32, gt=0, description="Width of the image-pattern feature f_ip")
    pattern_gain: float = Field(
        10.0, gt=0.0, description="Fixed gain on the constrained-convolution responses before SiLU",
    )
    augment_flip: bool = Field(True, description="Offer horizontal flips to the IS augmentation")
    augment_rotate: bool = Field(True, description="Offer 90-degree rotations (square grids only)")
    augment_scale: bool = Field(True, description="Offer +/-10% value scaling")

    @property
    def mlp_hidden(self) -> int:
        return self.hidden or self.d

    @property
    def patch_grid(self) -> int:
        return isqrt(self.image_tokens)

    @property
    def patch_size(self) -> int:
        return self.grid // self.patch_grid

    @model_validator(mode="after")
    def _check_geometry(self) -> "EncoderConfig":
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.patch_grid ** 2 != self.image_tokens:
            raise ValueError("image_tokens must be a perfect square")
        if self.grid % self.patch_grid != 0:
            raise ValueError(f"grid {self.grid} is not divisible by the patch grid {self.patch_grid}")
        if self.kernel_size > self.grid:
            raise ValueError("kernel_size exceeds grid")
        return self


class ModelConfig(BaseModel):
    """Structure of the expert networks and parameter initialisation."""

    model_config = ConfigDict(extra="forbid")

    n_experts: int = Field(4, gt=0, description="Experts per expert network")
    fusion_input: Literal["refined", "raw"] = Field(
        "refined",
        description="refined: r_is^1 + r_t^1 feeds the fusion experts; raw: f_t + f_is token sum",
    )
    init: Literal["xavier", "zeros"] = Field("xavier", description="Parameter initialisation scheme")


class TrainConfig(BaseModel):
    """Mini-batch AdamW training settings."""

    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(10, ge=0)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(1e-4, ge=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    weight_decay: float = Field(0.01, ge=0.0)
    consistency_weight: float = Field(1.0, ge=0.0, description="lambda on the consistency-head loss")
    augment: bool = Field(True, description="Apply IS augmentation during training")


class AblationConfig(BaseModel):
    """Switches that remove or replace parts of the architecture."""

    model_config = ConfigDict(extra="forbid")

    disable_adain: bool = False
    disable_veto: bool = False
    disable_coarse_constraint: bool = False
    disable_consistency: bool = False
    classic_mmoe_gating: bool = False
    mm_style_only: bool = False
    transformer_block: bool = Field(
        False, description="Replace every MMoE-Pro network with a single-head transformer encoder block",
    )
    module_subset: List[ModuleId] = Field(default_factory=lambda: list(MODULE_IDS))

    @field_validator("module_subset")
    @classmethod
    def _canonical_subset(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError("module_subset must not be empty")
        if len(set(value)) != len(value):
            raise ValueError("module_subset has duplicates")
        return [m for m in MODULE_IDS if m in value]

    @model_validator(mode="after")
    def _one_expert_variant(self) -> "AblationConfig":
        if self.classic_mmoe_gating and self.transformer_block:
            raise ValueError("classic_mmoe_gating and transformer_block both replace the expert networks")
        return self

    def active(self, module: str) -> bool:
        return module in self.module_subset

    @property
    def is_full_subset(self) -> bool:
        return len(self.module_subset) == len(MODULE_IDS)

    def variant_name(self) -> str:
        """Short label used in ablation reports (``full`` for no switches)."""
        parts = [name for name in (
            "disable_adain", "disable_veto", "disable_coarse_constraint",
            "disable_consistency", "classic_mmoe_gating", "mm_style_only", "transformer_block",
        ) if getattr(self, name)]
        if not self.is_full_subset:
            parts.append("module_subset=" + "+".join(self.module_subset))
        return ",".join(parts) or "full"


class VetoConfig(BaseModel):
    """Thresholds and Rule 3 reading for the veto vote."""

    model_config = ConfigDict(extra="forbid")

    theta_high: float = Field(0.9, gt=0.0, lt=1.0)
    theta_low: float = Field(0.1, gt=0.0, lt=1.0)
    rule3_reading: Literal["prose", "formula"] = Field(
        "prose",
        description="prose: max over modules outside the majority class; formula: max over all modules",
    )

    @model_validator(mode="after")
    def _ordered(self) -> "VetoConfig":
        if not self.theta_low < self.theta_high:
            raise ValueError("theta_low must be below theta_high")
        return self


class GenSpec(BaseModel):
    """Synthetic dataset generation settings with per-branch planted signals."""

    n_train: int = Field(2000, gt=0)
    n_val: int = Field(500, gt=0)
    n_test: int = Field(500, gt=0)
    class_balance: float = Field(0.5, ge=0.0, le=1.0, description="Fraction of fake (y=1) records")
    text_signal: float = Field(
        0.3, ge=0.0, le=1.0,
        description="Skew of each text's marker leaning toward its class: P(lean = y) = min(1, 0.5 + 1.25 * text_signal)",
    )
    pattern_signal: float = Field(0.15, ge=0.0, le=1.0, description="Checkerboard amplitude added to fake images")
    consistency_rate: Optional[float] = Field(
        None, ge=0.0, le=1.0,
        description="If set, P(c=1) for both classes; otherwise the class-coupled rates apply",
    )
    inconsistency_given_fake: float = Field(0.7, ge=0.0, le=1.0, description="P(c=0 | y=1)")
    inconsistency_given_real: float = Field(0.1, ge=0.0, le=1.0, description="P(c=0 | y=0)")
    n_topics: int = Field(4, ge=2)
    vocab_size: int = Field(64, gt=1)
    grid: int = Field(32, gt=0)
    text_len: int = Field(16, gt=0, description="Maximum text length")
    min_text_len: int = Field(12, gt=0)
    seed: int = 0

    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {
                "n_train": 2000,
                "n_val": 500,
                "n_test": 500,
                "text_signal": 0.3,
                "pattern_signal": 0.15,
                "seed": 7,
            }
        },
    )

    @model_validator(mode="after")
    def _check(self) -> "GenSpec":
        if self.min_text_len > self.text_len:
            raise ValueError("min_text_len exceeds text_len")
        if self.vocab_size < 2 * self.n_topics + 3:
            raise ValueError("vocab_size too small for the topic and marker blocks")
        return self

    def inconsistency_rate(self, label: int) -> float:
        if self.consistency_rate is not None:
            return 1.0 - self.consistency_rate
        return self.inconsistency_given_fake if label == 1 else self.inconsistency_given_real


class RunConfig(BaseModel):
    """Everything one command needs; loaded from TOML with flag overrides."""

    model_config = ConfigDict(extra="forbid")

    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    data: GenSpec = Field(default_factory=GenSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    veto: VetoConfig = Field(default_factory=VetoConfig)
    seed: int = 0
    out: Optional[str] = None

    @model_validator(mode="after")
    def _cross_check(self) -> "RunConfig":
        if self.model.fusion_input == "raw" and self.encoder.text_len != self.encoder.image_tokens:
            raise ValueError("fusion_input 'raw' needs encoder.text_len == encoder.image_tokens")
        if self.data.vocab_size > self.encoder.vocab_size:
            raise ValueError("data.vocab_size exceeds encoder.vocab_size")
        if self.data.grid != self.encoder.grid:
            raise ValueError("data.grid must equal encoder.grid")
        return self

"""Configuration and report schemas."""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

NormMode = Literal["layer", "batch"]
AugmentFlag = Literal["hflip", "vflip", "rot90"]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _check_odd(values: list[int], what: str) -> list[int]:
    for k in values:
        if k < 1 or k % 2 == 0:
            raise ValueError(f"{what} must be odd and positive, got {k}")
    return values


# ════════════════════════════════════════════
#  Blocks
# ════════════════════════════════════════════


class MdRwkvBlockConfig(StrictModel):
    c_in: int = Field(ge=1)
    c_mid: int = Field(ge=1)
    norm_mode: NormMode = "layer"
    drop_path_rate: float = Field(default=0.0, ge=0.0, le=1.0)
    dw_kernel: int = 3
    use_deformable_shift: bool = True

    @field_validator("dw_kernel")
    @classmethod
    def _odd_kernel(cls, value: int) -> int:
        return _check_odd([value], "dw_kernel")[0]


class SkConfig(StrictModel):
    kernel_sizes: list[int] = Field(default_factory=lambda: [3, 5], min_length=1)
    reduction: int = Field(default=8, ge=1)

    @field_validator("kernel_sizes")
    @classmethod
    def _odd_kernels(cls, value: list[int]) -> list[int]:
        return _check_odd(value, "SK kernel size")

    def hidden_channels(self, channels: int) -> int:
        return max(channels // self.reduction, 4)


# ════════════════════════════════════════════
#  Network
# ════════════════════════════════════════════

# (use_sk_attention, use_deformable_shift, use_cross_stage_fusion) per ablation row
VARIANTS: dict[str, tuple[bool, bool, bool]] = {
    "ver1": (False, False, False),
    "ver2": (True, False, False),
    "ver3": (False, True, False),
    "ver4": (False, False, True),
    "ver5": (True, True, False),
    "ver6": (True, False, True),
    "ver7": (False, True, True),
    "ver8": (True, True, True),
}


class ModelConfig(StrictModel):
    num_classes: int = Field(ge=2)
    in_channels: int = Field(default=1, ge=1)
    stages: int = Field(default=4, ge=1)
    channels: list[int] = Field(default_factory=lambda: [32, 64, 128, 256])
    blocks_per_stage: list[int] = Field(default_factory=lambda: [2, 2, 2, 2])
    image_size: int = Field(default=224, ge=1)
    use_sk_attention: bool = True
    use_deformable_shift: bool = True
    use_cross_stage_fusion: bool = True
    drop_path_rate: float = Field(default=0.1, ge=0.0, le=1.0)
    norm_mode: NormMode = "layer"
    dw_kernel: int = 3
    mid_ratio: float = Field(default=0.5, gt=0.0)
    sk: SkConfig = Field(default_factory=SkConfig)

    @field_validator("dw_kernel")
    @classmethod
    def _odd_kernel(cls, value: int) -> int:
        return _check_odd([value], "dw_kernel")[0]

    @model_validator(mode="after")
    def _check_layout(self) -> "ModelConfig":
        if len(self.channels) != self.stages or len(self.blocks_per_stage) != self.stages:
            raise ValueError(
                f"channels ({len(self.channels)}) and blocks_per_stage ({len(self.blocks_per_stage)}) "
                f"must both have one entry per stage ({self.stages})"
            )
        if any(c < 1 for c in self.channels) or any(n < 0 for n in self.blocks_per_stage):
            raise ValueError("channels must be positive and blocks_per_stage non-negative")
        factor = 2 ** (self.stages - 1)
        if self.image_size % factor:
            raise ValueError(f"image_size {self.image_size} must be divisible by {factor} for {self.stages} stages")
        return self

    def with_variant(self, variant: str) -> "ModelConfig":
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant '{variant}', expected one of {', '.join(VARIANTS)}")
        sk, deform, fusion = VARIANTS[variant]
        return self.model_copy(
            update={"use_sk_attention": sk, "use_deformable_shift": deform, "use_cross_stage_fusion": fusion}
        )

    def block_config(self, stage: int, drop_path_rate: float) -> MdRwkvBlockConfig:
        c = self.channels[stage]
        return MdRwkvBlockConfig(
            c_in=c,
            c_mid=max(1, int(round(c * self.mid_ratio))),
            norm_mode=self.norm_mode,
            drop_path_rate=drop_path_rate,
            dw_kernel=self.dw_kernel,
            use_deformable_shift=self.use_deformable_shift,
        )


# ════════════════════════════════════════════
#  Training / run configuration
# ════════════════════════════════════════════


class OptimHyper(StrictModel):
    lr0: float = Field(default=1e-3, ge=0.0)
    lr_min: float = Field(default=0.0, ge=0.0)
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = Field(default=1e-8, gt=0.0)
    weight_decay: float = Field(default=0.01, ge=0.0)
    total_steps: Optional[int] = Field(default=None, ge=1)
    grad_clip: Optional[float] = Field(default=1.0, gt=0.0)

    @model_validator(mode="after")
    def _check_rates(self) -> "OptimHyper":
        # lr0 == lr_min is allowed: a constant schedule, including lr0 = 0
        if self.lr0 < self.lr_min:
            raise ValueError(f"lr0 ({self.lr0}) must not be below lr_min ({self.lr_min})")
        for beta in self.betas:
            if not 0.0 <= beta < 1.0:
                raise ValueError(f"betas must lie in [0, 1), got {self.betas}")
        return self


class PhantomConfig(StrictModel):
    size: int = Field(default=64, ge=8)
    num_classes: int = Field(default=4, ge=2)
    radius_ranges: Optional[list[tuple[float, float]]] = None
    background_mean: float = 0.1
    intensity_means: Optional[list[float]] = None
    noise_sigma: float = Field(default=0.05, ge=0.0)
    deformation_amplitude: float = Field(default=0.15, ge=0.0, lt=1.0)
    lobes: int = Field(default=3, ge=1)
    class_names: Optional[list[str]] = None

    @model_validator(mode="after")
    def _check_organs(self) -> "PhantomConfig":
        organs = self.num_classes - 1
        if self.radius_ranges is not None:
            if len(self.radius_ranges) != organs:
                raise ValueError(f"radius_ranges needs {organs} entries, got {len(self.radius_ranges)}")
            for low, high in self.radius_ranges:
                if not 0.0 < low <= high < 0.5:
                    raise ValueError(f"radius range ({low}, {high}) must satisfy 0 < min <= max < 0.5")
        if self.intensity_means is not None and len(self.intensity_means) != organs:
            raise ValueError(f"intensity_means needs {organs} entries, got {len(self.intensity_means)}")
        if self.class_names is not None and len(self.class_names) != self.num_classes:
            raise ValueError(f"class_names needs {self.num_classes} entries, got {len(self.class_names)}")
        return self


class DataConfig(StrictModel):
    train_dir: Path
    val_dir: Optional[Path] = None
    batch_size: int = Field(default=24, ge=1)
    epochs: int = Field(default=30, ge=1)
    max_steps: Optional[int] = Field(default=None, ge=1)
    seed: int = 17
    augment: list[AugmentFlag] = Field(default_factory=list)


class EvalConfig(StrictModel):
    tta: bool = True
    batch_size: int = Field(default=8, ge=1)


class RunConfig(StrictModel):
    model: ModelConfig
    optim: OptimHyper = Field(default_factory=OptimHyper)
    data: DataConfig
    eval: EvalConfig = Field(default_factory=EvalConfig)
    log_every: int = Field(default=10, ge=1)

    def resolve_paths(self, base: Path) -> "RunConfig":
        """Anchor relative data paths at ``base`` (the config file's directory)."""
        data = self.data.model_copy(
            update={
                "train_dir": base / self.data.train_dir,
                "val_dir": None if self.data.val_dir is None else base / self.data.val_dir,
            }
        )
        return self.model_copy(update={"data": data})


# ════════════════════════════════════════════
#  Reports
# ════════════════════════════════════════════


class ClassMetrics(BaseModel):
    cls: int
    name: Optional[str] = None
    dice: float
    hd95: Optional[float] = None
    hd95_cases: int = 0


class MetricsReport(BaseModel):
    classes: list[ClassMetrics]
    mean_dice: float
    mean_hd95: Optional[float] = None
    num_samples: int
    tta: bool = False


class AblationRow(BaseModel):
    variant: str
    use_sk_attention: bool
    use_deformable_shift: bool
    use_cross_stage_fusion: bool
    param_count: int
    mean_dice: Optional[float] = None
    mean_hd95: Optional[float] = None

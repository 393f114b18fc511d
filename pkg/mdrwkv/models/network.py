"""Staged MD-RWKV encoder with a U-Net style decoder."""
from __future__ import annotations

import logging

import numpy as np

from mdrwkv.core import ops
from mdrwkv.core.nn import Conv2d, Module, ModuleList, Norm2d
from mdrwkv.core.tensor import Tensor, no_grad
from mdrwkv.models.blocks import CrossStageFusion, MdRwkvBlock, SkAttention
from mdrwkv.models.schemas import ModelConfig

logger = logging.getLogger(__name__)

SK_STAGES = 2


class DecoderLevel(Module):
    """Nearest x2 upsample + 3x3 conv, merge with the (optionally fused) skip."""

    def __init__(self, c_skip: int, c_deep: int, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.up_conv = Conv2d(c_deep, c_skip, 3, rng)
        self.fusion = CrossStageFusion(c_skip, c_deep, rng) if config.use_cross_stage_fusion else None
        self.merge = Conv2d(2 * c_skip, c_skip, 3, rng)
        self.merge_norm = Norm2d(c_skip, config.norm_mode)

    def forward(self, skip: Tensor, deep: Tensor) -> Tensor:
        upsampled = ops.upsample_nearest2x(deep)
        up = self.up_conv(upsampled)
        if self.fusion is not None:
            skip = self.fusion(skip, upsampled)
        return ops.relu(self.merge_norm(self.merge(ops.concat_channels(up, skip))))


class MdRwkvUNet(Module):
    def __init__(self, config: ModelConfig, seed: int):
        super().__init__()
        self.config = config
        init_seq, drop_seq = np.random.SeedSequence(seed).spawn(2)
        rng = np.random.default_rng(init_seq)
        self.drop_rng = np.random.default_rng(drop_seq)

        channels = config.channels
        rates = iter(np.linspace(0.0, config.drop_path_rate, max(sum(config.blocks_per_stage), 1)))
        self.downsample = ModuleList()
        self.stages = ModuleList()
        for stage, (c, n_blocks) in enumerate(zip(channels, config.blocks_per_stage)):
            if stage == 0:
                self.downsample.append(Conv2d(config.in_channels, c, 3, rng))
            else:
                self.downsample.append(Conv2d(channels[stage - 1], c, 3, rng, stride=2, padding=1))
            self.stages.append(
                ModuleList(
                    MdRwkvBlock(config.block_config(stage, float(next(rates))), rng, self.drop_rng)
                    for _ in range(n_blocks)
                )
            )
        self.sk = ModuleList()
        if config.use_sk_attention:
            for stage in range(min(SK_STAGES, config.stages)):
                self.sk.append(SkAttention(channels[stage], config.sk, rng))
        self.bottleneck_norm = Norm2d(channels[-1], config.norm_mode)
        self.decoder = ModuleList(
            DecoderLevel(channels[i], channels[i + 1], config, rng) for i in range(config.stages - 1)
        )
        self.head = Conv2d(channels[0], config.num_classes, 1, rng)

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def _check_input(self, x: Tensor) -> None:
        S, C = self.config.image_size, self.config.in_channels
        if x.ndim != 4 or x.shape[1:] != (C, S, S):
            raise ValueError(f"expected input of shape (B, {C}, {S}, {S}), got {x.shape}")

    def encode(self, x: Tensor) -> list[Tensor]:
        """Per-stage features; the deepest entry is normalized."""
        self._check_input(x)
        features = []
        for stage, (down, blocks) in enumerate(zip(self.downsample, self.stages)):
            x = down(x)
            for block in blocks:
                x = block(x)
            if stage < len(self.sk):
                x = self.sk[stage](x)
            features.append(x)
        features[-1] = self.bottleneck_norm(features[-1])
        return features

    def forward(self, x: Tensor) -> Tensor:
        features = self.encode(x)
        deep = features[-1]
        for level in reversed(range(len(self.decoder))):
            deep = self.decoder[level](features[level], deep)
        return self.head(deep)

    def global_descriptor(self, x: Tensor) -> Tensor:
        """Average-pooled normalized deepest features, (B, C_last)."""
        return ops.pool(self.encode(x)[-1], "global_avg")

    def logits(self, images: np.ndarray) -> np.ndarray:
        """Eval-mode forward without recording a tape."""
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                return self.forward(Tensor(np.asarray(images, dtype=np.float32))).data
        finally:
            self.train(was_training)


def build_model(config: ModelConfig, seed: int) -> MdRwkvUNet:
    model = MdRwkvUNet(config, seed)
    logger.info(
        f"Built model: stages={config.stages} channels={config.channels} "
        f"sk={config.use_sk_attention} deform={config.use_deformable_shift} "
        f"fusion={config.use_cross_stage_fusion} params={param_count(model)}"
    )
    return model


def param_count(model: Module) -> int:
    return model.num_parameters()

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import RngState
from .encoder import EncoderParams
from .projector import ProjectorParams


@dataclass
class ModelParams:
    """Encoder weights plus projector weights; the unit the optimizer updates."""

    encoder: EncoderParams
    projector: ProjectorParams

    @classmethod
    def init(cls, vocab_size: int, embed_dim: int = 64, output_dim: int = 64, n_blocks: int = 2,
             proj_dim: int = 256, rng: RngState | None = None, token_dropout: bool = True,
             **projector_kw) -> "ModelParams":
        rng = rng or RngState(0)
        enc = EncoderParams.init(vocab_size, embed_dim, output_dim, n_blocks, rng.spawn(0), token_dropout)
        proj = ProjectorParams.init(enc.output_dim, proj_dim, rng.spawn(1), **projector_kw)
        return cls(enc, proj)

    def named(self) -> dict[str, np.ndarray]:
        return {**self.encoder.named(), **self.projector.named()}

    def buffers(self) -> dict[str, np.ndarray]:
        return self.projector.buffers()

    def tensors(self) -> dict[str, np.ndarray]:
        return {**self.named(), **self.buffers()}

    def bump_version(self) -> None:
        self.encoder.version += 1
        self.projector.version += 1

    def copy(self) -> "ModelParams":
        enc = self.encoder
        p = self.projector
        return ModelParams(
            EncoderParams(enc.embedding.copy(), [w.copy() for w in enc.weights], [b.copy() for b in enc.biases],
                          enc.token_dropout),
            ProjectorParams(
                [w.copy() for w in p.weights], [b.copy() for b in p.biases],
                [g.copy() for g in p.gammas], [b.copy() for b in p.betas],
                [m.copy() for m in p.running_means], [v.copy() for v in p.running_vars],
                eps=p.eps, momentum=p.momentum, relu_before_bn=p.relu_before_bn, training=p.training,
            ),
        )

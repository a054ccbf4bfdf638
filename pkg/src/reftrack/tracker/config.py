"""Tracker configuration and validation."""

from __future__ import annotations

from dataclasses import dataclass, field


SGM_MODES = ("full", "only_det", "cross_only", "off")
REFER_HEADS = ("cosine", "concat_mlp", "cross_attention", "ffn")
TEXT_SPACES = ("frozen", "trainable")


class TrackerConfigError(ValueError):
    pass


@dataclass
class TrackerConfig:
    dim: int = 64
    n_det: int = 30
    heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 2
    ffn_dim: int = 128
    frozen_dim: int = 64            # frozen reference text space
    grid: tuple[int, int] = (12, 16)  # (rows, cols) of the feature grid

    beta_ref: float = 0.5           # referring threshold on the calibrated score
    tau_det: float = 0.5            # track-birth class threshold
    miss_patience: int = 5

    denoise_groups: int = 3
    denoise_variance: float = 0.3

    lambda_cls: float = 2.0
    lambda_l1: float = 5.0
    lambda_giou: float = 2.0
    lambda_ref: float = 2.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    # the referring head wants well-separated probabilities (so the
    # output is robust to the beta_ref threshold): balanced plain BCE
    refer_alpha: float = 0.5
    refer_gamma: float = 0.0

    clip_len: int = 4
    epochs: int = 20
    lr: float = 1e-4
    backbone_lr: float = 1e-5       # patch-embedding group
    lr_min_factor: float = 0.1      # cosine decay floor, as a fraction of lr
    grad_clip: float = 1.0          # global gradient-norm cap; 0 disables
    weight_decay: float = 1e-4
    seed: int = 0

    sgm_mode: str = "full"
    refer_head: str = "cosine"
    text_space: str = "frozen"

    def validate(self):
        if self.dim % self.heads != 0:
            raise TrackerConfigError("dim must be divisible by heads")
        if not 0.0 < self.beta_ref < 1.0:
            raise TrackerConfigError("beta_ref must be in (0, 1)")
        for name in ("lambda_cls", "lambda_l1", "lambda_giou", "lambda_ref"):
            if getattr(self, name) < 0:
                raise TrackerConfigError(f"{name} must be >= 0")
        if self.sgm_mode not in SGM_MODES:
            raise TrackerConfigError(f"unknown sgm_mode {self.sgm_mode!r}")
        if self.refer_head not in REFER_HEADS:
            raise TrackerConfigError(f"unknown refer_head {self.refer_head!r}")
        if self.text_space not in TEXT_SPACES:
            raise TrackerConfigError(f"unknown text_space {self.text_space!r}")
        if self.denoise_groups < 1:
            raise TrackerConfigError("denoise_groups must be >= 1")
        if self.denoise_variance < 0:
            raise TrackerConfigError("denoise_variance must be >= 0")
        if self.n_det < 1 or self.clip_len < 1:
            raise TrackerConfigError("n_det and clip_len must be >= 1")
        return self

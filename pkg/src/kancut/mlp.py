"""Two-layer MLP projection head, the drop-in baseline for the KAN head."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, ParameterError
from .rng import derive_rng


@dataclass
class MlpHead:
    w1: Tensor  # [hidden, n_in]
    b1: Tensor  # [hidden]
    w2: Tensor  # [embed_dim, hidden]
    b2: Tensor  # [embed_dim]

    def __post_init__(self):
        if self.w1.shape[0] != self.w2.shape[1]:
            raise DimensionError(
                f"widths do not chain: {self.w1.shape[0]} -> {self.w2.shape[1]}")

    @property
    def embed_dim(self):
        return self.w2.shape[0]

    def __call__(self, x):
        return mlp_head_forward(x, self)

    def parameters(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def mlp_head_forward(x, head):
    """w2 . relu(w1 . x + b1) + b2"""
    if x.ndim != 2 or x.shape[1] != head.w1.shape[1]:
        raise DimensionError(f"expected [batch, {head.w1.shape[1]}], got {x.shape}")
    return ad.linear(ad.relu(ad.linear(x, head.w1, head.b1)), head.w2, head.b2)


def init_mlp_head(n_in, hidden=256, embed_dim=256, seed=0):
    if n_in < 1 or hidden < 1 or embed_dim < 1:
        raise ParameterError("head dims must be positive")
    rng = derive_rng(seed, "mlp-head-init")
    b1 = np.sqrt(6.0 / n_in)
    b2 = np.sqrt(6.0 / hidden)
    return MlpHead(
        w1=ad.param(rng.uniform(-b1, b1, (hidden, n_in))),
        b1=ad.param(np.zeros(hidden)),
        w2=ad.param(rng.uniform(-b2, b2, (embed_dim, hidden))),
        b2=ad.param(np.zeros(embed_dim)),
    )

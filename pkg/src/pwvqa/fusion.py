"""Branch-score fusion strategies and their analytic partial derivatives.

A fusion function h(zq, zv, zk) combines three logit vectors -- question-only,
vision-only, and multimodal -- into one score vector over the answer
vocabulary. The explain-away (EA) strategy is the interesting one:

    h = ln(Z + eps) / (alpha + 1)
    Z = s(zq)^a * s(zv)^(a+1) * s(zk)^(a+1)
      + s(zq)^(a+1) * s(zv)^a * s(zk)^(a+1)
      + s(zq)^(a+1) * s(zv)^(a+1) * s(zk)^a

with s the logistic sigmoid and a = alpha. The three terms are the three
placements of the smaller exponent, so h is symmetric under any permutation
of its arguments. SUM, HM, and the question-mask (RUBi-style) fusion are
comparison baselines.

All functions are elementwise over arrays of a common shape (1-D logits or
2-D batches), pure, and thread-safe.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import backend
from .errors import ConfigError, DimensionError, DomainError

DEFAULT_ALPHA = 1.5
DEFAULT_EPSILON = 5e-11


class Strategy(str, Enum):
    EA = "ea"
    SUM = "sum"
    HM = "hm"
    RUBI_MASK = "rubi"


class CfMode(str, Enum):
    """Which branches are replaced by the constant in the counterfactual pass.

    VK: vision and knowledge branches counterfactual, h(zq, c, c).
    K_ONLY: knowledge branch only, h(zq, zv, c).
    """

    VK = "vk"
    K_ONLY = "k-only"


@dataclass(frozen=True)
class FusionConfig:
    strategy: Strategy = Strategy.EA
    alpha: float = DEFAULT_ALPHA
    epsilon: float = DEFAULT_EPSILON
    cf_mode: CfMode = CfMode.VK

    def __post_init__(self):
        if not self.alpha >= 1.0:
            raise ConfigError(f"alpha must be >= 1, got {self.alpha}")
        # epsilon = 0 disables the log stabilizer (exact-math mode)
        if self.epsilon != 0.0 and not (1e-12 <= self.epsilon <= 1e-6):
            raise ConfigError(
                f"epsilon must be 0 or within [1e-12, 1e-6], got {self.epsilon}"
            )


def _checked(*arrays):
    """Coerce to float64, require a common shape and finite entries."""
    out = []
    shape = None
    for arr in arrays:
        a = np.asarray(arr, dtype=np.float64)
        if shape is None:
            shape = a.shape
        elif a.shape != shape:
            raise DimensionError(f"logit shapes differ: {shape} vs {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DomainError("logits contain NaN or Inf")
        out.append(a)
    return out


def fuse_ea(zq, zv, zk, alpha=DEFAULT_ALPHA, epsilon=DEFAULT_EPSILON):
    """Explain-away fusion of the three branch logit vectors.

    The output lies in (-inf, ln(3)/(alpha+1)): each sigmoid-power term is in
    (0, 1), so their sum is below 3. epsilon is added inside the logarithm as
    a floor against saturation underflow.
    """
    zq, zv, zk = _checked(zq, zv, zk)
    return backend.ea_forward(zq, zv, zk, alpha, epsilon)


def fuse_sum(zq, zv, zk):
    """Additive baseline: ln(sigmoid(zq + zv + zk))."""
    zq, zv, zk = _checked(zq, zv, zk)
    return backend.sum_forward(zq, zv, zk)


def fuse_hm(zq, zv, zk):
    """Product baseline: ln(sigmoid(zq) * sigmoid(zv) * sigmoid(zk))."""
    zq, zv, zk = _checked(zq, zv, zk)
    return backend.hm_forward(zq, zv, zk)


def rubi_mask_fuse(zk, zq):
    """Question-mask baseline: multimodal logits gated by sigmoid(zq)."""
    zk, zq = _checked(zk, zq)
    return backend.rubi_forward(zk, zq)


def fuse(zq, zv, zk, cfg):
    """Apply the configured fusion strategy to the three branch vectors."""
    if cfg.strategy is Strategy.EA:
        return fuse_ea(zq, zv, zk, cfg.alpha, cfg.epsilon)
    if cfg.strategy is Strategy.SUM:
        return fuse_sum(zq, zv, zk)
    if cfg.strategy is Strategy.HM:
        return fuse_hm(zq, zv, zk)
    if cfg.strategy is Strategy.RUBI_MASK:
        zq, zv, zk = _checked(zq, zv, zk)
        return backend.rubi_forward(zk, zq)
    raise ConfigError(f"unknown strategy {cfg.strategy!r}")


def fuse_grad(zq, zv, zk, cfg):
    """Exact partials (dh/dzq, dh/dzv, dh/dzk) of the configured fusion.

    For RUBI_MASK the vision partial is identically zero (zv does not enter),
    and the question partial changes sign with zk.
    """
    zq, zv, zk = _checked(zq, zv, zk)
    if cfg.strategy is Strategy.EA:
        return backend.ea_backward(zq, zv, zk, cfg.alpha, cfg.epsilon)
    if cfg.strategy is Strategy.SUM:
        return backend.sum_backward(zq, zv, zk)
    if cfg.strategy is Strategy.HM:
        return backend.hm_backward(zq, zv, zk)
    if cfg.strategy is Strategy.RUBI_MASK:
        return backend.rubi_backward(zk, zq)
    raise ConfigError(f"unknown strategy {cfg.strategy!r}")

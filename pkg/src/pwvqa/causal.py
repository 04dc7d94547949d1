"""Counterfactual realization of branch scores and effect decomposition.

The debiasing logic lives here: fused scores are compared between the factual
world and counterfactual worlds in which some branches are replaced by a
learnable constant c. The difference splits into

    te  = h(factual)        - h(all counterfactual)     total effect
    nde = h(counterfactual) - h(all counterfactual)     direct effect
    tie = te - nde                                      indirect effect

where the middle point keeps the question branch factual and, depending on
cf_mode, replaces vision+knowledge (VK) or knowledge only (K_ONLY). Answers
are inferred by argmax over tie, which cancels the shared reference point.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, DimensionError
from .fusion import CfMode, Strategy, fuse


@dataclass(frozen=True)
class BranchLogits:
    """The (zq, zv, zk) triple; a None entry marks an absent branch.

    Present vectors must share one length. zk may be present only when both
    unimodal inputs were present at encoding time (enforced by realize_k).
    """

    zq: Optional[np.ndarray] = None
    zv: Optional[np.ndarray] = None
    zk: Optional[np.ndarray] = None

    def __post_init__(self):
        lengths = {np.shape(z)[-1] for z in (self.zq, self.zv, self.zk) if z is not None}
        if len(lengths) > 1:
            raise DimensionError(f"present branches disagree on length: {sorted(lengths)}")

    def require_factual(self):
        if self.zq is None or self.zv is None or self.zk is None:
            raise ContractError("operation requires all three branches factual")


@dataclass(frozen=True)
class EffectDecomposition:
    """(te, nde, tie) score triple; te = nde + tie holds exactly by construction."""

    te: np.ndarray
    nde: np.ndarray
    tie: np.ndarray


def realize(branch_input, c, size):
    """Return the branch logits unchanged, or a constant-c vector if absent."""
    if branch_input is not None:
        return np.asarray(branch_input, dtype=np.float64)
    return np.full(size, float(c))


def realize_k(v_present, q_present, encoder_output, c, size):
    """Knowledge-branch logits: the encoder output only if both inputs are factual."""
    if v_present and q_present:
        if encoder_output is None:
            raise ContractError("both inputs factual but no encoder output supplied")
        return np.asarray(encoder_output, dtype=np.float64)
    return np.full(size, float(c))


def _constant_like(z, c):
    return np.full(np.shape(z), float(c))


def counterfactual_point(branch, c, cfg):
    """Fused scores at the counterfactual point selected by cfg.cf_mode."""
    cq = branch.zq
    if cfg.cf_mode is CfMode.VK:
        return fuse(cq, _constant_like(cq, c), _constant_like(cq, c), cfg)
    if cfg.cf_mode is CfMode.K_ONLY:
        return fuse(cq, branch.zv, _constant_like(cq, c), cfg)
    raise ContractError(f"unknown cf_mode {cfg.cf_mode!r}")


def decompose(branch, c, cfg):
    """Split the fused score into total, direct, and indirect effects."""
    branch.require_factual()
    ref = fuse(
        _constant_like(branch.zq, c),
        _constant_like(branch.zq, c),
        _constant_like(branch.zq, c),
        cfg,
    )
    te = fuse(branch.zq, branch.zv, branch.zk, cfg) - ref
    nde = counterfactual_point(branch, c, cfg) - ref
    return EffectDecomposition(te=te, nde=nde, tie=te - nde)


def infer_answer(branch, c, cfg):
    """Debiased answer: argmax over tie scores, ties broken to the lowest index."""
    return int(np.argmax(decompose(branch, c, cfg).tie, axis=-1))


# Inference rules used by the evaluation harness. FUSED applies the fusion
# with no counterfactual correction; TE differs from it only by a constant
# shift, so the two agree under argmax.
RULE_TIE = "tie"
RULE_TE = "te"
RULE_FUSED = "fused"
RULE_Q_ONLY = "q-only"
INFERENCE_RULES = (RULE_TIE, RULE_TE, RULE_FUSED, RULE_Q_ONLY)


def scores_for_rule(branch, c, cfg, rule):
    """Score vector(s) whose argmax implements the given inference rule."""
    branch.require_factual()
    if rule == RULE_TIE:
        return decompose(branch, c, cfg).tie
    if rule == RULE_TE:
        return decompose(branch, c, cfg).te
    if rule == RULE_FUSED:
        return fuse(branch.zq, branch.zv, branch.zk, cfg)
    if rule == RULE_Q_ONLY:
        return np.asarray(branch.zq, dtype=np.float64)
    raise ContractError(f"unknown inference rule {rule!r}")

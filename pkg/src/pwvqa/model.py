"""Three-branch encoder model, losses, gradients, and the training loop.

Each branch is a two-layer tanh MLP with a linear classifier head: one over
question features, one over vision features, one over their concatenation.
Training minimizes, summed over the batch,

    loss_cls  = CE(fused) + CE(zq) + CE(zv)
    loss_kl   = mean_a of -p(a | factual) * ln p(a | counterfactual)

where the counterfactual scores replace the vision and knowledge branches by
the learnable constant c. Gradient routing is structural: encoder parameters
receive gradient only from loss_cls (the unimodal terms through their own
branch, the fused term through the fusion partials), and c receives gradient
only from loss_kl.

Gradients are computed by hand in reverse mode; no autodiff framework.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .causal import BranchLogits
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    NumericalError,
)
from .fusion import CfMode, FusionConfig, Strategy, fuse, fuse_grad


@dataclass
class Mlp:
    """Parameters of one branch: x -> tanh(x @ w1 + b1) @ w2 + b2."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def arrays(self):
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class EncoderParams:
    q: Mlp
    v: Mlp
    k: Mlp

    @property
    def q_dim(self):
        return self.q.w1.shape[0]

    @property
    def v_dim(self):
        return self.v.w1.shape[0]

    @property
    def hidden(self):
        return self.q.w1.shape[1]

    @property
    def vocab_size(self):
        return self.q.w2.shape[1]

    def branches(self):
        return [("q", self.q), ("v", self.v), ("k", self.k)]

    def arrays(self):
        return [a for _, mlp in self.branches() for a in mlp.arrays()]


@dataclass
class Grads:
    """Parameter gradients; dc is the gradient of the counterfactual constant."""

    q: Mlp
    v: Mlp
    k: Mlp
    dc: float = 0.0


@dataclass
class TrainConfig:
    epochs: int = 22
    batch_size: int = 256
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    hidden: int = 64
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass
class TrainResult:
    params: EncoderParams
    c: float
    epoch_losses: list


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _init_mlp(rng, in_dim, hidden, vocab):
    return Mlp(
        w1=_glorot(rng, in_dim, hidden),
        b1=np.zeros(hidden),
        w2=_glorot(rng, hidden, vocab),
        b2=np.zeros(vocab),
    )


def init_params(q_dim, v_dim, vocab_size, hidden, rng):
    """Glorot-uniform weights, zero biases; draw order fixed for determinism."""
    return EncoderParams(
        q=_init_mlp(rng, q_dim, hidden, vocab_size),
        v=_init_mlp(rng, v_dim, hidden, vocab_size),
        k=_init_mlp(rng, v_dim + q_dim, hidden, vocab_size),
    )


def _mlp_forward(x, mlp):
    a = np.tanh(x @ mlp.w1 + mlp.b1)
    return a @ mlp.w2 + mlp.b2, a


def _mlp_backward(x, a, dz, mlp):
    """Backprop dz (d loss / d output logits) through one MLP."""
    da = dz @ mlp.w2.T
    dpre = da * (1.0 - a * a)
    return Mlp(w1=x.T @ dpre, b1=dpre.sum(axis=0), w2=a.T @ dz, b2=dz.sum(axis=0))


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def _check_features(qf, vf, params):
    if qf.shape[1] != params.q_dim or vf.shape[1] != params.v_dim:
        raise DimensionError(
            f"feature dims ({qf.shape[1]}, {vf.shape[1]}) do not match "
            f"encoder dims ({params.q_dim}, {params.v_dim})"
        )
    if qf.shape[0] != vf.shape[0]:
        raise DimensionError("question and vision batches differ in length")


def _forward_cached(qf, vf, params):
    zq, aq = _mlp_forward(qf, params.q)
    zv, av = _mlp_forward(vf, params.v)
    xk = np.concatenate([vf, qf], axis=1)
    zk, ak = _mlp_forward(xk, params.k)
    return (zq, zv, zk), (aq, av, ak, xk)


def forward(qf, vf, params):
    """Run all three encoders; returns batched BranchLogits (all present)."""
    qf, vf = _as_batch(qf), _as_batch(vf)
    _check_features(qf, vf, params)
    (zq, zv, zk), _ = _forward_cached(qf, vf, params)
    return BranchLogits(zq=zq, zv=zv, zk=zk)


def log_softmax(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z):
    return np.exp(log_softmax(z))


def _check_labels(labels, vocab_size):
    labels = np.atleast_1d(np.asarray(labels))
    if np.any(labels < 0) or np.any(labels >= vocab_size):
        raise IndexError(f"label out of range [0, {vocab_size})")
    return labels


def loss_cls(branch, fused, labels):
    """Sum of the three cross-entropies (fused, question-only, vision-only).

    For a batch, per-sample losses are summed.
    """
    branch.require_factual()
    fused = _as_batch(fused)
    zq, zv = _as_batch(branch.zq), _as_batch(branch.zv)
    labels = _check_labels(labels, fused.shape[-1])
    rows = np.arange(fused.shape[0])
    total = 0.0
    for z in (fused, zq, zv):
        total -= log_softmax(z)[rows, labels].sum()
    return float(total)


def loss_kl(factual_fused, counterfactual_fused):
    """Sharpness-matching loss between factual and counterfactual distributions.

    Per sample: mean over answers of -p(a|factual) * ln p(a|counterfactual).
    The factual distribution acts as a constant target; only c is trained by
    this loss.
    """
    f = _as_batch(factual_fused)
    g = _as_batch(counterfactual_fused)
    if f.shape != g.shape:
        raise DimensionError(f"fused score shapes differ: {f.shape} vs {g.shape}")
    vocab = f.shape[-1]
    return float(-(softmax(f) * log_softmax(g)).sum() / vocab)


def _counterfactual_fused(zq, c, cfg):
    # the KL counterfactual always holds vision and knowledge at c
    cvec = np.full_like(zq, float(c))
    return fuse(zq, cvec, cvec, cfg), cvec


def cls_loss_grads(qf, vf, labels, params, cfg):
    """Classification loss and its encoder-parameter gradients."""
    qf, vf = _as_batch(qf), _as_batch(vf)
    _check_features(qf, vf, params)
    (zq, zv, zk), (aq, av, ak, xk) = _forward_cached(qf, vf, params)
    labels = _check_labels(labels, params.vocab_size)
    rows = np.arange(qf.shape[0])
    onehot = np.zeros_like(zq)
    onehot[rows, labels] = 1.0

    fused = fuse(zq, zv, zk, cfg)
    loss = 0.0
    for z in (fused, zq, zv):
        loss -= log_softmax(z)[rows, labels].sum()

    dfused = softmax(fused) - onehot
    gq, gv, gk = fuse_grad(zq, zv, zk, cfg)
    dzq = dfused * gq + (softmax(zq) - onehot)
    dzv = dfused * gv + (softmax(zv) - onehot)
    dzk = dfused * gk
    grads = Grads(
        q=_mlp_backward(qf, aq, dzq, params.q),
        v=_mlp_backward(vf, av, dzv, params.v),
        k=_mlp_backward(xk, ak, dzk, params.k),
    )
    return float(loss), grads


def kl_loss_grads(qf, vf, params, c, cfg):
    """KL loss and its gradient, which by routing lands on c alone."""
    qf, vf = _as_batch(qf), _as_batch(vf)
    _check_features(qf, vf, params)
    (zq, zv, zk), _ = _forward_cached(qf, vf, params)
    vocab = params.vocab_size

    fused = fuse(zq, zv, zk, cfg)
    p = softmax(fused)
    hcf, cvec = _counterfactual_fused(zq, c, cfg)
    loss = -(p * log_softmax(hcf)).sum() / vocab

    dhcf = (softmax(hcf) - p) / vocab
    _, gv_cf, gk_cf = fuse_grad(zq, cvec, cvec, cfg)
    dc = float((dhcf * (gv_cf + gk_cf)).sum())
    return float(loss), dc


def loss_final(qf, vf, labels, params, c, cfg):
    """Per-batch objective: sum over samples of loss_cls + loss_kl.

    Returns (loss, Grads); encoder gradients come from loss_cls, dc from
    loss_kl.
    """
    qf = _as_batch(qf)
    if qf.shape[0] == 0:
        raise ContractError("loss_final requires a nonempty batch")
    cls_value, grads = cls_loss_grads(qf, vf, labels, params, cfg)
    kl_value, dc = kl_loss_grads(qf, vf, params, c, cfg)
    grads.dc = dc
    return cls_value + kl_value, grads


class Sgd:
    """SGD with classical momentum over the encoder parameters and c."""

    def __init__(self, params, lr, momentum=0.9):
        self.lr = lr
        self.momentum = momentum
        self.vel = [np.zeros_like(a) for a in params.arrays()]
        self.vel_c = 0.0

    def step(self, params, c, grads):
        """Apply one update in place; returns the new c."""
        gs = [a for g in (grads.q, grads.v, grads.k) for a in g.arrays()]
        for vel, arr, g in zip(self.vel, params.arrays(), gs):
            vel *= self.momentum
            vel += g
            arr -= self.lr * vel
        self.vel_c = self.momentum * self.vel_c + grads.dc
        return c - self.lr * self.vel_c

    def step_c_only(self, c, dc):
        """Update only c (the KL-routing path); encoder parameters untouched."""
        self.vel_c = self.momentum * self.vel_c + dc
        return c - self.lr * self.vel_c


def train(split, cfg):
    """Train on a dataset split; deterministic given cfg.seed.

    Raises NumericalError naming the offending batch if the loss goes
    non-finite.
    """
    qf, vf, labels, _ = split.feature_arrays()
    if qf.shape[0] == 0:
        raise ContractError("cannot train on an empty split")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(
        qf.shape[1], vf.shape[1], split.vocab_size, cfg.hidden, rng
    )
    c = 0.0
    opt = Sgd(params, cfg.learning_rate, cfg.momentum)
    n = qf.shape[0]
    epoch_losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            try:
                loss, grads = loss_final(
                    qf[idx], vf[idx], labels[idx], params, c, cfg.fusion
                )
            except DomainError:
                # diverged parameters produce non-finite logits before a
                # non-finite loss can even be computed
                raise NumericalError(
                    f"non-finite scores at epoch {epoch}, batch {bi}", batch_index=bi
                ) from None
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {bi}", batch_index=bi
                )
            c = opt.step(params, c, grads)
            total += loss
        epoch_losses.append(total)
    return TrainResult(params=params, c=c, epoch_losses=epoch_losses)


def predict_labels(params, c, cfg, qf, vf, rule):
    """Batched answer indices under the given inference rule."""
    from .causal import scores_for_rule

    branch = forward(qf, vf, params)
    scores = scores_for_rule(branch, c, cfg, rule)
    return np.argmax(scores, axis=-1)


def save_checkpoint(path, params, c, cfg, seed):
    """Write a self-describing JSON checkpoint (flattened row-major arrays)."""
    doc = {
        "format": "pwvqa-checkpoint",
        "version": 1,
        "vocab_size": params.vocab_size,
        "q_dim": params.q_dim,
        "v_dim": params.v_dim,
        "hidden": params.hidden,
        "seed": seed,
        "c": c,
        "fusion": {
            "strategy": cfg.strategy.value,
            "alpha": cfg.alpha,
            "epsilon": cfg.epsilon,
            "cf_mode": cfg.cf_mode.value,
        },
        "params": {
            name: {
                "w1": mlp.w1.ravel(order="C").tolist(),
                "b1": mlp.b1.tolist(),
                "w2": mlp.w2.ravel(order="C").tolist(),
                "b2": mlp.b2.tolist(),
            }
            for name, mlp in params.branches()
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (params, c, FusionConfig, seed)."""
    with open(path) as fh:
        doc = json.load(fh)
    vocab, hidden = doc["vocab_size"], doc["hidden"]
    dims = {"q": doc["q_dim"], "v": doc["v_dim"], "k": doc["v_dim"] + doc["q_dim"]}

    def unflatten(name):
        raw = doc["params"][name]
        return Mlp(
            w1=np.array(raw["w1"]).reshape(dims[name], hidden),
            b1=np.array(raw["b1"]),
            w2=np.array(raw["w2"]).reshape(hidden, vocab),
            b2=np.array(raw["b2"]),
        )

    params = EncoderParams(q=unflatten("q"), v=unflatten("v"), k=unflatten("k"))
    fus = doc["fusion"]
    cfg = FusionConfig(
        strategy=Strategy(fus["strategy"]),
        alpha=fus["alpha"],
        epsilon=fus["epsilon"],
        cf_mode=CfMode(fus["cf_mode"]),
    )
    return params, float(doc["c"]), cfg, doc["seed"]

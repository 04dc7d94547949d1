"""Synthetic benchmark generator and dataset/logit interchange files.

The generator instantiates a fixed causal story. A latent annotator-style
variable u (never stored -- it is unobserved by construction) influences the
question type and, jointly with the type, the answer prior. The answer then
causes the observed features: vision features depend on the answer alone,
question features on (answer, type, u). The train split concentrates
probability beta on a type-preferred answer; the test split redraws answers
from a shifted prior, so models that lean on the training prior degrade at
test time.

Sampling order per sample: u, then qtype | u, then label | (qtype, u), then
features. Everything is driven by one seeded generator, so splits are
reproducible bit-for-bit.

File formats are line-delimited JSON with a single header line; floats are
written with 17 significant digits so parsing returns the exact same
doubles.
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np

from .causal import BranchLogits
from .errors import ConfigError, FormatError, ParseError

# Embedding construction scales. The question embedding is dominated by the
# qtype component; the answer leaks only weakly through the question, which
# is what lets the trained question branch fall back on the answer prior.
_QTYPE_SCALE = 1.0
_Q_ANSWER_SCALE = 0.15
_Q_CONFOUNDER_SCALE = 0.6
_V_ANSWER_SCALE = 0.4

# Dirichlet concentrations for the seeded prior tables: mild deviation from
# uniform, so u shifts both the qtype mix and the non-preferred remainder.
_REMAINDER_CONC = 5.0
_QTYPE_CONC = 8.0


class ShiftMode(str, Enum):
    INVERT_PRIOR = "invert"
    UNIFORM_PRIOR = "uniform"


@dataclass(frozen=True)
class GenConfig:
    vocab_size: int = 8
    num_qtypes: int = 3
    q_dim: int = 16
    v_dim: int = 16
    num_confounder_states: int = 4
    train_size: int = 8000
    test_size: int = 4000
    bias_strength: float = 0.85
    shift_mode: ShiftMode = ShiftMode.INVERT_PRIOR
    noise_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.num_qtypes < 1:
            raise ConfigError(f"num_qtypes must be >= 1, got {self.num_qtypes}")
        if self.num_confounder_states < 1:
            raise ConfigError("num_confounder_states must be >= 1")
        if min(self.train_size, self.test_size) < 1:
            raise ConfigError("split sizes must be >= 1")
        if not 0.0 <= self.bias_strength <= 1.0:
            raise ConfigError(f"bias_strength must be in [0, 1], got {self.bias_strength}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.bias_strength == 1.0 and self.vocab_size < self.num_qtypes:
            raise ConfigError(
                "bias_strength = 1 with fewer answers than question types "
                "makes some answers unreachable"
            )


@dataclass
class SyntheticSample:
    sample_id: int
    q_features: np.ndarray
    v_features: np.ndarray
    label: int
    qtype: int


@dataclass
class DatasetSplit:
    """Generated samples plus the realized answer-prior table P(a | qtype)."""

    samples: List[SyntheticSample]
    prior_table: np.ndarray

    _arrays: Optional[tuple] = field(default=None, repr=False, compare=False)

    @property
    def vocab_size(self):
        return self.prior_table.shape[1]

    @property
    def num_qtypes(self):
        return self.prior_table.shape[0]

    def feature_arrays(self):
        """(q_features, v_features, labels, qtypes) stacked over samples."""
        if self._arrays is None:
            self._arrays = (
                np.stack([s.q_features for s in self.samples]),
                np.stack([s.v_features for s in self.samples]),
                np.array([s.label for s in self.samples]),
                np.array([s.qtype for s in self.samples]),
            )
        return self._arrays


def _count_prior(qtypes, labels, num_qtypes, vocab):
    table = np.zeros((num_qtypes, vocab))
    np.add.at(table, (qtypes, labels), 1.0)
    counts = table.sum(axis=1, keepdims=True)
    for t in range(num_qtypes):
        if counts[t, 0] == 0:
            raise ConfigError(
                f"question type {t} absent from generated split; "
                "increase the split size or change the seed"
            )
    return table / counts


def _train_conditional(cfg, rng):
    """P_train(a | qtype, u): mass beta on the qtype-preferred answer."""
    A, T, U = cfg.vocab_size, cfg.num_qtypes, cfg.num_confounder_states
    preferred = np.arange(T) % A
    cond = np.zeros((T, U, A))
    for t in range(T):
        others = np.delete(np.arange(A), preferred[t])
        for u in range(U):
            w = rng.dirichlet(np.full(A - 1, _REMAINDER_CONC))
            cond[t, u, others] = (1.0 - cfg.bias_strength) * w
            cond[t, u, preferred[t]] = cfg.bias_strength
    return cond


def _test_conditional(cfg, train_cond):
    """Shifted test prior: uniform, or train ranking reversed via a linear ramp."""
    A = cfg.vocab_size
    if cfg.shift_mode is ShiftMode.UNIFORM_PRIOR:
        return np.full_like(train_cond, 1.0 / A)
    ramp = np.arange(1, A + 1) / (A * (A + 1) / 2.0)
    cond = np.zeros_like(train_cond)
    for t in range(train_cond.shape[0]):
        for u in range(train_cond.shape[1]):
            order = np.argsort(-train_cond[t, u], kind="stable")
            cond[t, u, order] = ramp  # most train-likely answer gets the least mass
    return cond


def _sample_split(cfg, size, cond, ptype_given_u, tables, rng, id_offset):
    A, T, U = cfg.vocab_size, cfg.num_qtypes, cfg.num_confounder_states
    g_type, g_qa, g_qu, e_v = tables

    u = rng.integers(0, U, size=size)
    cdf_t = np.cumsum(ptype_given_u, axis=1)
    qtypes = np.minimum((rng.random(size)[:, None] > cdf_t[u]).sum(axis=1), T - 1)
    cdf_a = np.cumsum(cond, axis=2)
    labels = np.minimum((rng.random(size)[:, None] > cdf_a[qtypes, u]).sum(axis=1), A - 1)

    qf = (
        _QTYPE_SCALE * g_type[qtypes]
        + _Q_ANSWER_SCALE * g_qa[labels]
        + _Q_CONFOUNDER_SCALE * g_qu[u]
        + cfg.noise_sigma * rng.standard_normal((size, cfg.q_dim))
    )
    vf = e_v[labels] + cfg.noise_sigma * rng.standard_normal((size, cfg.v_dim))

    samples = [
        SyntheticSample(
            sample_id=id_offset + i,
            q_features=qf[i],
            v_features=vf[i],
            label=int(labels[i]),
            qtype=int(qtypes[i]),
        )
        for i in range(size)
    ]
    return DatasetSplit(samples=samples, prior_table=_count_prior(qtypes, labels, T, A))


def generate(cfg):
    """Produce (train, test) splits; deterministic given cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    A, T, U = cfg.vocab_size, cfg.num_qtypes, cfg.num_confounder_states

    tables = (
        rng.standard_normal((T, cfg.q_dim)),
        rng.standard_normal((A, cfg.q_dim)),
        rng.standard_normal((U, cfg.q_dim)),
        _V_ANSWER_SCALE * rng.standard_normal((A, cfg.v_dim)),
    )
    ptype_given_u = np.stack([rng.dirichlet(np.full(T, _QTYPE_CONC)) for _ in range(U)])
    train_cond = _train_conditional(cfg, rng)
    test_cond = _test_conditional(cfg, train_cond)

    train = _sample_split(cfg, cfg.train_size, train_cond, ptype_given_u, tables, rng, 0)
    test = _sample_split(
        cfg, cfg.test_size, test_cond, ptype_given_u, tables, rng, cfg.train_size
    )
    return train, test


# ---------------------------------------------------------------------------
# Line-delimited JSON interchange
# ---------------------------------------------------------------------------


def _fmt(x):
    return format(float(x), ".17g")


def _vec(values):
    return "[" + ", ".join(_fmt(x) for x in values) + "]"


def _header_line(vocab, qtypes):
    return json.dumps({"vocab": int(vocab), "qtypes": [int(t) for t in qtypes]})


def _read_lines(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("file is empty (missing header line)")
    return lines


def _parse_header(lines, path):
    try:
        header = json.loads(lines[0])
        vocab = int(header["vocab"])
        qtypes = [int(t) for t in header["qtypes"]]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad header in {path}: {exc}", line=1) from None
    return vocab, qtypes


def _parse_record(lines, i, path, keys):
    try:
        rec = json.loads(lines[i])
        return {k: rec[k] for k in keys}
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON in {path}: {exc.msg}", line=i + 1) from None
    except KeyError as exc:
        raise ParseError(f"record missing field {exc} in {path}", line=i + 1) from None


def export_logits(records, path, vocab=None, qtypes=None):
    """Write (BranchLogits, label, qtype) records as a logit interchange file.

    vocab/qtypes are inferred from the records when omitted; an empty record
    list requires an explicit vocab.
    """
    records = list(records)
    if vocab is None:
        if not records:
            raise ConfigError("vocab must be given when exporting zero records")
        vocab = len(records[0][0].zq)
    if qtypes is None:
        qtypes = sorted({int(qt) for _, _, qt in records})
    with open(path, "w") as fh:
        fh.write(_header_line(vocab, qtypes) + "\n")
        for i, (branch, label, qtype) in enumerate(records):
            branch.require_factual()
            fh.write(
                f'{{"id": {i}, "qtype": {int(qtype)}, "label": {int(label)}, '
                f'"zq": {_vec(branch.zq)}, "zv": {_vec(branch.zv)}, '
                f'"zk": {_vec(branch.zk)}}}\n'
            )


def import_logits(path):
    """Read a logit interchange file; returns [(BranchLogits, label, qtype), ...]."""
    lines = _read_lines(path)
    vocab, _ = _parse_header(lines, path)
    out = []
    for i in range(1, len(lines)):
        if not lines[i].strip():
            continue
        rec = _parse_record(lines, i, path, ("id", "qtype", "label", "zq", "zv", "zk"))
        vecs = {}
        for key in ("zq", "zv", "zk"):
            vec = np.asarray(rec[key], dtype=np.float64)
            if vec.shape != (vocab,):
                raise FormatError(
                    f"line {i + 1}: {key} has length {vec.shape}, header says {vocab}"
                )
            vecs[key] = vec
        out.append((BranchLogits(**vecs), int(rec["label"]), int(rec["qtype"])))
    return out


def save_split(split, path):
    """Write a dataset split with the same framing as the logits file."""
    with open(path, "w") as fh:
        fh.write(_header_line(split.vocab_size, range(split.num_qtypes)) + "\n")
        for s in split.samples:
            fh.write(
                f'{{"id": {s.sample_id}, "qtype": {s.qtype}, "label": {s.label}, '
                f'"q_features": {_vec(s.q_features)}, '
                f'"v_features": {_vec(s.v_features)}}}\n'
            )


def load_split(path):
    """Read a dataset split file; the prior table is recomputed by counting."""
    lines = _read_lines(path)
    vocab, qtypes = _parse_header(lines, path)
    samples = []
    q_dim = v_dim = None
    for i in range(1, len(lines)):
        if not lines[i].strip():
            continue
        rec = _parse_record(
            lines, i, path, ("id", "qtype", "label", "q_features", "v_features")
        )
        qf = np.asarray(rec["q_features"], dtype=np.float64)
        vf = np.asarray(rec["v_features"], dtype=np.float64)
        if q_dim is None:
            q_dim, v_dim = qf.shape[0], vf.shape[0]
        elif qf.shape[0] != q_dim or vf.shape[0] != v_dim:
            raise FormatError(f"line {i + 1}: inconsistent feature dimensions")
        if not 0 <= int(rec["label"]) < vocab:
            raise FormatError(f"line {i + 1}: label outside header vocabulary")
        samples.append(
            SyntheticSample(
                sample_id=int(rec["id"]),
                q_features=qf,
                v_features=vf,
                label=int(rec["label"]),
                qtype=int(rec["qtype"]),
            )
        )
    if not samples:
        raise FormatError(f"{path} contains no samples")
    labels = np.array([s.label for s in samples])
    types = np.array([s.qtype for s in samples])
    return DatasetSplit(
        samples=samples, prior_table=_count_prior(types, labels, len(qtypes), vocab)
    )

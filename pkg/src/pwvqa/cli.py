"""Command-line harness: data generation, training, evaluation, sweeps, re-fusion.

Subcommands:
    gen-data   write train/test splits of the synthetic benchmark
    train      train the three-branch model, write checkpoint + loss trace
    eval       score a checkpoint on a split under one or more inference rules
    sweep      Cartesian (alpha, epsilon, seed) grid of train+eval cells
    fuse       re-score an exported logits file without training

Every command is deterministic given its flags; reruns produce byte-identical
output files. Exit codes: 0 success, 2 usage or missing input, 3 numerical
failure, 4 shape or vocabulary mismatch.

Results CSV column order (fixed):
    strategy, alpha, epsilon, cf_mode, seed, rule, acc_all,
    acc_qtype_0..T-1, dist_0..A-1, js_divergence
"""

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from itertools import product
from pathlib import Path

import numpy as np

from . import causal, datagen, metrics, model
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    FormatError,
    NumericalError,
    ParseError,
    PwvqaError,
    VocabMismatchError,
)
from .fusion import (
    DEFAULT_ALPHA,
    DEFAULT_EPSILON,
    CfMode,
    FusionConfig,
    Strategy,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_SHAPE = 4

_STRATEGIES = {s.value: s for s in Strategy}
_CF_MODES = {m.value: m for m in CfMode}
_SHIFTS = {"invert": datagen.ShiftMode.INVERT_PRIOR, "uniform": datagen.ShiftMode.UNIFORM_PRIOR}


def _fmt(x):
    return repr(float(x))


def _resolve_seed(value):
    """Explicit flag wins; PWVQA_SEED is the fallback; default 0."""
    if value is not None:
        return value
    env = os.environ.get("PWVQA_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"PWVQA_SEED={env!r} is not an integer") from None


def _split_path(data, name):
    p = Path(data)
    return p / name if p.is_dir() else p


def _fusion_config(args):
    return FusionConfig(
        strategy=_STRATEGIES[args.strategy],
        alpha=args.alpha,
        epsilon=args.epsilon,
        cf_mode=_CF_MODES[args.cf_mode],
    )


def _parse_rules(spec):
    rules = [r.strip() for r in spec.split(",") if r.strip()]
    for r in rules:
        if r not in causal.INFERENCE_RULES:
            raise ConfigError(
                f"unknown rule {r!r}; choices: {', '.join(causal.INFERENCE_RULES)}"
            )
    if not rules:
        raise ConfigError("at least one inference rule is required")
    return rules


def _record_columns(num_qtypes, vocab):
    return (
        ["strategy", "alpha", "epsilon", "cf_mode", "seed", "rule", "acc_all"]
        + [f"acc_qtype_{t}" for t in range(num_qtypes)]
        + [f"dist_{a}" for a in range(vocab)]
        + ["js_divergence"]
    )


def _record_row(cfg, seed, rule, report):
    return (
        [cfg.strategy.value, _fmt(cfg.alpha), _fmt(cfg.epsilon), cfg.cf_mode.value,
         str(seed), rule, _fmt(report.acc_all)]
        + [_fmt(x) for x in report.acc_per_qtype]
        + [_fmt(x) for x in report.answer_distribution]
        + [_fmt(report.js_divergence_to_test)]
    )


def _write_csv(path, columns, rows):
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _write_histogram(path, rules_reports, label_dist):
    with open(path, "w") as fh:
        fh.write("rule,answer,predicted_fraction,label_fraction\n")
        for rule, report in rules_reports:
            for a, frac in enumerate(report.answer_distribution):
                fh.write(f"{rule},{a},{_fmt(frac)},{_fmt(label_dist[a])}\n")


def _print_prior(name, table):
    print(f"{name} prior P(answer | qtype):")
    for t, row in enumerate(table):
        print(f"  qtype {t}: " + " ".join(f"{x:.4f}" for x in row))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args):
    cfg = datagen.GenConfig(
        vocab_size=args.vocab,
        num_qtypes=args.qtypes,
        q_dim=args.q_dim,
        v_dim=args.v_dim,
        num_confounder_states=args.confounders,
        train_size=args.train_size,
        test_size=args.test_size,
        bias_strength=args.beta,
        shift_mode=_SHIFTS[args.shift],
        noise_sigma=args.noise,
        seed=_resolve_seed(args.seed),
    )
    train, test = datagen.generate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    datagen.save_split(train, out / "train.jsonl")
    datagen.save_split(test, out / "test.jsonl")
    _print_prior("train", train.prior_table)
    _print_prior("test", test.prior_table)
    print(f"wrote {out / 'train.jsonl'} ({len(train.samples)} samples)")
    print(f"wrote {out / 'test.jsonl'} ({len(test.samples)} samples)")
    return EXIT_OK


def cmd_train(args):
    split = datagen.load_split(_split_path(args.data, "train.jsonl"))
    seed = _resolve_seed(args.seed)
    tcfg = model.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=seed,
        hidden=args.hidden,
        fusion=_fusion_config(args),
    )
    result = model.train(split, tcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save_checkpoint(out / "checkpoint.json", result.params, result.c, tcfg.fusion, seed)
    n = len(split.samples)
    with open(out / "trace.csv", "w") as fh:
        fh.write("epoch,total_loss,mean_loss\n")
        for epoch, total in enumerate(result.epoch_losses):
            fh.write(f"{epoch},{_fmt(total)},{_fmt(total / n)}\n")
    print(f"wrote {out / 'checkpoint.json'} (c = {result.c:.6g})")
    print(f"wrote {out / 'trace.csv'} ({len(result.epoch_losses)} epochs)")
    return EXIT_OK


def _evaluate_rules(params, c, fcfg, split, rules):
    qf, vf, _, _ = split.feature_arrays()
    reports = []
    for rule in rules:
        preds = model.predict_labels(params, c, fcfg, qf, vf, rule)
        by_id = {s.sample_id: int(p) for s, p in zip(split.samples, preds)}
        reports.append((rule, metrics.evaluate(lambda s: by_id[s.sample_id], split)))
    return reports


def cmd_eval(args):
    params, c, fcfg, seed = model.load_checkpoint(args.ckpt)
    split = datagen.load_split(_split_path(args.data, "test.jsonl"))
    if split.vocab_size != params.vocab_size:
        raise VocabMismatchError(
            f"checkpoint vocabulary {params.vocab_size} != data vocabulary {split.vocab_size}"
        )
    rules = _parse_rules(args.rule)
    reports = _evaluate_rules(params, c, fcfg, split, rules)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    columns = _record_columns(split.num_qtypes, split.vocab_size)
    rows = [_record_row(fcfg, seed, rule, rep) for rule, rep in reports]
    _write_csv(out / "results.csv", columns, rows)
    _, _, labels, _ = split.feature_arrays()
    label_dist = np.bincount(labels, minlength=split.vocab_size) / len(labels)
    _write_histogram(out / "answer_hist.csv", reports, label_dist)
    for rule, rep in reports:
        print(f"{rule}: acc_all = {rep.acc_all:.4f}, js = {rep.js_divergence_to_test:.4f}")
    print(f"wrote {out / 'results.csv'} ({len(rows)} rows)")
    return EXIT_OK


def _sweep_cell(payload):
    """One grid cell: train with the cell's config, evaluate all rules."""
    (train_path, test_path, alpha, epsilon, seed, strategy, cf_mode, rules,
     epochs, batch, lr, hidden) = payload
    fcfg = FusionConfig(
        strategy=_STRATEGIES[strategy],
        alpha=alpha,
        epsilon=epsilon,
        cf_mode=_CF_MODES[cf_mode],
    )
    tcfg = model.TrainConfig(
        epochs=epochs, batch_size=batch, learning_rate=lr, seed=seed,
        hidden=hidden, fusion=fcfg,
    )
    train_split = datagen.load_split(train_path)
    test_split = datagen.load_split(test_path)
    result = model.train(train_split, tcfg)
    reports = _evaluate_rules(result.params, result.c, fcfg, test_split, rules)
    return [_record_row(fcfg, seed, rule, rep) for rule, rep in reports], (
        test_split.num_qtypes, test_split.vocab_size,
    )


def _parse_grid_range(spec):
    try:
        lo, hi, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ConfigError(f"--grid-alpha expects lo:hi:step, got {spec!r}") from None
    if step <= 0 or hi < lo:
        raise ConfigError(f"invalid grid range {spec!r}")
    count = int(round((hi - lo) / step)) + 1
    values = [round(lo + i * step, 10) for i in range(count)]
    return [v for v in values if v <= hi + 1e-9]


def _parse_float_list(spec, flag):
    try:
        values = [float(x) for x in spec.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{flag} expects a comma-separated float list, got {spec!r}") from None
    if not values:
        raise ConfigError(f"{flag} is empty")
    return values


def cmd_sweep(args):
    if args.grid_alpha is None and args.grid_epsilon is None:
        raise ConfigError("sweep requires --grid-alpha and/or --grid-epsilon")
    alphas = _parse_grid_range(args.grid_alpha) if args.grid_alpha else [args.alpha]
    epsilons = (
        _parse_float_list(args.grid_epsilon, "--grid-epsilon")
        if args.grid_epsilon
        else [args.epsilon]
    )
    if args.seeds is not None:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        if not seeds:
            raise ConfigError("--seeds is empty")
    else:
        seeds = [_resolve_seed(args.seed)]
    rules = _parse_rules(args.rule)

    train_path = _split_path(args.data, "train.jsonl")
    test_path = _split_path(args.data, "test.jsonl")
    for p in (train_path, test_path):
        if not Path(p).exists():
            raise FileNotFoundError(f"no such file: {p}")

    payloads = [
        (str(train_path), str(test_path), alpha, epsilon, seed, args.strategy,
         args.cf_mode, rules, args.epochs, args.batch, args.lr, args.hidden)
        for alpha, epsilon, seed in product(alphas, epsilons, seeds)
    ]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_cell, payloads))
    else:
        results = [_sweep_cell(p) for p in payloads]

    rows = [row for cell_rows, _ in results for row in cell_rows]
    num_qtypes, vocab = results[0][1]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "sweep.csv", _record_columns(num_qtypes, vocab), rows)
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} rows)")
    return EXIT_OK


def cmd_fuse(args):
    records = datagen.import_logits(args.logits)
    if not records:
        raise ConfigError(f"{args.logits} contains no records")
    fcfg = _fusion_config(args)
    c = args.c
    labels = np.array([label for _, label, _ in records])
    qtypes = np.array([qt for _, _, qt in records])
    num_qtypes = int(qtypes.max()) + 1
    vocab = len(records[0][0].zq)
    rules = _parse_rules(args.rule)

    zq = np.stack([b.zq for b, _, _ in records])
    zv = np.stack([b.zv for b, _, _ in records])
    zk = np.stack([b.zk for b, _, _ in records])
    batch = causal.BranchLogits(zq=zq, zv=zv, zk=zk)

    reports = []
    for rule in rules:
        preds = np.argmax(causal.scores_for_rule(batch, c, fcfg, rule), axis=-1)
        reports.append(
            (rule, metrics.evaluate_predictions(preds, labels, qtypes, vocab, num_qtypes))
        )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [_record_row(fcfg, _resolve_seed(args.seed), rule, rep) for rule, rep in reports]
    _write_csv(out / "results.csv", _record_columns(num_qtypes, vocab), rows)
    label_dist = np.bincount(labels, minlength=vocab) / len(labels)
    _write_histogram(out / "answer_hist.csv", reports, label_dist)
    for rule, rep in reports:
        print(f"{rule}: acc_all = {rep.acc_all:.4f}, js = {rep.js_divergence_to_test:.4f}")
    print(f"wrote {out / 'results.csv'} ({len(rows)} rows)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_fusion_flags(p):
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA,
                   help="exponent of the explain-away fusion (>= 1)")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON,
                   help="log stabilizer added inside the fusion logarithm")
    p.add_argument("--strategy", choices=sorted(_STRATEGIES), default="ea")
    p.add_argument("--cf-mode", choices=sorted(_CF_MODES), default="vk",
                   help="branches replaced by c in the counterfactual pass")


def _add_train_flags(p):
    p.add_argument("--epochs", type=int, default=22)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden", type=int, default=64)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pwvqa",
        description="Counterfactual debiasing toolkit: explain-away fusion and "
                    "total-indirect-effect inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic benchmark")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--vocab", type=int, default=8)
    p.add_argument("--qtypes", type=int, default=3)
    p.add_argument("--q-dim", type=int, default=16)
    p.add_argument("--v-dim", type=int, default=16)
    p.add_argument("--confounders", type=int, default=4)
    p.add_argument("--train-size", type=int, default=8000)
    p.add_argument("--test-size", type=int, default=4000)
    p.add_argument("--beta", type=float, default=0.85,
                   help="train-split mass on the qtype-preferred answer")
    p.add_argument("--shift", choices=sorted(_SHIFTS), default="invert")
    p.add_argument("--noise", type=float, default=0.5)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the three-branch model")
    p.add_argument("--data", required=True, help="dataset directory or train file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    _add_train_flags(p)
    _add_fusion_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint under inference rules")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory or test file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--rule", default="tie",
                   help="comma-separated subset of {tie,te,fused,q-only}")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid of train+eval cells over alpha/epsilon/seeds")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--grid-alpha", default=None, metavar="LO:HI:STEP")
    p.add_argument("--grid-epsilon", default=None, metavar="E1,E2,...")
    p.add_argument("--seeds", default=None, help="comma-separated training seeds")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--rule", default="tie")
    p.add_argument("--workers", type=int, default=1)
    _add_train_flags(p)
    _add_fusion_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fuse", help="re-score an exported logits file (no training)")
    p.add_argument("--logits", required=True, help="logits interchange file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--c", type=float, default=0.0,
                   help="counterfactual constant used for absent branches")
    p.add_argument("--rule", default="tie")
    p.add_argument("--seed", type=int, default=None)
    _add_fusion_flags(p)
    p.set_defaults(func=cmd_fuse)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DimensionError, FormatError, VocabMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except (ConfigError, ContractError, DomainError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

import math

import mpmath as mp
import numpy as np
import pytest

from pwvqa import model
from pwvqa.causal import BranchLogits
from pwvqa.datagen import DatasetSplit, SyntheticSample
from pwvqa.errors import ConfigError, ContractError, DimensionError, NumericalError
from pwvqa.fusion import CfMode, FusionConfig, Strategy, fuse


def _random_params(rng, q_dim=4, v_dim=4, hidden=6, vocab=5, scale=0.6):
    def mlp(in_dim):
        return model.Mlp(
            w1=rng.normal(scale=scale, size=(in_dim, hidden)),
            b1=rng.normal(scale=scale, size=hidden),
            w2=rng.normal(scale=scale, size=(hidden, vocab)),
            b2=rng.normal(scale=scale, size=vocab),
        )

    return model.EncoderParams(q=mlp(q_dim), v=mlp(v_dim), k=mlp(v_dim + q_dim))


def _split_from_arrays(qf, vf, labels, qtypes, vocab, num_qtypes):
    samples = [
        SyntheticSample(i, qf[i], vf[i], int(labels[i]), int(qtypes[i]))
        for i in range(len(labels))
    ]
    table = np.zeros((num_qtypes, vocab))
    np.add.at(table, (qtypes, labels), 1.0)
    table /= np.maximum(table.sum(axis=1, keepdims=True), 1.0)
    return DatasetSplit(samples=samples, prior_table=table)


def _tiny_split(rng, n=12, vocab=4, q_dim=3, v_dim=3, num_qtypes=2):
    labels = rng.integers(0, vocab, size=n)
    qtypes = rng.integers(0, num_qtypes, size=n)
    qf = rng.normal(size=(n, q_dim))
    vf = rng.normal(size=(n, v_dim))
    return _split_from_arrays(qf, vf, labels, qtypes, vocab, num_qtypes)


class TestForward:
    def test_zero_params_give_zero_logits(self):
        p = _random_params(np.random.default_rng(0))
        for arr in p.arrays():
            arr[...] = 0.0
        out = model.forward(np.ones((2, 4)), np.ones((2, 4)), p)
        for z in (out.zq, out.zv, out.zk):
            np.testing.assert_array_equal(z, 0.0)

    def test_hand_checked_logits(self):
        # w1 = 0 and b1 = atanh(0.5) pin every hidden unit at 0.5, so each
        # logit is b2 + 0.5 * (column sum of w2)
        p = _random_params(np.random.default_rng(1))
        for mlp in (p.q, p.v, p.k):
            mlp.w1[...] = 0.0
            mlp.b1[...] = math.atanh(0.5)
        out = model.forward(np.ones((1, 4)), np.ones((1, 4)), p)
        for z, mlp in ((out.zq, p.q), (out.zv, p.v), (out.zk, p.k)):
            np.testing.assert_allclose(z[0], mlp.b2 + 0.5 * mlp.w2.sum(axis=0), atol=1e-12)

    def test_matches_independent_matmul(self):
        rng = np.random.default_rng(2)
        p = _random_params(rng)
        qf = rng.normal(size=(5, 4))
        vf = rng.normal(size=(5, 4))
        out = model.forward(qf, vf, p)

        def reimpl(x, mlp):
            hidden = np.tanh(np.einsum("ni,ih->nh", x, mlp.w1) + mlp.b1)
            return np.einsum("nh,ho->no", hidden, mlp.w2) + mlp.b2

        np.testing.assert_allclose(out.zq, reimpl(qf, p.q), atol=1e-12)
        np.testing.assert_allclose(out.zv, reimpl(vf, p.v), atol=1e-12)
        np.testing.assert_allclose(out.zk, reimpl(np.concatenate([vf, qf], axis=1), p.k), atol=1e-12)

    def test_dimension_mismatch(self):
        p = _random_params(np.random.default_rng(3))
        with pytest.raises(DimensionError):
            model.forward(np.ones((2, 5)), np.ones((2, 4)), p)


class TestLossValues:
    def test_cls_uniform(self):
        z = np.zeros((1, 4))
        b = BranchLogits(zq=z, zv=z, zk=z)
        assert abs(model.loss_cls(b, z, 0) - 3 * math.log(4)) < 1e-12

    def test_cls_saturated_fused(self):
        fused = np.array([[40.0, 0.0]])
        z = np.zeros((1, 2))
        b = BranchLogits(zq=z, zv=z, zk=z)
        assert abs(model.loss_cls(b, fused, 0) - 2 * math.log(2)) < 1e-9

    def test_cls_derived_against_mpmath(self):
        rng = np.random.default_rng(4)
        zq, zv, fused = rng.normal(size=(3, 5))
        b = BranchLogits(zq=zq, zv=zv, zk=rng.normal(size=5))
        got = model.loss_cls(b, fused, 2)

        def ce(vec, label):
            exps = [mp.e ** mp.mpf(x) for x in vec]
            return -mp.log(exps[label] / mp.fsum(exps))

        expected = ce(fused, 2) + ce(zq, 2) + ce(zv, 2)
        assert abs(got - float(expected)) < 1e-12

    def test_cls_label_out_of_range(self):
        z = np.zeros((1, 4))
        b = BranchLogits(zq=z, zv=z, zk=z)
        with pytest.raises(IndexError):
            model.loss_cls(b, z, 4)
        with pytest.raises(IndexError):
            model.loss_cls(b, z, -1)

    def test_kl_uniform(self):
        z = np.zeros((1, 4))
        assert abs(model.loss_kl(z, z) - math.log(4) / 4) < 1e-12

    def test_kl_saturated_vs_uniform(self):
        factual = np.array([[40.0, 0.0]])
        counterfactual = np.log(np.array([[0.5, 0.5]]))
        assert abs(model.loss_kl(factual, counterfactual) - math.log(2) / 2) < 1e-9

    def test_kl_saturated_vs_skewed(self):
        factual = np.array([[40.0, 0.0]])
        counterfactual = np.log(np.array([[0.1, 0.9]]))
        assert abs(model.loss_kl(factual, counterfactual) - math.log(10) / 2) < 1e-9

    def test_kl_shape_mismatch(self):
        with pytest.raises(DimensionError):
            model.loss_kl(np.zeros((1, 4)), np.zeros((1, 3)))


class TestLossFinal:
    def test_single_sample_is_cls_plus_kl(self):
        rng = np.random.default_rng(5)
        p = _random_params(rng)
        qf, vf = rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
        cfg = FusionConfig()
        c = 0.2
        loss, _ = model.loss_final(qf, vf, [1], p, c, cfg)
        branch = model.forward(qf, vf, p)
        fused = fuse(branch.zq, branch.zv, branch.zk, cfg)
        cvec = np.full_like(branch.zq, c)
        expected = model.loss_cls(branch, fused, [1]) + model.loss_kl(
            fused, fuse(branch.zq, cvec, cvec, cfg)
        )
        assert abs(loss - expected) < 1e-12

    def test_duplicated_sample_doubles_loss(self):
        rng = np.random.default_rng(6)
        p = _random_params(rng)
        qf, vf = rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
        one, _ = model.loss_final(qf, vf, [2], p, 0.1, FusionConfig())
        two, _ = model.loss_final(
            np.repeat(qf, 2, axis=0), np.repeat(vf, 2, axis=0), [2, 2], p, 0.1, FusionConfig()
        )
        assert abs(two - 2 * one) < 1e-12

    def test_empty_batch_rejected(self):
        p = _random_params(np.random.default_rng(7))
        with pytest.raises(ContractError):
            model.loss_final(np.zeros((0, 4)), np.zeros((0, 4)), [], p, 0.0, FusionConfig())


def _flatten(params):
    return np.concatenate([a.ravel() for a in params.arrays()])


def _set_flat(params, theta):
    i = 0
    for a in params.arrays():
        a[...] = theta[i : i + a.size].reshape(a.shape)
        i += a.size


def _objective(theta, params, qf, vf, labels, cfg, frozen_kl):
    """Independent value of the routed objective at flat parameters theta.

    The KL term's inputs other than c are detached by the routing rule, so
    for parameter perturbations it is the constant frozen_kl.
    """
    saved = _flatten(params)
    _set_flat(params, theta)
    try:
        def head(x, mlp):
            hidden = np.tanh(np.einsum("ni,ih->nh", x, mlp.w1) + mlp.b1)
            return np.einsum("nh,ho->no", hidden, mlp.w2) + mlp.b2

        zq = head(qf, params.q)
        zv = head(vf, params.v)
        zk = head(np.concatenate([vf, qf], axis=1), params.k)
        fused = fuse(zq, zv, zk, cfg)

        def ce(z):
            shifted = z - z.max(axis=1, keepdims=True)
            lsm = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
            return -lsm[np.arange(len(labels)), labels].sum()

        return ce(fused) + ce(zq) + ce(zv) + frozen_kl
    finally:
        _set_flat(params, saved)


def _kl_objective(c_value, zq_base, p_base, cfg):
    cvec = np.full_like(zq_base, c_value)
    hcf = fuse(zq_base, cvec, cvec, cfg)
    shifted = hcf - hcf.max(axis=1, keepdims=True)
    lsm = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return -(p_base * lsm).sum() / zq_base.shape[1]


class TestGradients:
    @pytest.mark.parametrize("strategy", [Strategy.EA, Strategy.SUM])
    def test_loss_final_matches_finite_differences(self, strategy):
        cfg = FusionConfig(strategy=strategy, alpha=1.5, epsilon=5e-11)
        rng = np.random.default_rng(17)
        qf = rng.normal(size=(3, 4))
        vf = rng.normal(size=(3, 4))
        labels = np.array([0, 3, 1])
        step = 1e-5

        for _ in range(10):
            params = _random_params(rng)
            assert _flatten(params).size <= 500
            c = float(rng.normal())
            _, grads = model.loss_final(qf, vf, labels, params, c, cfg)
            analytic = np.concatenate(
                [a.ravel() for g in (grads.q, grads.v, grads.k) for a in g.arrays()]
            )

            # freeze the detached KL inputs at the base point
            branch = model.forward(qf, vf, params)
            p_base = model.softmax(fuse(branch.zq, branch.zv, branch.zk, cfg))
            frozen_kl = _kl_objective(c, branch.zq, p_base, cfg)

            theta = _flatten(params)
            numeric = np.empty_like(theta)
            for i in range(theta.size):
                hi, lo = theta.copy(), theta.copy()
                hi[i] += step
                lo[i] -= step
                numeric[i] = (
                    _objective(hi, params, qf, vf, labels, cfg, frozen_kl)
                    - _objective(lo, params, qf, vf, labels, cfg, frozen_kl)
                ) / (2 * step)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)

            dc_numeric = (
                _kl_objective(c + step, branch.zq, p_base, cfg)
                - _kl_objective(c - step, branch.zq, p_base, cfg)
            ) / (2 * step)
            np.testing.assert_allclose(grads.dc, dc_numeric, rtol=1e-4, atol=1e-8)

    def test_kl_step_is_routed_to_c_only(self):
        rng = np.random.default_rng(18)
        params = _random_params(rng)
        qf, vf = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
        cfg = FusionConfig()
        before = [a.tobytes() for a in params.arrays()]

        _, dc = model.kl_loss_grads(qf, vf, params, 0.3, cfg)
        opt = model.Sgd(params, lr=1e-2)
        new_c = opt.step_c_only(0.3, dc)

        after = [a.tobytes() for a in params.arrays()]
        assert before == after  # bit-identical encoders
        assert dc != 0.0
        assert new_c != 0.3


class TestTraining:
    def test_one_epoch_one_sample_is_one_step(self):
        rng = np.random.default_rng(20)
        split = _tiny_split(rng, n=1)
        cfg = model.TrainConfig(epochs=1, batch_size=1, seed=5, hidden=4)
        result = model.train(split, cfg)

        qf, vf, labels, _ = split.feature_arrays()
        ref_rng = np.random.default_rng(5)
        ref = model.init_params(qf.shape[1], vf.shape[1], split.vocab_size, 4, ref_rng)
        ref_rng.permutation(1)  # mirror the loop's shuffle draw
        _, grads = model.loss_final(qf, vf, labels, ref, 0.0, cfg.fusion)
        opt = model.Sgd(ref, cfg.learning_rate, cfg.momentum)
        c = opt.step(ref, 0.0, grads)

        for got, want in zip(result.params.arrays(), ref.arrays()):
            np.testing.assert_array_equal(got, want)
        assert result.c == c

    def test_deterministic_rerun(self):
        split = _tiny_split(np.random.default_rng(21), n=20)
        cfg = model.TrainConfig(epochs=3, batch_size=8, seed=9, hidden=4)
        a = model.train(split, cfg)
        b = model.train(split, cfg)
        assert a.epoch_losses == b.epoch_losses
        for x, y in zip(a.params.arrays(), b.params.arrays()):
            assert x.tobytes() == y.tobytes()
        assert a.c == b.c

    def test_loss_decreases_on_separable_set(self):
        # two question types, labels cleanly encoded in the vision features
        rng = np.random.default_rng(22)
        n, vocab = 200, 4
        labels = rng.integers(0, vocab, size=n)
        qtypes = rng.integers(0, 2, size=n)
        qf = np.eye(4)[qtypes % 4] * 2.0
        vf = np.eye(vocab)[labels] * 2.0
        split = _split_from_arrays(qf, vf, labels, qtypes, vocab, 2)
        cfg = model.TrainConfig(epochs=5, batch_size=32, learning_rate=1e-3, seed=1, hidden=8)
        losses = model.train(split, cfg).epoch_losses
        assert all(losses[i + 1] < losses[i] for i in range(4))

    def test_non_finite_loss_aborts_with_batch_index(self):
        split = _tiny_split(np.random.default_rng(23), n=8)
        cfg = model.TrainConfig(epochs=4, batch_size=8, learning_rate=1e308, seed=2, hidden=4)
        with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NumericalError) as err:
            model.train(split, cfg)
        assert err.value.batch_index is not None
        assert "batch" in str(err.value)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            model.TrainConfig(epochs=0)
        with pytest.raises(ConfigError):
            model.TrainConfig(batch_size=0)
        with pytest.raises(ConfigError):
            model.TrainConfig(learning_rate=0.0)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        split = _tiny_split(np.random.default_rng(24), n=16)
        cfg = model.TrainConfig(epochs=2, batch_size=8, seed=3, hidden=4)
        result = model.train(split, cfg)
        path = tmp_path / "ckpt.json"
        model.save_checkpoint(path, result.params, result.c, cfg.fusion, cfg.seed)
        params, c, fusion_cfg, seed = model.load_checkpoint(path)
        for got, want in zip(params.arrays(), result.params.arrays()):
            np.testing.assert_array_equal(got, want)
        assert c == result.c
        assert fusion_cfg == cfg.fusion
        assert seed == 3

    def test_checkpoint_is_self_describing(self, tmp_path):
        import json

        p = _random_params(np.random.default_rng(25))
        path = tmp_path / "ckpt.json"
        model.save_checkpoint(path, p, 0.5, FusionConfig(), 7)
        doc = json.loads(path.read_text())
        assert doc["vocab_size"] == p.vocab_size
        assert doc["q_dim"] == p.q_dim and doc["v_dim"] == p.v_dim
        assert doc["hidden"] == p.hidden
        assert set(doc["params"]) == {"q", "v", "k"}

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from hlstcm import colstm, lstm, model, training
from hlstcm.numerics import ShapeError

import reference

DESK = dict(p=3, d_x=3, d_sp=4, d_proj=3, d_co=4, k=3, T=4)


def desk_config(**over):
    return model.HlstcmConfig(**{**DESK, **over})


def random_sample(rng, config, label=None, present=None):
    return model.Sample(
        rng.normal(size=(config.p, config.T, config.d_x)),
        int(rng.integers(config.k)) if label is None else label,
        present=present, id="t")


def zeroed(params):
    for _, arr in model.named_tensors(params):
        arr[:] = 0.0
    return params


class TestConfig:
    def test_two_group_defaults(self):
        c = desk_config(variant="two-group")
        assert c.group_a == (0, 1)
        assert c.group_b == (2,)
        assert c.d_top == c.d_co

    def test_two_group_empty_group_rejected(self):
        with pytest.raises(ValueError):
            desk_config(variant="two-group", group_a=(0, 1, 2))
        with pytest.raises(ValueError):
            desk_config(variant="two-group", group_a=(5,))

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            desk_config(variant="b9")

    def test_b1_cumulative_rejected(self):
        with pytest.raises(ValueError):
            desk_config(variant="b1", cumulative_loss=True)

    def test_dict_round_trip(self):
        c = desk_config(variant="two-group", group_a=(0, 2))
        assert model.HlstcmConfig.from_dict(c.to_dict()) == c

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            model.HlstcmConfig.from_dict({"p": 2, "bogus": 1})

    def test_bad_dims(self):
        with pytest.raises(ValueError):
            desk_config(k=1)
        with pytest.raises(ValueError):
            desk_config(p=0)


class TestSample:
    def test_needs_one_present_slot(self):
        with pytest.raises(ValueError):
            model.Sample(np.zeros((2, 3, 4)), 0, present=np.array([False, False]))

    def test_shape_check_against_config(self):
        s = model.Sample(np.zeros((2, 4, 3)), 0)
        with pytest.raises(ShapeError):
            s.check_against(desk_config())

    def test_label_range(self):
        s = model.Sample(np.zeros((DESK["p"], DESK["T"], DESK["d_x"])), 7)
        with pytest.raises(ValueError):
            s.check_against(desk_config())


class TestInitAndNaming:
    def test_named_tensor_order_is_stable(self):
        c = desk_config()
        params = model.init_model_params(c, seed=0)
        names = [n for n, _ in model.named_tensors(params)]
        assert names[:4] == ["sp.0.W_x", "sp.0.W_h", "sp.0.b", "sp.1.W_x"]
        assert "proj.W" in names and "co.0.b_pi" in names
        assert names[-2:] == ["head.0.W", "head.0.b"]

    def test_param_count(self):
        c = desk_config()
        params = model.init_model_params(c, seed=0)
        assert model.param_count(params) == sum(a.size for _, a in model.named_tensors(params))

    def test_deterministic(self):
        c = desk_config(variant="two-group")
        a = model.init_model_params(c, seed=3)
        b = model.init_model_params(c, seed=3)
        for (na, ta), (nb, tb) in zip(model.named_tensors(a), model.named_tensors(b)):
            assert na == nb
            assert_array_equal(ta, tb)

    def test_variant_structures(self):
        assert model.init_model_params(desk_config(variant="b1"), 0).sp == []
        assert model.init_model_params(desk_config(variant="b2"), 0).top is not None
        assert len(model.init_model_params(desk_config(variant="b3"), 0).heads) == 3
        assert len(model.init_model_params(desk_config(variant="two-group"), 0).co) == 2
        shared = model.init_model_params(desk_config(share_sp_params=True), 0)
        assert len(shared.sp) == 1


class TestForward:
    @pytest.mark.parametrize("variant", model.VARIANTS)
    def test_zero_params_uniform_probs(self, variant):
        c = desk_config(variant=variant)
        params = zeroed(model.init_model_params(c, seed=0))
        rng = np.random.default_rng(0)
        probs, _ = model.forward(params, c, random_sample(rng, c))
        assert_allclose(probs, np.full(c.k, 1.0 / c.k), atol=1e-12)

    @pytest.mark.parametrize("variant", model.VARIANTS)
    def test_probs_sum_to_one(self, variant):
        c = desk_config(variant=variant)
        params = model.init_model_params(c, seed=1)
        rng = np.random.default_rng(1)
        probs, _ = model.forward(params, c, random_sample(rng, c))
        assert abs(probs.sum() - 1.0) < 1e-12
        assert np.all(probs >= 0)

    def test_matches_reference_end_to_end(self):
        rng = np.random.default_rng(41)
        c = model.HlstcmConfig(p=2, d_x=3, d_sp=4, d_proj=3, d_co=4, k=3, T=4)
        params = model.init_model_params(c, seed=41)
        s = random_sample(rng, c)
        probs, _ = model.forward(params, c, s)
        ref = reference.model_forward_hlstcm(params, c, s.features)
        assert_allclose(probs, ref, atol=1e-13)

    def test_matches_reference_without_projection(self):
        rng = np.random.default_rng(42)
        c = model.HlstcmConfig(p=2, d_x=3, d_sp=4, d_proj=0, d_co=4, k=3, T=4)
        params = model.init_model_params(c, seed=42)
        s = random_sample(rng, c)
        probs, _ = model.forward(params, c, s)
        ref = reference.model_forward_hlstcm(params, c, s.features)
        assert_allclose(probs, ref, atol=1e-13)

    def test_two_layer_stack_reduction(self):
        # p=1 with clamped cell gates is a plain two-layer LSTM stack
        rng = np.random.default_rng(5)
        c = model.HlstcmConfig(p=1, d_x=3, d_sp=4, d_proj=0, d_co=4, k=3, T=6)
        params = model.init_model_params(c, seed=5)
        s = random_sample(rng, c)
        probs, tape = model.forward(params, c, s, clamp_cell_gates=True)

        _, sp_tape = lstm.forward_seq(params.sp[0], s.features[0])
        co = params.co[0]
        slot = co.slots[0]
        stack2 = lstm.init_params(c.d_sp, c.d_co, seed=0)
        stack2.W_ix[:] = slot.W_ix
        stack2.W_fx[:] = slot.W_fx
        stack2.W_gx[:] = slot.W_gx
        stack2.W_ox[:] = slot.W_ox
        stack2.W_ih[:] = slot.W_ih
        stack2.W_fh[:] = slot.W_fh
        stack2.W_gh[:] = slot.W_gh
        stack2.W_oh[:] = co.W_oh
        stack2.b_i[:] = slot.b_i
        stack2.b_f[:] = slot.b_f
        stack2.b_g[:] = slot.b_g
        stack2.b_o[:] = co.b_o
        _, top_tape = lstm.forward_seq(stack2, sp_tape.h)
        z = np.tanh(params.heads[0].W @ top_tape.h[-1] + params.heads[0].b)
        e = np.exp(z - z.max())
        assert_allclose(probs, e / e.sum(), atol=1e-12)

    def test_b3_is_mean_of_branch_softmaxes(self):
        rng = np.random.default_rng(6)
        c = desk_config(variant="b3")
        params = model.init_model_params(c, seed=6)
        s = random_sample(rng, c)
        probs, _ = model.forward(params, c, s)
        acc = np.zeros(c.k)
        for slot in range(c.p):
            _, t = lstm.forward_seq(params.sp[slot], s.features[slot])
            z = np.tanh(params.heads[slot].W @ t.h[-1] + params.heads[slot].b)
            e = np.exp(z - z.max())
            acc += e / e.sum()
        assert_allclose(probs, acc / c.p, atol=1e-13)
        assert abs(probs.sum() - 1.0) < 1e-12

    def test_b4_max_pool_routing(self):
        rng = np.random.default_rng(7)
        c = desk_config(variant="b4")
        params = model.init_model_params(c, seed=7)
        s = random_sample(rng, c)
        probs, tape = model.forward(params, c, s)
        stack = np.stack([lstm.forward_seq(params.sp[j], s.features[j])[1].h
                          for j in range(c.p)])
        pooled = stack.max(axis=0)
        _, top_tape = lstm.forward_seq(params.top, pooled)
        z = np.tanh(params.heads[0].W @ top_tape.h[-1] + params.heads[0].b)
        e = np.exp(z - z.max())
        assert_allclose(probs, e / e.sum(), atol=1e-13)

    def test_b2_concatenation_order(self):
        rng = np.random.default_rng(8)
        c = desk_config(variant="b2")
        params = model.init_model_params(c, seed=8)
        s = random_sample(rng, c)
        probs, _ = model.forward(params, c, s)
        cat = np.concatenate([s.features[j] for j in range(c.p)], axis=1)
        _, top_tape = lstm.forward_seq(params.top, cat)
        z = np.tanh(params.heads[0].W @ top_tape.h[-1] + params.heads[0].b)
        e = np.exp(z - z.max())
        assert_allclose(probs, e / e.sum(), atol=1e-13)

    def test_b1_pools_present_only_and_is_linear(self):
        rng = np.random.default_rng(9)
        c = desk_config(variant="b1")
        params = model.init_model_params(c, seed=9)
        s = random_sample(rng, c, present=np.array([True, False, True]))
        probs, _ = model.forward(params, c, s)
        xbar = s.features[[0, 2]].mean(axis=(0, 1))
        z = params.heads[0].W @ xbar + params.heads[0].b  # no tanh on b1
        e = np.exp(z - z.max())
        assert_allclose(probs, e / e.sum(), atol=1e-13)

    def test_absent_slot_features_do_not_matter(self):
        rng = np.random.default_rng(10)
        c = desk_config()
        params = model.init_model_params(c, seed=10)
        present = np.array([True, False, True])
        feats = rng.normal(size=(c.p, c.T, c.d_x))
        p1, _ = model.forward(params, c, model.Sample(feats, 0, present=present))
        feats2 = feats.copy()
        feats2[1] = rng.normal(size=(c.T, c.d_x))
        p2, _ = model.forward(params, c, model.Sample(feats2, 0, present=present))
        assert_array_equal(p1, p2)

    def test_predict_tie_break(self):
        assert model.predict(np.array([0.1, 0.7, 0.2])) == 1
        assert model.predict(np.array([0.5, 0.5])) == 0
        assert model.predict(np.full(5, 0.2)) == 0

    def test_argmax_unchanged_by_tanh_logits(self):
        rng = np.random.default_rng(11)
        c = desk_config()
        params = model.init_model_params(c, seed=11)
        s = random_sample(rng, c)
        probs, tape = model.forward(params, c, s)
        assert model.predict(probs) == int(np.argmax(tape.z))


class TestLoss:
    def test_uniform(self):
        assert_allclose(model.loss(np.full(4, 0.25), 2), math.log(4.0), atol=1e-12)

    def test_one_hot(self):
        assert model.loss(np.array([0.0, 1.0, 0.0]), 1) == 0.0

    def test_hand_value(self):
        assert_allclose(model.loss(np.array([0.2, 0.5, 0.3]), 1), -math.log(0.5), atol=1e-12)

    def test_floor_keeps_loss_finite(self):
        out = model.loss(np.array([0.0, 1.0]), 0)
        assert np.isfinite(out)
        assert out == -math.log(1e-300)

    def test_label_range(self):
        with pytest.raises(ValueError):
            model.loss(np.array([0.5, 0.5]), 2)


class TestForwardPartial:
    def test_full_ratio_matches_forward(self):
        rng = np.random.default_rng(12)
        c = desk_config()
        params = model.init_model_params(c, seed=12)
        s = random_sample(rng, c)
        probs, _ = model.forward(params, c, s)
        assert_array_equal(model.forward_partial(params, c, s, 1.0), probs)

    def test_step_counts(self):
        assert model.n_partial_steps(0.3, 10) == 3
        assert model.n_partial_steps(1.0, 10) == 10
        assert model.n_partial_steps(0.05, 10) == 1
        for i in range(1, 11):
            assert model.n_partial_steps(i / 10, 10) == i

    def test_ratio_bounds(self):
        with pytest.raises(ValueError):
            model.n_partial_steps(0.0, 10)
        with pytest.raises(ValueError):
            model.n_partial_steps(1.2, 10)

    @pytest.mark.parametrize("variant", model.VARIANTS)
    def test_partial_runs_for_all_variants(self, variant):
        rng = np.random.default_rng(13)
        c = desk_config(variant=variant)
        params = model.init_model_params(c, seed=13)
        s = random_sample(rng, c)
        probs = model.forward_partial(params, c, s, 0.5)
        assert abs(probs.sum() - 1.0) < 1e-12


class TestBackward:
    @pytest.mark.parametrize("variant", model.VARIANTS)
    def test_gradient_check_every_variant(self, variant):
        rng = np.random.default_rng(7)
        c = desk_config(variant=variant)
        params = model.init_model_params(c, seed=7)
        s = random_sample(rng, c)
        report = training.gradient_check(params, c, s, threshold=1e-6, seed=7)
        assert report.passed, report.to_text()

    def test_gradient_check_with_mask_and_sharing(self):
        rng = np.random.default_rng(8)
        c = desk_config(share_sp_params=True)
        params = model.init_model_params(c, seed=8)
        s = random_sample(rng, c, present=np.array([True, False, True]))
        report = training.gradient_check(params, c, s, threshold=1e-6, seed=8)
        assert report.passed, report.to_text()

    def test_gradient_check_cumulative_loss(self):
        rng = np.random.default_rng(9)
        c = desk_config(cumulative_loss=True)
        params = model.init_model_params(c, seed=9)
        s = random_sample(rng, c)
        report = training.gradient_check(params, c, s, threshold=1e-6, seed=9)
        assert report.passed, report.to_text()

    def test_near_one_hot_probs_give_near_zero_grads(self):
        c = desk_config(variant="b1", linear_logits=True)
        params = model.init_model_params(c, seed=1)
        rng = np.random.default_rng(1)
        s = random_sample(rng, c, label=0)
        # force an extreme logit for the true class
        params.heads[0].W[:] = 0.0
        params.heads[0].b[:] = np.array([40.0, -40.0, -40.0])
        probs, tape = model.forward(params, c, s)
        assert probs[0] > 1.0 - 1e-12
        grads = model.backward(params, c, tape, 0)
        for _, arr in model.named_tensors(grads):
            assert np.abs(arr).max() <= 1e-10

    def test_shared_sp_grad_is_sum_of_per_slot_grads(self):
        rng = np.random.default_rng(10)
        shared_c = desk_config(share_sp_params=True)
        shared_params = model.init_model_params(shared_c, seed=10)
        s = random_sample(rng, shared_c)

        unshared_c = desk_config(share_sp_params=False)
        unshared_params = model.init_model_params(unshared_c, seed=10)
        for slot in range(unshared_c.p):
            unshared_params.sp[slot].W_x[:] = shared_params.sp[0].W_x
            unshared_params.sp[slot].W_h[:] = shared_params.sp[0].W_h
            unshared_params.sp[slot].b[:] = shared_params.sp[0].b
        # align every tensor that is not a per-slot LSTM copy
        shared_named = dict(model.named_tensors(shared_params))
        for name, arr in model.named_tensors(unshared_params):
            if name.startswith("sp."):
                continue
            arr[:] = shared_named[name]

        p1, t1 = model.forward(shared_params, shared_c, s)
        p2, t2 = model.forward(unshared_params, unshared_c, s)
        assert_allclose(p1, p2, atol=1e-14)
        g_shared = model.backward(shared_params, shared_c, t1, s.label)
        g_unshared = model.backward(unshared_params, unshared_c, t2, s.label)
        total = sum(g_unshared.sp[j].W_x for j in range(3))
        assert_allclose(g_shared.sp[0].W_x, total, atol=1e-12)
        total_b = sum(g_unshared.sp[j].b for j in range(3))
        assert_allclose(g_shared.sp[0].b, total_b, atol=1e-12)

    def test_grads_mirror_param_layout(self):
        for variant in model.VARIANTS:
            c = desk_config(variant=variant)
            params = model.init_model_params(c, seed=2)
            rng = np.random.default_rng(2)
            s = random_sample(rng, c)
            _, tape = model.forward(params, c, s)
            grads = model.backward(params, c, tape, s.label)
            pn = model.named_tensors(params)
            gn = model.named_tensors(grads)
            assert [n for n, _ in pn] == [n for n, _ in gn]
            for (_, a), (_, b) in zip(pn, gn):
                assert a.shape == b.shape

import math
import os

import numpy as np
import pytest

from svodrive.errors import StructuralError
from svodrive.nn import (
    Adam,
    AttentionConfig,
    DeepSetEncoder,
    Linear,
    MLP,
    MultiHeadAttention,
    ParamStore,
    Tensor,
    adam_update,
    attention,
    backward,
    concat,
    constant,
    deepset_encode,
    detach,
    exp,
    gather_rows,
    load_checkpoint,
    log,
    matmul,
    mean,
    minimum,
    mlp_forward,
    mul,
    narrow,
    relu,
    reshape,
    scale,
    segment_sum,
    softmax,
    tanh,
    tensor_sum,
    transpose,
    use_dtype,
)

RNG = np.random.default_rng(1234)


def numeric_grad(f, x, i, h=1e-6):
    xp = x.copy()
    xp[i] += h
    up = f(xp)
    xp[i] -= 2 * h
    dn = f(xp)
    return (up - dn) / (2 * h)


def check_op(build, shape, n_checks=6, h=1e-6, tol=1e-6):
    """Finite-difference check of a scalar-valued graph w.r.t. one input."""
    x0 = RNG.normal(size=shape)
    t = Tensor(x0, requires_grad=True)
    out = build(t)
    backward(out)
    f = lambda arr: build(Tensor(arr, requires_grad=False)).data.item()
    flat = [tuple(idx) for idx in np.ndindex(*shape)]
    for idx in [flat[RNG.integers(0, len(flat))] for _ in range(n_checks)]:
        fd = numeric_grad(f, x0, idx, h)
        an = t.grad[idx]
        assert abs(fd - an) <= tol * max(1.0, abs(fd), abs(an)), (fd, an)


class TestPrimitiveGradients:
    def test_add_mul_broadcast(self):
        b = Tensor(RNG.normal(size=(4,)), requires_grad=True)
        x = Tensor(RNG.normal(size=(3, 4)), requires_grad=True)
        out = tensor_sum(mul(x + b, x + b))
        backward(out)
        f = lambda arr: float((((x.data + arr) ** 2)).sum())
        for i in range(4):
            assert abs(numeric_grad(f, b.data, (i,)) - b.grad[i]) < 1e-5

    def test_matmul(self):
        w = constant(RNG.normal(size=(5, 3)))
        check_op(lambda t: tensor_sum(matmul(t, w)), (4, 5))

    def test_batched_matmul(self):
        w = constant(RNG.normal(size=(2, 4, 3)))
        check_op(lambda t: tensor_sum(mul(matmul(t, w), matmul(t, w))), (2, 6, 4))

    def test_relu_tanh_exp_log(self):
        check_op(lambda t: tensor_sum(relu(t)), (8,))
        check_op(lambda t: tensor_sum(tanh(t)), (8,))
        check_op(lambda t: tensor_sum(exp(t)), (8,))
        check_op(lambda t: tensor_sum(log(exp(t) + constant(np.ones(1)))), (8,))

    def test_softmax(self):
        w = constant(RNG.normal(size=(6,)))
        check_op(lambda t: tensor_sum(mul(softmax(t, axis=-1), w)), (3, 6))

    def test_reshape_transpose_concat_narrow(self):
        check_op(lambda t: tensor_sum(mul(reshape(t, (6, 2)), reshape(t, (6, 2)))), (3, 4))
        check_op(lambda t: tensor_sum(mul(transpose(t, (1, 0)), transpose(t, (1, 0)))), (3, 4))
        check_op(lambda t: tensor_sum(mul(concat([t, t], axis=0), concat([t, t], axis=0))), (3, 2))
        check_op(lambda t: tensor_sum(mul(narrow(t, 1, 1, 2), narrow(t, 1, 1, 2))), (3, 4))

    def test_gather_segment(self):
        idx = np.array([0, 2, 2, 1])
        check_op(lambda t: tensor_sum(mul(gather_rows(t, idx), gather_rows(t, idx))), (3, 4))
        seg = np.array([0, 0, 1, 1, 1])
        check_op(
            lambda t: tensor_sum(mul(segment_sum(t, seg, 2), segment_sum(t, seg, 2))), (5, 3)
        )

    def test_minimum(self):
        other = constant(RNG.normal(size=(7,)))
        check_op(lambda t: tensor_sum(minimum(t, other)), (7,))

    def test_mean_axes(self):
        check_op(lambda t: mean(mul(t, t)), (4, 5))
        check_op(lambda t: tensor_sum(mean(mul(t, t), axis=1)), (4, 5))


class TestBackward:
    def test_sum_of_squares(self):
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        y = tensor_sum(mul(x, x))
        backward(y)
        assert np.allclose(x.grad, 2 * x.data)

    def test_detached_branch_zero_grad(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = mul(x, constant(np.array([3.0])))
        z = tensor_sum(y + mul(detach(y), detach(y)))
        backward(z)
        assert x.grad[0] == pytest.approx(3.0)  # only the live branch

    def test_non_scalar_root_rejected(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(StructuralError):
            backward(mul(x, x))

    def test_unreached_param_gets_zeros(self):
        store = ParamStore(0)
        a = store.param("a", (3,))
        store.param("b", (3,))
        backward(tensor_sum(mul(a, a)))
        grads = store.grads()
        assert np.allclose(grads["b"], 0.0)
        assert np.allclose(grads["a"], 2 * a.data)


class TestMLP:
    def test_zero_weights_zero_output(self):
        store = ParamStore(0)
        net = MLP(store, "m", [4, 8, 2])
        for p in store.params.values():
            p.data[:] = 0.0
        out = mlp_forward(net, constant(RNG.normal(size=(5, 4))))
        assert np.all(out.data == 0.0)

    def test_identity_linear(self):
        store = ParamStore(0)
        layer = Linear(store, "id", 3, 3)
        layer.w.data[:] = np.eye(3)
        layer.b.data[:] = 0.0
        x = RNG.normal(size=(6, 3))
        assert np.allclose(layer(constant(x)).data, x)

    def test_against_independent_reimplementation(self):
        store = ParamStore(7)
        net = MLP(store, "m", [5, 16, 16, 3])
        x = RNG.normal(size=(11, 5))
        out = mlp_forward(net, constant(x)).data

        # straightforward numpy re-implementation
        h = x
        for i in range(3):
            w = store.params[f"m.{i}.w"].data
            b = store.params[f"m.{i}.b"].data
            h = h @ w + b
            if i < 2:
                h = np.maximum(h, 0)
        assert np.abs(out - h).max() < 1e-9

    def test_shape_error(self):
        store = ParamStore(0)
        net = MLP(store, "m", [4, 8, 2])
        with pytest.raises(StructuralError):
            net(constant(np.zeros((3, 5))))


class TestDeepSet:
    def test_permutation_invariance(self):
        store = ParamStore(3)
        enc = DeepSetEncoder(store, "e", 6, 32, 16)
        rng = np.random.default_rng(0)
        for _ in range(50):
            pts = rng.normal(size=(rng.integers(1, 12), 6))
            base = enc(pts).data
            for _ in range(5):
                perm = rng.permutation(len(pts))
                assert np.abs(enc(pts[perm]).data - base).max() < 1e-9

    def test_single_point_is_rho_phi(self):
        store = ParamStore(4)
        enc = DeepSetEncoder(store, "e", 4, 16, 8)
        pt = RNG.normal(size=(1, 4))
        direct = enc.rho(enc.phi(constant(pt))).data
        assert np.allclose(deepset_encode(enc, pt).data, direct)

    def test_duplicated_point_doubles_contribution(self):
        store = ParamStore(5)
        enc = DeepSetEncoder(store, "e", 4, 16, 8)
        pts = RNG.normal(size=(3, 4))
        dup = np.vstack([pts, pts[1:2]])
        phi = enc.phi(constant(pts)).data
        pooled = phi.sum(axis=0) + phi[1]
        expected = enc.rho(constant(pooled[None, :])).data
        assert np.abs(enc(dup).data - expected).max() < 1e-9

    def test_empty_element_rejected(self):
        store = ParamStore(6)
        enc = DeepSetEncoder(store, "e", 4, 16, 8)
        with pytest.raises(StructuralError):
            enc(np.zeros((0, 4)))


class TestAttention:
    def test_single_key_returns_value_exactly(self):
        q = constant(RNG.normal(size=(5, 8)))
        k = constant(RNG.normal(size=(1, 8)))
        v = constant(RNG.normal(size=(1, 8)))
        out = attention(q, k, v).data
        assert np.all(out == v.data[0])

    def test_equal_scores_give_column_mean(self):
        q = constant(np.zeros((3, 8)))
        k = constant(RNG.normal(size=(6, 8)))
        v = constant(RNG.normal(size=(6, 4)))
        out = attention(q, k, v).data
        assert np.abs(out - v.data.mean(axis=0)).max() < 1e-12

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            scores = scale(
                matmul(
                    constant(rng.normal(size=(4, 8))),
                    transpose(constant(rng.normal(size=(9, 8))), (1, 0)),
                ),
                1 / math.sqrt(8),
            )
            w = softmax(scores, axis=-1).data
            assert np.abs(w.sum(axis=-1) - 1.0).max() < 1e-6

    def test_mask_zeroes_keys(self):
        q = constant(RNG.normal(size=(2, 4)))
        k = constant(RNG.normal(size=(5, 4)))
        v = constant(RNG.normal(size=(5, 4)))
        mask = np.array([1, 1, 0, 1, 0], dtype=float)
        out = attention(q, k, v, key_mask=mask).data
        out_sub = attention(
            q, constant(k.data[mask > 0]), constant(v.data[mask > 0])
        ).data
        assert np.abs(out - out_sub).max() < 1e-9

    def test_dimension_mismatch(self):
        with pytest.raises(StructuralError):
            attention(constant(np.zeros((2, 4))), constant(np.zeros((3, 5))), constant(np.zeros((3, 4))))


class TestMultiHead:
    def test_joint_permutation_invariance(self):
        store = ParamStore(11)
        mha = MultiHeadAttention(store, "a", AttentionConfig(d_model=32, n_heads=4))
        rng = np.random.default_rng(2)
        q = constant(rng.normal(size=(3, 32)))
        k = rng.normal(size=(7, 32))
        v = rng.normal(size=(7, 32))
        tids = np.array([0, 1, 1, 1, 2, 2, 2])
        base = mha(q, constant(k), constant(v), tids).data
        for _ in range(5):
            perm = rng.permutation(7)
            out = mha(q, constant(k[perm]), constant(v[perm]), tids[perm]).data
            assert np.abs(out - base).max() < 1e-9

    def test_zero_output_projection(self):
        store = ParamStore(12)
        mha = MultiHeadAttention(store, "a", AttentionConfig(d_model=16, n_heads=2))
        mha.wo.w.data[:] = 0.0
        mha.wo.b.data[:] = 0.0
        out = mha(
            constant(RNG.normal(size=(2, 16))),
            constant(RNG.normal(size=(4, 16))),
            constant(RNG.normal(size=(4, 16))),
            np.zeros(4, dtype=int),
        )
        assert np.all(out.data == 0.0)

    def test_single_head_identity_projections_reduce_to_attention(self):
        store = ParamStore(13)
        cfg = AttentionConfig(d_model=8, n_heads=1)
        mha = MultiHeadAttention(store, "a", cfg)
        eye = np.eye(8)
        for lin in (mha.wq, mha.wk, mha.wv, mha.wo):
            lin.w.data[:] = eye
            lin.b.data[:] = 0.0
        mha.type_emb.data[:] = 0.0
        q = RNG.normal(size=(3, 8))
        k = RNG.normal(size=(5, 8))
        v = RNG.normal(size=(5, 8))
        got = mha(constant(q), constant(k), constant(v), np.zeros(5, dtype=int)).data
        want = attention(constant(q), constant(k), constant(v)).data
        assert np.abs(got - want).max() < 1e-12

    def test_head_divisibility_enforced(self):
        with pytest.raises(StructuralError):
            AttentionConfig(d_model=160, n_heads=7)


class TestAdam:
    def test_zero_gradients_no_change(self):
        store = ParamStore(0)
        p = store.param("p", (4,))
        before = p.data.copy()
        opt = Adam(store, lr=0.1)
        opt.step({"p": np.zeros(4)})
        assert np.allclose(p.data, before)

    def test_descent_direction(self):
        store = ParamStore(0)
        p = store.param("p", (1,))
        p.data[:] = 0.0
        opt = Adam(store, lr=0.01)
        for _ in range(50):
            opt.step({"p": np.array([2.0])})  # constant positive gradient
        assert p.data[0] < 0.0

    def test_quadratic_single_step(self):
        store = ParamStore(0)
        w = store.param("w", (1,))
        w.data[:] = 1.0
        opt = Adam(store, lr=0.1)
        backward(tensor_sum(mul(w, w)))
        adam_update(opt)
        assert abs(w.data[0]) < 1.0
        # first Adam step moves by ~lr against the gradient sign
        assert w.data[0] == pytest.approx(1.0 - 0.1, abs=1e-6)


class TestParamStore:
    def test_checkpoint_round_trip(self, tmp_path):
        store = ParamStore(21)
        MLP(store, "net", [4, 8, 2])
        path = tmp_path / "w.ckpt"
        store.save(path)
        loaded = load_checkpoint(path)
        assert set(loaded.params) == set(store.params)
        for name in store.params:
            assert np.array_equal(loaded.params[name].data, store.params[name].data)
        assert loaded.seed == 21

    def test_checkpoint_bytes_deterministic(self, tmp_path):
        store = ParamStore(3)
        MLP(store, "net", [4, 8, 2])
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        store.save(p1)
        store.save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_same_seed_same_init(self):
        a, b = ParamStore(5), ParamStore(5)
        MLP(a, "n", [3, 7, 2])
        MLP(b, "n", [3, 7, 2])
        for name in a.params:
            assert np.array_equal(a.params[name].data, b.params[name].data)

    def test_duplicate_name_shape_conflict(self):
        store = ParamStore(0)
        store.param("w", (3, 4))
        with pytest.raises(StructuralError):
            store.param("w", (4, 3))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(StructuralError):
            load_checkpoint(path)


class TestDtypeContext:
    def test_float32_compute(self):
        with use_dtype(np.float32):
            store = ParamStore(0)
            net = MLP(store, "m", [4, 8, 2])
            out = net(constant(np.zeros((3, 4))))
            assert out.data.dtype == np.float32
            backward(tensor_sum(mul(out, out)))
            assert store.params["m.0.w"].grad is None or store.params["m.0.w"].grad.dtype == np.float32
        t = Tensor(np.zeros(3))
        assert t.data.dtype == np.float64

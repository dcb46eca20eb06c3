import numpy as np
import pytest

from osc.errors import ConfigurationError, ContractError, DimensionError, NumericError
from osc.nn import (
    AdamConfig,
    ParamStore,
    Tape,
    adam_step,
    build_attention,
    build_dense,
    build_encoder,
    build_gru,
    dense,
    dense_named,
    gru_cell,
    multihead_attention,
    transformer_encoder,
)
from osc.nn import tape as tp

from _oracles import check_grad_matrix, scalar_adam_reference


def test_dense_identity_passthrough():
    t = Tape(grad=False)
    x = t.const(np.array([[1.0, 2.0], [3.0, 4.0]]))
    w = t.const(np.eye(2))
    b = t.const(np.zeros((1, 2)))
    out = dense(t, x, w, b)
    np.testing.assert_array_equal(out.value, x.value)


def test_dense_hand_arithmetic():
    t = Tape(grad=False)
    x = t.const(np.array([[1.0, 2.0]]))
    w = t.const(np.array([[1.0, 0.0], [0.0, 1.0]]))
    b = t.const(np.array([[3.0, 3.0]]))
    out = dense(t, x, w, b)
    np.testing.assert_array_equal(out.value, [[4.0, 5.0]])


def test_dense_shape_mismatch_names_both_shapes():
    t = Tape(grad=False)
    x = t.const(np.zeros((1, 3)))
    w = t.const(np.zeros((2, 2)))
    with pytest.raises(DimensionError, match=r"\(1, 3\).*\(2, 2\)"):
        dense(t, x, w)


def test_dense_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    store = ParamStore(seed=3)
    build_dense(store, "d", 8, 6)
    x_val = rng.normal(size=(4, 8))

    def forward() -> float:
        t = Tape(grad=False)
        out = dense_named(t, t.const(x_val), store, "d")
        return float(out.value.sum())

    t = Tape()
    out = dense_named(t, t.const(x_val), store, "d")
    t.backward(tp.sum_all(t, out))
    check_grad_matrix(forward, store.entry("d.w").value, store.entry("d.w").grad, rng, n_coords=8)
    check_grad_matrix(forward, store.entry("d.b").value, store.entry("d.b").grad, rng, n_coords=3)


def test_attention_single_key_row_is_projected_value():
    store = ParamStore(seed=5)
    build_attention(store, "a", 8)
    t = Tape(grad=False)
    q = t.const(np.random.default_rng(0).normal(size=(3, 8)))
    kv = t.const(np.random.default_rng(1).normal(size=(1, 8)))
    out = multihead_attention(t, q, kv, kv, 2, store, "a")
    # with one key the softmax weight is exactly 1 for every query row
    np.testing.assert_array_equal(out.value[0], out.value[1])
    np.testing.assert_array_equal(out.value[0], out.value[2])
    v = kv.value @ store.value("a.v.w") + store.value("a.v.b")
    expected = v @ store.value("a.o.w") + store.value("a.o.b")
    np.testing.assert_allclose(out.value, np.repeat(expected, 3, axis=0), atol=1e-12)


def test_attention_shape_contract():
    store = ParamStore(seed=6)
    build_attention(store, "a", 128)
    t = Tape(grad=False)
    q = t.const(np.random.default_rng(2).normal(size=(3, 128)))
    kv = t.const(np.random.default_rng(3).normal(size=(5, 128)))
    out = multihead_attention(t, q, kv, kv, 2, store, "a")
    assert out.value.shape == (3, 128)


def test_attention_indivisible_heads_rejected():
    store = ParamStore(seed=6)
    build_attention(store, "a", 6)
    t = Tape(grad=False)
    q = t.const(np.zeros((2, 6)))
    with pytest.raises(ConfigurationError):
        multihead_attention(t, q, q, q, 4, store, "a")


def test_attention_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    store = ParamStore(seed=11)
    build_attention(store, "a", 8)
    q_val = rng.normal(size=(2, 8))
    kv_val = rng.normal(size=(3, 8))
    probe = rng.normal(size=(2, 8))

    def forward() -> float:
        t = Tape(grad=False)
        out = multihead_attention(t, t.const(q_val), t.const(kv_val), t.const(kv_val), 2, store, "a")
        return float((out.value * probe).sum())

    t = Tape()
    q = t.leaf(q_val)
    kv = t.leaf(kv_val)
    out = multihead_attention(t, q, kv, kv, 2, store, "a")
    t.backward(out, seed=probe)
    for name in ("a.q.w", "a.k.w", "a.v.w", "a.o.w"):
        check_grad_matrix(forward, store.entry(name).value, store.entry(name).grad, rng, n_coords=4)
    check_grad_matrix(forward, q_val, q.grad, rng, n_coords=4)
    check_grad_matrix(forward, kv_val, kv.grad, rng, n_coords=4)


def test_encoder_zero_layers_is_identity():
    store = ParamStore(seed=1)
    t = Tape(grad=False)
    seq = t.const(np.random.default_rng(4).normal(size=(5, 16)))
    out = transformer_encoder(t, seq, 0, 2, store, "enc")
    np.testing.assert_array_equal(out.value, seq.value)


def test_encoder_policy_scale_shape_preserved():
    store = ParamStore(seed=2)
    build_encoder(store, "enc", 4, 256, 1024)
    t = Tape(grad=False)
    seq = t.const(np.random.default_rng(5).normal(size=(9, 256)))
    out = transformer_encoder(t, seq, 4, 4, store, "enc")
    assert out.value.shape == (9, 256)
    assert np.all(np.isfinite(out.value))


def test_encoder_rejects_empty_sequence():
    store = ParamStore(seed=2)
    t = Tape(grad=False)
    with pytest.raises(ContractError):
        transformer_encoder(t, t.const(np.zeros((0, 8))), 1, 2, store, "enc")


def test_encoder_gradient_matches_finite_differences():
    rng = np.random.default_rng(13)
    store = ParamStore(seed=13)
    build_encoder(store, "enc", 1, 8, 12)
    seq_val = rng.normal(size=(3, 8))
    probe = rng.normal(size=(3, 8))

    def forward() -> float:
        t = Tape(grad=False)
        out = transformer_encoder(t, t.const(seq_val), 1, 2, store, "enc")
        return float((out.value * probe).sum())

    t = Tape()
    seq = t.leaf(seq_val)
    out = transformer_encoder(t, seq, 1, 2, store, "enc")
    t.backward(out, seed=probe)
    check_grad_matrix(forward, seq_val, seq.grad, rng, n_coords=5)
    for name in ("enc.l0.attn.q.w", "enc.l0.ff1.w", "enc.l0.ln1.g", "enc.l0.ln2.b"):
        check_grad_matrix(forward, store.entry(name).value, store.entry(name).grad, rng, n_coords=4)


def test_gru_all_zero_parameters_give_zero_state():
    store = ParamStore(seed=9)
    build_gru(store, "g", 6, 4)
    for gate in ("r", "u", "c"):
        store.entry(f"g.w{gate}").value[:] = 0.0
        store.entry(f"g.u{gate}").value[:] = 0.0
    t = Tape(grad=False)
    out = gru_cell(t, t.const(np.zeros((1, 4))), t.const(np.ones((1, 6))), store, "g")
    np.testing.assert_array_equal(out.value, np.zeros((1, 4)))


def test_gru_output_dim_128():
    store = ParamStore(seed=9)
    build_gru(store, "g", 395, 128)
    t = Tape(grad=False)
    out = gru_cell(
        t,
        t.const(np.random.default_rng(6).normal(size=(1, 128))),
        t.const(np.random.default_rng(7).normal(size=(1, 395))),
        store,
        "g",
    )
    assert out.value.shape == (1, 128)


def test_gru_dimension_mismatch_rejected():
    store = ParamStore(seed=9)
    build_gru(store, "g", 6, 4)
    t = Tape(grad=False)
    with pytest.raises(DimensionError):
        gru_cell(t, t.const(np.zeros((1, 5))), t.const(np.zeros((1, 6))), store, "g")


def test_gru_gradient_matches_finite_differences():
    rng = np.random.default_rng(17)
    store = ParamStore(seed=17)
    build_gru(store, "g", 5, 4)
    h_val = rng.normal(size=(1, 4))
    x_val = rng.normal(size=(1, 5))
    probe = rng.normal(size=(1, 4))

    def forward() -> float:
        t = Tape(grad=False)
        out = gru_cell(t, t.const(h_val), t.const(x_val), store, "g")
        return float((out.value * probe).sum())

    t = Tape()
    h = t.leaf(h_val)
    x = t.leaf(x_val)
    out = gru_cell(t, h, x, store, "g")
    t.backward(out, seed=probe)
    check_grad_matrix(forward, h_val, h.grad, rng, n_coords=4)
    check_grad_matrix(forward, x_val, x.grad, rng, n_coords=4)
    for gate in ("r", "u", "c"):
        for kind in ("w", "u", "b"):
            name = f"g.{kind}{gate}"
            check_grad_matrix(forward, store.entry(name).value, store.entry(name).grad, rng, n_coords=3)


def test_adam_zero_gradients_leave_parameters_unchanged():
    store = ParamStore(seed=21)
    build_dense(store, "d", 3, 3)
    before = np.array(store.value("d.w"))
    adam_step(store, AdamConfig(learning_rate=0.1))
    np.testing.assert_array_equal(store.value("d.w"), before)
    assert store.entry("d.w").step == 1


def test_adam_first_step_is_minus_learning_rate():
    store = ParamStore(seed=21)
    store.add("x", np.array([[0.0]]))
    store.entry("x").grad[:] = 1.0
    adam_step(store, AdamConfig(learning_rate=0.1))
    assert abs(store.value("x")[0, 0] - (-0.1)) < 1e-8
    np.testing.assert_array_equal(store.entry("x").grad, [[0.0]])


def test_adam_ten_step_trajectory_matches_scalar_oracle():
    rng = np.random.default_rng(23)
    grads = [float(g) for g in rng.normal(size=10)]
    store = ParamStore(seed=23)
    store.add("x", np.array([[0.7]]))
    cfg = AdamConfig(learning_rate=0.05)
    for g in grads:
        store.entry("x").grad[:] = g
        adam_step(store, cfg)
    expected = scalar_adam_reference(grads, 0.7, 0.05)
    assert abs(store.value("x")[0, 0] - expected) < 1e-10


def test_adam_nonfinite_gradient_names_parameter():
    store = ParamStore(seed=23)
    store.add("layer.weight", np.zeros((1, 1)))
    store.entry("layer.weight").grad[:] = np.nan
    with pytest.raises(NumericError, match="layer.weight"):
        adam_step(store, AdamConfig())


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(29)
    t = Tape(grad=False)
    x = t.const(rng.normal(scale=5.0, size=(40, 13)))
    out = tp.softmax_rows(t, x)
    np.testing.assert_allclose(out.value.sum(axis=1), 1.0, atol=1e-12)
    logs = tp.log_softmax_rows(t, x)
    np.testing.assert_allclose(np.exp(logs.value).sum(axis=1), 1.0, atol=1e-10)


def test_layer_norm_statistics():
    rng = np.random.default_rng(31)
    t = Tape(grad=False)
    x = t.const(rng.normal(loc=2.0, scale=3.0, size=(20, 64)))
    gain = t.const(np.ones((1, 64)))
    bias = t.const(np.zeros((1, 64)))
    out = tp.layer_norm_rows(t, x, gain, bias)
    assert np.abs(out.value.mean(axis=1)).max() < 1e-10
    assert np.abs(out.value.var(axis=1) - 1.0).max() < 1e-6


def test_forward_determinism_bit_identical():
    store = ParamStore(seed=37)
    build_encoder(store, "enc", 2, 16, 32)
    seq_val = np.random.default_rng(8).normal(size=(6, 16))

    def run() -> bytes:
        t = Tape(grad=False)
        out = transformer_encoder(t, t.const(seq_val), 2, 2, store, "enc")
        return out.value.tobytes()

    assert run() == run()


def test_finite_difference_gradcheck_across_seeds():
    # randomized small shapes, several seeds, every op family
    for seed in range(6):
        rng = np.random.default_rng(1000 + seed)
        rows = int(rng.integers(2, 5))
        inner = int(rng.integers(2, 6))
        cols = int(rng.integers(2, 5))
        store = ParamStore(seed=2000 + seed)
        build_dense(store, "d", inner, cols)
        x_val = rng.normal(size=(rows, inner))
        probe = rng.normal(size=(rows, cols))

        def forward() -> float:
            t = Tape(grad=False)
            out = dense_named(t, t.const(x_val), store, "d")
            return float((out.value * probe).sum())

        t = Tape()
        out = dense_named(t, t.const(x_val), store, "d")
        t.backward(out, seed=probe)
        check_grad_matrix(forward, store.entry("d.w").value, store.entry("d.w").grad, rng, n_coords=3)


def test_backward_is_one_shot():
    store = ParamStore(seed=71)
    build_dense(store, "d", 3, 3)
    t = Tape()
    out = dense_named(t, t.const(np.ones((2, 3))), store, "d")
    s = tp.sum_all(t, out)
    t.backward(s)
    with pytest.raises(NumericError, match="twice"):
        t.backward(s)

import math

import numpy as np
import pytest

from dynst.autodiff import no_grad
from dynst.errors import ConfigError, ShapeError
from dynst.model import (
    DynstModel,
    LinearHazardModel,
    ModelConfig,
    build_model,
    expected_time_from_step_probs,
    load_model,
    parameter_count,
    positional_encoding,
    predict_step_probs,
    save_model,
    survival_from_step_probs,
)


def small_config(**overrides):
    base = dict(d_model=8, n_layers=2, d_ff=16, t_max=6, p_static=3, q_temporal=2,
                n_heads=2, dropout_p=0.1)
    base.update(overrides)
    return ModelConfig(**base)


def random_batch(cfg, n, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.integers(0, 2, size=(n, cfg.p_static)).astype(float)
    v = rng.standard_normal((n, cfg.t_max, cfg.q_temporal))
    return z, v


# --- positional encodings -------------------------------------------------


def test_positional_encoding_at_position_zero():
    pe = positional_encoding(5, 8)
    np.testing.assert_array_equal(pe[0, 0::2], 0.0)
    np.testing.assert_array_equal(pe[0, 1::2], 1.0)


def test_positional_encoding_range_and_values():
    pe = positional_encoding(30, 16)
    assert np.all(pe >= -1.0) and np.all(pe <= 1.0)
    assert pe[1, 0] == pytest.approx(math.sin(1.0), abs=1e-15)
    assert pe[1, 1] == pytest.approx(math.cos(1.0), abs=1e-15)
    # dim pair 2i uses wavelength 10000^(2i/d)
    assert pe[3, 4] == pytest.approx(math.sin(3.0 / 10000 ** (4 / 16)), abs=1e-15)


def test_positional_encoding_rejects_odd_width():
    with pytest.raises(ConfigError):
        positional_encoding(4, 7)


# --- config invariants ------------------------------------------------------


def test_config_rejects_indivisible_heads():
    with pytest.raises(ConfigError):
        small_config(d_model=10, n_heads=4)


def test_config_rejects_bad_dropout():
    with pytest.raises(ConfigError):
        small_config(dropout_p=1.0)


# --- input embeddings -------------------------------------------------------


def test_embedding_of_zeros_with_zero_biases_is_position_encoding():
    cfg = small_config()
    model = DynstModel(cfg, np.random.default_rng(0))
    model.params["embed.temporal.b"].data[:] = 0.0
    model.params["embed.static.b"].data[:] = 0.0
    z = np.zeros((2, cfg.p_static))
    v = np.zeros((2, cfg.t_max, cfg.q_temporal))
    out = model.embed_inputs(z, v).data
    for row in out:
        np.testing.assert_allclose(row, model.pe, rtol=0, atol=0)


def test_embedding_without_static_features():
    cfg = small_config(p_static=0)
    model = DynstModel(cfg, np.random.default_rng(0))
    z = np.zeros((3, 0))
    v = np.random.default_rng(1).standard_normal((3, cfg.t_max, cfg.q_temporal))
    out = model.forward(z, v)
    assert out.shape == (3, cfg.t_max)


def test_embedding_matches_direct_matrix_arithmetic():
    cfg = small_config()
    model = DynstModel(cfg, np.random.default_rng(3))
    z, v = random_batch(cfg, 4, seed=5)
    out = model.embed_inputs(z, v).data
    wv = model.params["embed.temporal.w"].data
    bv = model.params["embed.temporal.b"].data
    wz = model.params["embed.static.w"].data
    bz = model.params["embed.static.b"].data
    for i in range(4):
        for t in range(cfg.t_max):
            expected = v[i, t] @ wv + bv + z[i] @ wz + bz + model.pe[t]
            np.testing.assert_allclose(out[i, t], expected, atol=1e-12)


def test_embedding_shape_errors():
    cfg = small_config()
    model = DynstModel(cfg, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        model.embed_inputs(np.zeros((2, cfg.p_static + 1)),
                           np.zeros((2, cfg.t_max, cfg.q_temporal)))
    with pytest.raises(ShapeError):
        model.embed_inputs(np.zeros((2, cfg.p_static)),
                           np.zeros((2, cfg.t_max + 1, cfg.q_temporal)))


# --- causal masking ---------------------------------------------------------


def test_future_perturbation_leaves_past_outputs_unchanged():
    cfg = small_config(t_max=8)
    model = DynstModel(cfg, np.random.default_rng(7))
    z, v = random_batch(cfg, 3, seed=11)
    base = predict_step_probs(model, z, v)
    rng = np.random.default_rng(13)
    for t_cut in (0, 3, 6):
        v2 = v.copy()
        v2[:, t_cut + 1:, :] += 10.0 * rng.standard_normal(v2[:, t_cut + 1:, :].shape)
        out = predict_step_probs(model, z, v2)
        np.testing.assert_allclose(out[:, : t_cut + 1], base[:, : t_cut + 1], atol=1e-12)


def test_single_position_attention_weight_is_one():
    cfg = small_config(t_max=1)
    model = DynstModel(cfg, np.random.default_rng(0))
    z, v = random_batch(cfg, 2, seed=1)
    maps = []
    with no_grad():
        model.forward(z, v, collect_attention=maps)
    for attn in maps:
        np.testing.assert_allclose(attn, 1.0, atol=1e-15)


def test_attention_rows_sum_to_one():
    cfg = small_config()
    model = DynstModel(cfg, np.random.default_rng(2))
    z, v = random_batch(cfg, 4, seed=3)
    maps = []
    with no_grad():
        model.forward(z, v, collect_attention=maps)
    assert len(maps) == cfg.n_layers
    for attn in maps:
        np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-12)


def test_swapping_timesteps_changes_outputs():
    cfg = small_config()
    model = DynstModel(cfg, np.random.default_rng(4))
    z, v = random_batch(cfg, 2, seed=9)
    swapped = v.copy()
    swapped[:, [1, 3]] = swapped[:, [3, 1]]
    out1 = predict_step_probs(model, z, v)
    out2 = predict_step_probs(model, z, swapped)
    assert np.abs(out1 - out2).max() > 1e-6


# --- head -------------------------------------------------------------------


def test_zero_head_gives_half_everywhere():
    cfg = small_config()
    model = DynstModel(cfg, np.random.default_rng(0))
    for name in ("head.w1", "head.b1", "head.w2", "head.b2"):
        model.params[name].data[:] = 0.0
    z, v = random_batch(cfg, 3, seed=2)
    out = predict_step_probs(model, z, v)
    np.testing.assert_allclose(out, 0.5, atol=0)


def test_outputs_strictly_inside_unit_interval():
    cfg = small_config()
    model = DynstModel(cfg, np.random.default_rng(1))
    z, v = random_batch(cfg, 5, seed=4)
    out = predict_step_probs(model, z, v)
    assert np.all(out > 0.0) and np.all(out < 1.0)


# --- batching and determinism ----------------------------------------------


def test_identical_patients_identical_rows():
    cfg = small_config()
    model = DynstModel(cfg, np.random.default_rng(5))
    z, v = random_batch(cfg, 1, seed=6)
    z8 = np.repeat(z, 8, axis=0)
    v8 = np.repeat(v, 8, axis=0)
    out = predict_step_probs(model, z8, v8)
    for row in out[1:]:
        np.testing.assert_array_equal(row, out[0])


def test_eval_forward_is_bit_deterministic():
    cfg = small_config()
    model = DynstModel(cfg, np.random.default_rng(8))
    z, v = random_batch(cfg, 4, seed=10)
    a = predict_step_probs(model, z, v)
    b = predict_step_probs(model, z, v)
    assert a.tobytes() == b.tobytes()


def test_batch_of_one_matches_row_of_batch_of_eight():
    cfg = small_config()
    model = DynstModel(cfg, np.random.default_rng(9))
    z, v = random_batch(cfg, 8, seed=12)
    full = predict_step_probs(model, z, v)
    single = predict_step_probs(model, z[3:4], v[3:4])
    np.testing.assert_allclose(single[0], full[3], atol=1e-12)


def test_train_mode_dropout_changes_outputs_eval_does_not():
    cfg = small_config(dropout_p=0.3)
    model = DynstModel(cfg, np.random.default_rng(14))
    z, v = random_batch(cfg, 2, seed=15)
    with no_grad():
        t1 = model.forward(z, v, train=True, rng=np.random.default_rng(0)).data
        t2 = model.forward(z, v, train=True, rng=np.random.default_rng(1)).data
    assert np.abs(t1 - t2).max() > 1e-9


# --- static variant and linear baseline --------------------------------------


def test_static_variant_ignores_vitals_but_varies_with_time():
    cfg = small_config()
    model = build_model("static", cfg, np.random.default_rng(3))
    z, v = random_batch(cfg, 3, seed=16)
    out1 = predict_step_probs(model, z, v)
    out2 = predict_step_probs(model, z, v + 5.0)
    np.testing.assert_array_equal(out1, out2)
    # position encodings keep the curve time-varying
    assert np.abs(np.diff(out1, axis=1)).max() > 1e-9


def test_linear_baseline_formula():
    cfg = small_config()
    model = LinearHazardModel(cfg, np.random.default_rng(6))
    model.params["b"].data[:] = np.linspace(-1, 1, cfg.t_max)
    z, v = random_batch(cfg, 4, seed=17)
    out = predict_step_probs(model, z, v)
    w = model.params["w"].data[:, 0]
    b = model.params["b"].data
    expected = 1.0 / (1.0 + np.exp(-(z @ w)[:, None] - b[None, :]))
    np.testing.assert_allclose(out, expected, atol=1e-12)
    # vitals are ignored
    np.testing.assert_array_equal(out, predict_step_probs(model, z, v * 3.0))


# --- parameter counts ---------------------------------------------------------


@pytest.mark.parametrize("kind", ["dynst", "static", "linear"])
def test_parameter_count_matches_formula(kind):
    cfg = small_config(d_model=12, n_layers=3, d_ff=20, n_heads=4)
    model = build_model(kind, cfg, np.random.default_rng(0))
    actual = sum(p.data.size for p in model.params.values())
    assert actual == parameter_count(kind, cfg)


def test_parameter_count_without_static_features():
    cfg = small_config(p_static=0)
    model = build_model("dynst", cfg, np.random.default_rng(0))
    assert sum(p.data.size for p in model.params.values()) == parameter_count("dynst", cfg)


# --- curves and checkpoints --------------------------------------------------


def test_survival_and_expected_time_from_step_probs():
    q = np.array([[0.5, 0.5, 0.5, 0.5]])
    s = survival_from_step_probs(q)
    np.testing.assert_allclose(s, [[0.5, 0.25, 0.125, 0.0625]])
    assert expected_time_from_step_probs(q)[0] == pytest.approx(0.9375)


@pytest.mark.parametrize("kind", ["dynst", "static", "linear"])
def test_model_save_load_roundtrip(kind, tmp_path):
    cfg = small_config()
    model = build_model(kind, cfg, np.random.default_rng(21))
    z, v = random_batch(cfg, 3, seed=22)
    before = predict_step_probs(model, z, v)
    path = tmp_path / "model.json"
    save_model(path, model)
    restored = load_model(path)
    assert restored.kind == kind
    after = predict_step_probs(restored, z, v)
    np.testing.assert_array_equal(before, after)

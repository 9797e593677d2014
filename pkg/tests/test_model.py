"""Tests for the transformer: adapters, rotary positions, attention, pooling, head."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from extsum.corpus import TokenizedDocument
from extsum.errors import (
    ConfigError,
    ContextLengthError,
    DegenerateSpanError,
    ShapeError,
    ValidationError,
)
from extsum.model import (
    LoraAdapter,
    ModelConfig,
    attention_naive,
    attention_tiled,
    backward_document,
    classify_head,
    forward_document,
    init_params,
    lora_project,
    mean_pool,
    rope_apply,
    rope_rotate,
    sigmoid,
)


def _cfg(**overrides):
    base = dict(
        vocab_size=32,
        d_model=16,
        n_layers=2,
        n_heads=2,
        d_ff=24,
        pretrain_context=64,
        runtime_context=64,
        lora_rank=2,
    )
    base.update(overrides)
    return ModelConfig(**base)


def _tdoc(rng, cfg, n_sentences=3, tokens_per_sentence=4):
    ids, spans = [], []
    for _ in range(n_sentences):
        start = len(ids)
        ids.extend(rng.integers(2, cfg.vocab_size, size=tokens_per_sentence).tolist())
        spans.append((start, len(ids)))
    return TokenizedDocument(
        doc_id="toy",
        token_ids=np.asarray(ids, dtype=np.int32),
        spans=spans,
        kept_indices=list(range(n_sentences)),
        dropped_empty=[],
    )


class TestModelConfig:
    def test_head_dim(self):
        assert _cfg().head_dim == 8

    def test_rope_scaling_defaults_to_context_ratio(self):
        cfg = _cfg(pretrain_context=32, runtime_context=64)
        assert_allclose(cfg.rope_scaling, 0.5, rtol=0, atol=0)

    def test_inconsistent_rope_scaling_rejected(self):
        with pytest.raises(ConfigError):
            _cfg(pretrain_context=32, runtime_context=64, rope_scaling=0.9)

    def test_heads_must_divide_model_width(self):
        with pytest.raises(ConfigError):
            _cfg(d_model=16, n_heads=3)

    def test_head_dim_must_be_even(self):
        with pytest.raises(ConfigError):
            _cfg(d_model=6, n_heads=2, lora_rank=1)

    def test_lora_rank_bounded(self):
        with pytest.raises(ConfigError):
            _cfg(lora_rank=9)  # > d_model // 2

    def test_attention_mode_validated(self):
        with pytest.raises(ConfigError):
            _cfg(attention_mode="diagonal")

    def test_dict_round_trip(self):
        cfg = _cfg(attention_mode="bidirectional", rope_base=500.0)
        assert ModelConfig.from_dict(cfg.as_dict()) == cfg


class TestLoraProject:
    def test_zero_adapter_is_exact_identity(self):
        rng = np.random.default_rng(42)
        base = rng.standard_normal((6, 4))
        x = rng.standard_normal(4)
        adapter = LoraAdapter(A=rng.standard_normal((2, 4)), B=np.zeros((6, 2)))
        assert np.array_equal(lora_project(x, base, adapter), x @ base.T)

    def test_hand_case(self):
        base = np.zeros((2, 2))
        adapter = LoraAdapter(A=np.array([[1.0, 0.0]]), B=np.array([[2.0], [0.0]]))
        out = lora_project(np.array([5.0, 7.0]), base, adapter)
        assert_allclose(out, [10.0, 0.0], rtol=0, atol=0)

    def test_matches_dense_reconstruction(self):
        """Factored path equals (base + B@A) @ x."""
        rng = np.random.default_rng(7)
        for _ in range(20):
            p, d, r = rng.integers(2, 9), rng.integers(2, 9), rng.integers(1, 3)
            base = rng.standard_normal((d, p))
            adapter = LoraAdapter(
                A=rng.standard_normal((r, p)), B=rng.standard_normal((d, r))
            )
            x = rng.standard_normal(p)
            dense = (base + adapter.B @ adapter.A) @ x
            assert_allclose(lora_project(x, base, adapter), dense, atol=1e-12)

    def test_no_adapter_runs_base_only(self):
        rng = np.random.default_rng(8)
        base = rng.standard_normal((3, 5))
        x = rng.standard_normal(5)
        assert np.array_equal(lora_project(x, base), x @ base.T)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            lora_project(np.ones(3), np.ones((2, 4)))


class TestRope:
    def test_zero_position_is_identity(self):
        rng = np.random.default_rng(42)
        cfg = _cfg()
        x = rng.standard_normal(cfg.head_dim)
        assert np.array_equal(rope_rotate(x, 0, cfg), x)

    def test_quarter_turn(self):
        """head_dim=2 has angle frequency 1, so m=pi/2 rotates (1,0) to (0,1)."""
        cfg = _cfg(d_model=4, n_heads=2, lora_rank=1)
        out = rope_rotate(np.array([1.0, 0.0]), np.pi / 2, cfg)
        assert_allclose(out, [0.0, 1.0], atol=1e-15)

    def test_halved_scale_matches_halved_position(self):
        rng = np.random.default_rng(3)
        cfg_half = _cfg(pretrain_context=64, runtime_context=128)
        cfg_one = _cfg(pretrain_context=64, runtime_context=64)
        x = rng.standard_normal(cfg_one.head_dim)
        assert np.array_equal(rope_rotate(x, 10, cfg_half), rope_rotate(x, 5, cfg_one))

    def test_norm_preserved(self):
        rng = np.random.default_rng(4)
        cfg = _cfg()
        for m in (0, 1, 17, 400, 4096):
            x = rng.standard_normal(cfg.head_dim)
            assert_allclose(
                np.linalg.norm(rope_rotate(x, m, cfg)), np.linalg.norm(x), atol=1e-12
            )

    def test_relative_position_identity(self):
        """Rotated dot products depend only on the position difference."""
        rng = np.random.default_rng(5)
        cfg = _cfg()
        for _ in range(50):
            q = rng.standard_normal(cfg.head_dim)
            k = rng.standard_normal(cfg.head_dim)
            m, l = (int(v) for v in rng.integers(0, 4097, size=2))
            lhs = rope_rotate(q, m, cfg) @ rope_rotate(k, l, cfg)
            rhs = rope_rotate(q, m - l, cfg) @ rope_rotate(k, 0, cfg)
            assert_allclose(lhs, rhs, rtol=0, atol=1e-9)

    def test_inverse_rotation_round_trips(self):
        rng = np.random.default_rng(6)
        cfg = _cfg()
        x = rng.standard_normal((5, cfg.head_dim))
        pos = np.arange(5, dtype=np.float64)
        back = rope_apply(rope_apply(x, pos, cfg), pos, cfg, inverse=True)
        assert_allclose(back, x, atol=1e-12)

    def test_odd_dimension_rejected(self):
        with pytest.raises(ShapeError):
            rope_rotate(np.ones(3), 1, _cfg())


class TestAttention:
    def _rand(self, rng, n, d=8):
        return (
            rng.standard_normal((n, d)),
            rng.standard_normal((n, d)),
            rng.standard_normal((n, d)),
        )

    def test_single_row_returns_value(self):
        rng = np.random.default_rng(42)
        q, k, v = self._rand(rng, 1)
        for mode in ("causal", "bidirectional"):
            assert_allclose(attention_naive(q, k, v, mode), v, atol=1e-15)

    def test_identical_keys_average_values(self):
        rng = np.random.default_rng(1)
        q = rng.standard_normal((1, 4))
        k = np.tile(rng.standard_normal(4), (2, 1))
        v = rng.standard_normal((2, 4))
        out = attention_naive(np.vstack([q, q]), k, v, "bidirectional")
        assert_allclose(out[0], v.mean(axis=0), atol=1e-12)

    def test_causal_first_row_copies_first_value(self):
        rng = np.random.default_rng(2)
        q, k, v = self._rand(rng, 6)
        out = attention_naive(q, k, v, "causal")
        assert_allclose(out[0], v[0], atol=1e-15)

    def test_causal_rows_ignore_later_values(self):
        """Row i of the output must not change when rows > i of V change."""
        rng = np.random.default_rng(3)
        q, k, v = self._rand(rng, 8)
        base = attention_naive(q, k, v, "causal")
        for i in range(7):
            v2 = v.copy()
            v2[i + 1 :] = rng.standard_normal(v2[i + 1 :].shape)
            again = attention_naive(q, k, v2, "causal")
            assert np.array_equal(again[: i + 1], base[: i + 1])

    def test_causal_rows_also_ignore_later_keys(self):
        rng = np.random.default_rng(4)
        q, k, v = self._rand(rng, 8)
        base = attention_naive(q, k, v, "causal")
        k2 = k.copy()
        k2[5:] += 3.0
        again = attention_naive(q, k2, v, "causal")
        assert np.array_equal(again[:5], base[:5])

    @pytest.mark.parametrize("n", [1, 2, 33, 257])
    @pytest.mark.parametrize("mode", ["causal", "bidirectional"])
    def test_tiled_matches_naive(self, n, mode):
        rng = np.random.default_rng(100 + n)
        q, k, v = self._rand(rng, n)
        ref = attention_naive(q, k, v, mode)
        for block in (1, 16, 64, n):
            out = attention_tiled(q, k, v, mode, block_size=block)
            assert np.max(np.abs(out - ref)) <= 1e-10

    def test_tiled_reports_peak_rows(self):
        rng = np.random.default_rng(5)
        q, k, v = self._rand(rng, 50)
        stats = {}
        attention_tiled(q, k, v, "causal", block_size=16, stats=stats)
        assert stats["peak_score_rows"] <= 16

    def test_mode_validated(self):
        rng = np.random.default_rng(6)
        q, k, v = self._rand(rng, 2)
        with pytest.raises(ValidationError):
            attention_naive(q, k, v, "diagonal")

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            attention_naive(np.ones((2, 4)), np.ones((3, 4)), np.ones((3, 4)))


class TestMeanPool:
    def test_singleton_span(self):
        h = np.arange(12.0).reshape(3, 4)
        out = mean_pool(h, [(1, 2)])
        assert np.array_equal(out[0], h[1])

    def test_two_row_mean(self):
        h = np.array([[1.0, 0.0], [0.0, 1.0]])
        out = mean_pool(h, [(0, 2)])
        assert_allclose(out[0], [0.5, 0.5], atol=0)

    def test_constant_rows(self):
        h = np.tile([2.0, -1.0, 3.0], (6, 1))
        out = mean_pool(h, [(0, 3), (3, 6)])
        assert_allclose(out, [[2.0, -1.0, 3.0]] * 2, atol=1e-15)

    def test_empty_span_rejected(self):
        with pytest.raises(DegenerateSpanError):
            mean_pool(np.ones((3, 2)), [(1, 1)])

    def test_out_of_range_span_rejected(self):
        with pytest.raises(ShapeError):
            mean_pool(np.ones((3, 2)), [(0, 4)])


class TestClassifyHead:
    def test_zero_head_gives_half(self):
        cfg = _cfg()
        params = init_params(cfg, seed=0)
        assert classify_head(np.ones(cfg.d_model), params) == 0.5

    def test_bias_closed_form(self):
        cfg = _cfg()
        params = init_params(cfg, seed=0)
        params.classifier_b[0] = np.log(3.0)
        assert_allclose(classify_head(np.zeros(cfg.d_model), params), 0.75, atol=1e-15)

    def test_sign_symmetry(self):
        rng = np.random.default_rng(42)
        cfg = _cfg()
        params = init_params(cfg, seed=0)
        params.classifier_w[:] = rng.standard_normal(params.classifier_w.shape)
        s = rng.standard_normal(cfg.d_model)
        assert_allclose(
            classify_head(s, params) + classify_head(-s, params), 1.0, atol=1e-12
        )

    def test_sigmoid_stable_at_extremes(self):
        assert sigmoid(800.0) == 1.0 or sigmoid(800.0) < 1.0  # finite either way
        assert np.isfinite(sigmoid(-800.0))
        assert 0.0 <= sigmoid(-800.0) < 1e-300 or sigmoid(-800.0) == 0.0


class TestInitParams:
    def test_adapters_start_at_zero_update(self):
        params = init_params(_cfg(), seed=0)
        for layer in params.layers:
            for adapter in (layer.lora_q, layer.lora_k, layer.lora_v, layer.lora_o):
                assert np.all(adapter.B == 0.0)
                assert np.any(adapter.A != 0.0)

    def test_classifier_starts_at_zero(self):
        params = init_params(_cfg(), seed=0)
        assert np.all(params.classifier_w == 0.0)
        assert np.all(params.classifier_b == 0.0)

    def test_frozen_draws_unaffected_by_rank(self):
        """Changing lora_rank must not shift the frozen weight stream."""
        a = init_params(_cfg(lora_rank=2), seed=11)
        b = init_params(_cfg(lora_rank=8), seed=11)
        assert np.array_equal(a.embedding, b.embedding)
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la.w_q, lb.w_q)
            assert np.array_equal(la.w_out, lb.w_out)

    def test_trainable_enumeration(self):
        params = init_params(_cfg(), seed=0)
        names = [name for name, _ in params.trainable_items()]
        assert "classifier.w_c" in names
        assert "classifier.b" in names
        assert "layers.0.lora_q.A" in names
        assert "layers.1.lora_o.B" in names
        assert len(names) == 2 * 4 * 2 + 2  # layers x adapters x (A,B) + head
        frozen_names = [name for name, _ in params.frozen_items()]
        assert "embedding" in frozen_names
        assert not any("lora" in n for n in frozen_names)


class TestForwardDocument:
    def test_fresh_model_scores_half_everywhere(self):
        """Zero-initialized adapters and head make every probability 0.5."""
        rng = np.random.default_rng(42)
        cfg = _cfg()
        tdoc = _tdoc(rng, cfg)
        probs, _ = forward_document(tdoc, init_params(cfg, seed=1), cfg)
        assert np.array_equal(probs, np.full(3, 0.5))

    def test_one_probability_per_span(self):
        rng = np.random.default_rng(1)
        cfg = _cfg()
        tdoc = _tdoc(rng, cfg, n_sentences=5, tokens_per_sentence=3)
        probs, cache = forward_document(tdoc, init_params(cfg, seed=2), cfg)
        assert probs.shape == (5,)
        assert len(cache.spans) == 5

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        cfg = _cfg()
        tdoc = _tdoc(rng, cfg)
        params = init_params(cfg, seed=3)
        params.classifier_w[:] = rng.standard_normal(params.classifier_w.shape)
        p1, _ = forward_document(tdoc, params, cfg)
        p2, _ = forward_document(tdoc, params, cfg)
        assert np.array_equal(p1, p2)

    def test_output_independent_of_rank_at_init(self):
        rng = np.random.default_rng(3)
        tdoc = _tdoc(rng, _cfg())
        probs = {}
        for r in (2, 4, 8):
            cfg = _cfg(lora_rank=r)
            p, _ = forward_document(tdoc, init_params(cfg, seed=5), cfg)
            probs[r] = p
        assert np.array_equal(probs[2], probs[4])
        assert np.array_equal(probs[4], probs[8])

    def test_naive_and_tiled_agree(self):
        rng = np.random.default_rng(4)
        cfg = _cfg()
        tdoc = _tdoc(rng, cfg, n_sentences=4, tokens_per_sentence=7)
        params = init_params(cfg, seed=6)
        for layer in params.layers:
            layer.lora_q.B[:] = rng.standard_normal(layer.lora_q.B.shape) * 0.1
        p_tiled, _ = forward_document(tdoc, params, cfg, attention_impl="tiled", block_size=8)
        p_naive, _ = forward_document(tdoc, params, cfg, attention_impl="naive")
        assert_allclose(p_tiled, p_naive, atol=1e-12)

    def test_bidirectional_mode_runs(self):
        rng = np.random.default_rng(5)
        cfg = _cfg(attention_mode="bidirectional")
        tdoc = _tdoc(rng, cfg)
        probs, _ = forward_document(tdoc, init_params(cfg, seed=7), cfg)
        assert probs.shape == (3,)

    def test_context_overflow_rejected(self):
        rng = np.random.default_rng(6)
        cfg = _cfg(runtime_context=8, pretrain_context=8)
        tdoc = _tdoc(rng, cfg, n_sentences=3, tokens_per_sentence=4)
        with pytest.raises(ContextLengthError):
            forward_document(tdoc, init_params(cfg, seed=8), cfg)

    def test_token_ids_validated(self):
        rng = np.random.default_rng(7)
        cfg = _cfg()
        tdoc = _tdoc(rng, cfg)
        tdoc.token_ids[0] = cfg.vocab_size
        with pytest.raises(ValidationError):
            forward_document(tdoc, init_params(cfg, seed=9), cfg)


class TestBackwardDocument:
    def _perturbed(self, cfg, rng, seed=0):
        params = init_params(cfg, seed=seed)
        for layer in params.layers:
            for adapter in (layer.lora_q, layer.lora_k, layer.lora_v, layer.lora_o):
                adapter.B[:] = rng.standard_normal(adapter.B.shape) * 0.05
        params.classifier_w[:] = rng.standard_normal(params.classifier_w.shape) * 0.5
        params.classifier_b[:] = rng.standard_normal(1) * 0.1
        return params

    def test_bias_gradient_closed_form(self):
        """d(mean BCE)/db == mean(p - y)."""
        rng = np.random.default_rng(42)
        cfg = _cfg()
        tdoc = _tdoc(rng, cfg)
        params = self._perturbed(cfg, rng)
        labels = np.array([1.0, 0.0, 1.0])
        probs, cache = forward_document(tdoc, params, cfg)
        grads = backward_document(cache, labels)
        assert_allclose(grads["classifier.b"][0], np.mean(probs - labels), atol=1e-12)

    def test_gradient_keys_match_trainables(self):
        rng = np.random.default_rng(1)
        cfg = _cfg()
        tdoc = _tdoc(rng, cfg)
        params = self._perturbed(cfg, rng)
        _, cache = forward_document(tdoc, params, cfg)
        grads = backward_document(cache, np.array([1.0, 0.0, 1.0]))
        assert set(grads) == {name for name, _ in params.trainable_items()}

    def test_frozen_mode_grads_only_classifier(self):
        rng = np.random.default_rng(2)
        cfg = _cfg()
        tdoc = _tdoc(rng, cfg)
        params = self._perturbed(cfg, rng)
        _, cache = forward_document(tdoc, params, cfg, use_adapters=False)
        grads = backward_document(cache, np.array([1.0, 0.0, 1.0]))
        assert set(grads) == {"classifier.w_c", "classifier.b"}

    def test_saturated_predictions_give_small_gradients(self):
        rng = np.random.default_rng(3)
        cfg = _cfg()
        tdoc = _tdoc(rng, cfg)
        params = init_params(cfg, seed=4)
        params.classifier_b[0] = 30.0  # push every probability to ~1
        probs, cache = forward_document(tdoc, params, cfg)
        grads = backward_document(cache, np.ones(3))
        assert np.max(np.abs(grads["classifier.b"])) < 1e-10

    def test_label_misalignment_rejected(self):
        rng = np.random.default_rng(4)
        cfg = _cfg()
        tdoc = _tdoc(rng, cfg)
        _, cache = forward_document(tdoc, init_params(cfg, seed=5), cfg)
        with pytest.raises(ValidationError):
            backward_document(cache, np.array([1.0, 0.0]))

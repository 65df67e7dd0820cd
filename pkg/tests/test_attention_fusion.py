import numpy as np
import pytest

from segrefine.attention_fusion import (
    AttentionMap,
    ScoreMap,
    align,
    average_attention,
    compute_logits,
    cross_fuse,
    head_average,
    normalize_dino_layers,
    run_caf,
    sharpen_and_project,
)
from segrefine.errors import DimensionMismatch, EmptyLayerAxis, ShapeMismatch
from segrefine.tensorio import FeatureBundle

from bundles import toy_bundle
from oracles import caf_oracle, cosine_scores


class TestAverageAttention:
    def test_mean_of_equal_layers(self):
        layer = np.random.default_rng(0).uniform(size=(1, 2, 3, 3))
        stack = np.concatenate([layer, layer], axis=0)
        np.testing.assert_allclose(average_attention(stack), layer[0])

    def test_two_layer_arithmetic(self):
        stack = np.array([[[[0.0, 1.0], [1.0, 0.0]]], [[[2.0, 1.0], [1.0, 2.0]]]])
        np.testing.assert_allclose(average_attention(stack),
                                   [[[1.0, 1.0], [1.0, 1.0]]])

    def test_matches_summation_loop(self):
        stack = np.random.default_rng(1).normal(size=(5, 2, 4, 4))
        expected = np.zeros((2, 4, 4))
        for n in range(5):
            expected += stack[n]
        expected /= 5
        np.testing.assert_allclose(average_attention(stack), expected, atol=1e-6)

    def test_empty_axis(self):
        with pytest.raises(EmptyLayerAxis):
            average_attention(np.zeros((0, 1, 2, 2)))


class TestSharpenAndProject:
    def test_identity_attention_returns_value(self):
        # Sym(I)=I, mu=0.5, relu(I-0.5)=0.5*I, l1 rows -> I, so output is V
        a = np.eye(2)[None]
        v = np.array([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(sharpen_and_project(a, v, False), v)

    def test_constant_attention_degenerates(self):
        a = np.full((1, 3, 3), 0.7)
        v = np.random.default_rng(2).normal(size=(3, 4))
        out = sharpen_and_project(a, v, False)
        np.testing.assert_array_equal(out, np.zeros((3, 4)))

    def test_matches_straight_line_oracle(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(size=(1, 4, 4))
        v = rng.normal(size=(4, 5))
        sym = 0.5 * (a[0] + a[0].T)
        mu = a[0].mean()
        b = np.maximum(sym - mu, 0.0)
        for i in range(4):
            s = b[i].sum()
            if s > 0:
                b[i] /= s
        np.testing.assert_allclose(sharpen_and_project(a, v, False), b @ v,
                                   atol=1e-6)

    def test_class_token_dropped(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(size=(2, 5, 5))
        v = rng.normal(size=(5, 3))
        out = sharpen_and_project(a, v, True)
        assert out.shape == (4, 3)
        np.testing.assert_allclose(out, sharpen_and_project(a, v, False)[1:])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            sharpen_and_project(np.zeros((1, 3, 3)), np.zeros((4, 2)), False)


class TestHeadAverage:
    def test_single_head(self):
        a = np.random.default_rng(5).uniform(size=(1, 4, 4))
        out = head_average(a, False, (2, 2))
        np.testing.assert_allclose(out.values, a[0])

    def test_two_heads(self):
        a = np.stack([np.eye(2), 2 * np.eye(2)])
        out = head_average(a, False, (1, 2))
        np.testing.assert_allclose(out.values, 1.5 * np.eye(2))

    def test_matches_loop(self):
        a = np.random.default_rng(6).uniform(size=(4, 4, 4))
        expected = sum(a[h] for h in range(4)) / 4
        np.testing.assert_allclose(head_average(a, False, (2, 2)).values,
                                   expected, atol=1e-7)

    def test_class_token_stripped(self):
        a = np.random.default_rng(7).uniform(size=(2, 5, 5))
        out = head_average(a, True, (2, 2))
        assert out.values.shape == (4, 4)


class TestNormalizeLayers:
    def test_three_four_five(self):
        out = normalize_dino_layers(np.array([[[3.0, 4.0]]]))
        np.testing.assert_allclose(out, [[[0.6, 0.8]]])

    def test_idempotent_on_unit_vectors(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(2, 5, 3))
        x /= np.linalg.norm(x, axis=-1, keepdims=True)
        np.testing.assert_allclose(normalize_dino_layers(x), x, atol=1e-7)

    def test_zero_vector_stays_zero(self):
        out = normalize_dino_layers(np.zeros((1, 2, 3)))
        assert np.isfinite(out).all()
        np.testing.assert_array_equal(out, np.zeros((1, 2, 3)))


class TestComputeLogits:
    def test_identical_vector_scores_one(self):
        text = np.array([[1.0, 2.0, 2.0], [0.0, 1.0, 0.0]])
        sm = compute_logits(text[:1], text, (1, 1))
        assert sm.values[0, 0] == pytest.approx(1.0)

    def test_orthogonal_scores_zero(self):
        sm = compute_logits(np.array([[1.0, 0.0]]), np.array([[0.0, 2.0]]), (1, 1))
        assert sm.values[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(9)
        feats = rng.normal(size=(5, 8))
        text = rng.normal(size=(3, 8))
        sm = compute_logits(feats, text, (1, 5))
        np.testing.assert_allclose(sm.values, cosine_scores(feats, text), atol=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            compute_logits(np.zeros((2, 3)), np.zeros((2, 4)), (1, 2))


class TestAlign:
    def test_identity_when_grids_match(self):
        a = AttentionMap(np.eye(4), (2, 2))
        assert align(a, (2, 2)) is a

    def test_constant_map_rescales(self):
        p, pt = 16, 4
        a = AttentionMap(np.full((p, p), 1.0 / p), (4, 4))
        out = align(a, (2, 2))
        np.testing.assert_allclose(out.values, np.full((pt, pt), 1.0 / pt),
                                   atol=1e-12)

    def test_rows_sum_to_one_or_zero(self):
        rng = np.random.default_rng(10)
        a = AttentionMap(rng.normal(size=(16, 16)), (4, 4))
        out = align(a, (3, 3))
        sums = out.values.sum(axis=1)
        assert ((np.abs(sums - 1.0) < 1e-9) | (sums == 0.0)).all()

    def test_matches_nested_loop_oracle(self):
        # resample both index pairs by explicit per-axis interpolation
        def lerp_axis(table, axis, dst):
            src = table.shape[axis]
            out_shape = list(table.shape)
            out_shape[axis] = dst
            out = np.zeros(out_shape)
            for i in range(dst):
                pos = (src - 1) / 2 if dst == 1 else i * (src - 1) / (dst - 1)
                lo = min(int(np.floor(pos)), max(src - 2, 0))
                frac = 0.0 if src == 1 else pos - lo
                lower = np.take(table, lo, axis=axis)
                upper = np.take(table, min(lo + 1, src - 1), axis=axis)
                np.moveaxis(out, axis, 0)[i] = lower * (1 - frac) + upper * frac
            return out

        rng = np.random.default_rng(20)
        r, c = 3, 4
        rt, ct = 2, 3
        values = rng.normal(size=(r * c, r * c))
        table = values.reshape(r, c, r, c)
        for axis, size in ((0, rt), (1, ct), (2, rt), (3, ct)):
            table = lerp_axis(table, axis, size)
        expected = np.maximum(table.reshape(rt * ct, rt * ct), 0.0)
        sums = expected.sum(axis=1, keepdims=True)
        expected = np.divide(expected, sums, out=np.zeros_like(expected),
                             where=sums > 0)
        out = align(AttentionMap(values, (r, c)), (rt, ct))
        np.testing.assert_allclose(out.values, expected, atol=1e-12)

    def test_row_index_pair_layout(self):
        # attention depending only on the row index must stay row-pure:
        # after alignment every row is uniform over the columns
        r, c = 2, 3
        p = r * c
        rows = np.arange(p, dtype=np.float64) + 1.0
        a = AttentionMap(np.tile(rows[:, None], (1, p)), (r, c))
        out = align(a, (2, 2))
        np.testing.assert_allclose(out.values, 0.25, atol=1e-12)


class TestCrossFuse:
    def grid(self, p):
        return (1, p)

    def test_zero_attention_passes_layer_mean(self):
        rng = np.random.default_rng(11)
        s = ScoreMap(rng.normal(size=(3, 2)), self.grid(3))
        zero = AttentionMap(np.zeros((3, 3)), self.grid(3))
        out = cross_fuse(ScoreMap(rng.normal(size=(3, 2)), self.grid(3)), [s],
                         zero, zero, 1.0)
        np.testing.assert_allclose(out.values, s.values)

    def test_identity_attention_propagates_last(self):
        rng = np.random.default_rng(12)
        s_last = ScoreMap(rng.normal(size=(3, 2)), self.grid(3))
        zeros = ScoreMap(np.zeros((3, 2)), self.grid(3))
        ident = AttentionMap(np.eye(3), self.grid(3))
        zero = AttentionMap(np.zeros((3, 3)), self.grid(3))
        out = cross_fuse(s_last, [zeros], ident, zero, 0.0)
        np.testing.assert_allclose(out.values, s_last.values)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(13)
        p, k = 5, 3
        s_last = rng.normal(size=(p, k))
        layers = [rng.normal(size=(p, k)) for _ in range(3)]
        a_self = rng.uniform(size=(p, p))
        a_other = rng.uniform(size=(p, p))
        lam = 0.7
        expected = (a_self + lam * a_other) @ s_last + sum(layers) / 3
        out = cross_fuse(ScoreMap(s_last, self.grid(p)),
                         [ScoreMap(l, self.grid(p)) for l in layers],
                         AttentionMap(a_self, self.grid(p)),
                         AttentionMap(a_other, self.grid(p)), lam)
        np.testing.assert_allclose(out.values, expected, atol=1e-5)

    def test_linear_in_scores(self):
        rng = np.random.default_rng(14)
        p, k = 4, 2
        s_last = rng.normal(size=(p, k))
        layer = rng.normal(size=(p, k))
        a = AttentionMap(rng.uniform(size=(p, p)), self.grid(p))
        b = AttentionMap(rng.uniform(size=(p, p)), self.grid(p))
        once = cross_fuse(ScoreMap(s_last, self.grid(p)),
                          [ScoreMap(layer, self.grid(p))], a, b, 1.0)
        twice = cross_fuse(ScoreMap(2 * s_last, self.grid(p)),
                           [ScoreMap(2 * layer, self.grid(p))], a, b, 1.0)
        np.testing.assert_array_equal(twice.values, 2 * once.values)

    def test_branch_swap_symmetry(self):
        rng = np.random.default_rng(15)
        p, k = 4, 2
        s_last = ScoreMap(rng.normal(size=(p, k)), self.grid(p))
        layers = [ScoreMap(rng.normal(size=(p, k)), self.grid(p))]
        x = AttentionMap(rng.uniform(size=(p, p)), self.grid(p))
        y = AttentionMap(rng.uniform(size=(p, p)), self.grid(p))
        ab = cross_fuse(s_last, layers, x, y, 1.0)
        ba = cross_fuse(s_last, layers, y, x, 1.0)
        np.testing.assert_array_equal(ab.values, ba.values)

    def test_requires_layers(self):
        s = ScoreMap(np.zeros((2, 2)), (1, 2))
        a = AttentionMap(np.zeros((2, 2)), (1, 2))
        with pytest.raises(EmptyLayerAxis):
            cross_fuse(s, [], a, a, 1.0)


def symmetric_bundle(seed=21):
    """Bundle whose structural branch mirrors the semantic branch exactly:
    the last structural layer holds the derived semantic features and the
    stored structural attention equals the head-averaged attention."""
    base = toy_bundle(seed=seed, grid=(2, 2), layers=3)
    a_avg = average_attention(base.clip_layer_attn)
    derived = sharpen_and_project(a_avg, base.clip_value_last, False)
    a_eff = head_average(a_avg, False, base.grid_clip)
    dino_layers = np.concatenate(
        [base.clip_layer_features.astype(np.float64), derived[None]], axis=0)
    return FeatureBundle(
        image=base.image,
        clip_layer_features=base.clip_layer_features,
        clip_layer_attn=base.clip_layer_attn,
        clip_value_last=base.clip_value_last,
        dino_layer_features=dino_layers.astype(np.float32),
        dino_attn_last=a_eff.values.astype(np.float32),
        text_embeddings=base.text_embeddings,
        grid_clip=base.grid_clip,
        grid_dino=base.grid_dino,
        has_class_token_clip=False,
        has_class_token_dino=False,
        class_names=base.class_names,
    )


class TestRunCaf:
    def test_identical_branches_give_identical_scores(self):
        fused = run_caf(symmetric_bundle(), lambda1=1.0)
        np.testing.assert_allclose(fused.s_clip.values, fused.s_dino.values,
                                   atol=1e-5)

    def test_matches_transcribed_oracle(self):
        bundle = toy_bundle(seed=22, grid=(2, 2), layers=2)
        fused = run_caf(bundle, lambda1=1.0)
        exp_clip, exp_dino = caf_oracle(bundle, 1.0)
        np.testing.assert_allclose(fused.s_clip.values, exp_clip, atol=1e-5)
        np.testing.assert_allclose(fused.s_dino.values, exp_dino, atol=1e-5)

    def test_output_shapes(self):
        bundle = toy_bundle(seed=23, grid=(3, 2), num_classes=4, layers=3)
        fused = run_caf(bundle, lambda1=0.5)
        assert fused.s_clip.values.shape == (6, 4)
        assert fused.s_dino.values.shape == (6, 4)
        assert fused.clip_stack.shape[0] == 3  # stored layers + derived last
        assert fused.dino_stack.shape[1] == 6

    def test_class_token_bundle(self):
        bundle = toy_bundle(seed=24, grid=(2, 2), class_token=True)
        fused = run_caf(bundle, lambda1=1.0)
        assert fused.s_clip.values.shape == (4, 2)

    def test_mismatched_grids_resample_to_semantic(self):
        base = toy_bundle(seed=25, grid=(2, 2))
        rng = np.random.default_rng(26)
        bundle = FeatureBundle(
            image=base.image,
            clip_layer_features=base.clip_layer_features,
            clip_layer_attn=base.clip_layer_attn,
            clip_value_last=base.clip_value_last,
            dino_layer_features=rng.normal(size=(2, 9, 6)).astype(np.float32),
            dino_attn_last=rng.uniform(size=(9, 9)).astype(np.float32),
            text_embeddings=base.text_embeddings,
            grid_clip=(2, 2),
            grid_dino=(3, 3),
            has_class_token_clip=False,
            has_class_token_dino=False,
            class_names=base.class_names,
        )
        fused = run_caf(bundle, lambda1=1.0)
        assert fused.s_dino.values.shape == (4, 2)
        assert fused.dino_stack.shape == (2, 4, 6)

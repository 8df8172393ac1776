"""Context matching and the stream / dual-stream models."""

import numpy as np
import pytest

import fusionkit.autodiff as ad
from fusionkit.qa.attention import context_match
from fusionkit.qa.data import QAExample, SyntheticTaskSpec, generate_dataset
from fusionkit.qa.models import (
    DualStreamConfig,
    DualStreamModel,
    StreamModel,
    StreamModelConfig,
    build_model,
)
from reference_impls import dual_mlb_votes, stream_concat_votes

TINY_DIMS = dict(seq_len=4, context_dim=6, text_dim=6, query_dim=6)


def tiny_example(seed=5):
    spec = SyntheticTaskSpec(seed=seed, n_train=1, n_val=1, noise=0.02,
                             **TINY_DIMS)
    return generate_dataset(spec).train[0]


def stream_config(**kw):
    base = dict(variant="concat", feature_dim=6, fused_dim=4, hidden_dim=8,
                streams=("context", "text"), seed=40, **TINY_DIMS)
    base.update(kw)
    return StreamModelConfig(**base)


def votes_of(model, example):
    return np.asarray(ad.value_of(model.forward(example)))


class TestContextMatch:
    def test_single_query_row_broadcasts(self):
        rng = np.random.default_rng(0)
        context = rng.normal(size=(5, 3))
        query = rng.normal(size=(1, 3))
        out = context_match(context, query)
        np.testing.assert_allclose(out, np.tile(query, (5, 1)))

    def test_zero_context_gives_query_mean(self):
        rng = np.random.default_rng(1)
        query = rng.normal(size=(4, 3))
        out = context_match(np.zeros((6, 3)), query)
        np.testing.assert_allclose(out, np.tile(query.mean(axis=0), (6, 1)),
                                   atol=1e-12)

    def test_hand_computed_two_by_two(self):
        context = np.array([[1.0, 0.0], [0.0, 2.0]])
        query = np.array([[1.0, 1.0], [2.0, 0.0]])
        scores = context @ query.T
        expected = np.zeros((2, 2))
        for t in range(2):
            e = np.exp(scores[t] - scores[t].max())
            w = e / e.sum()
            expected[t] = w @ query
        np.testing.assert_allclose(context_match(context, query), expected,
                                   atol=1e-12)

    def test_rows_are_convex_combinations(self):
        rng = np.random.default_rng(2)
        context = rng.normal(size=(5, 4))
        query = rng.normal(size=(3, 4))
        scores = context @ query.T
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights = e / e.sum(axis=1, keepdims=True)
        assert np.all(weights >= 0)
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(context_match(context, query),
                                   weights @ query, atol=1e-12)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError, match="feature dim"):
            context_match(np.zeros((2, 3)), np.zeros((2, 4)))


class TestStreamModel:
    def test_all_zero_example_ties_to_lowest_index(self):
        model = StreamModel(stream_config())
        zero = QAExample(
            context_seq=np.zeros((4, 6)), text_seq=np.zeros((4, 6)),
            question=np.zeros(6), answers=np.zeros((5, 6)), label=0,
        )
        votes = votes_of(model, zero)
        np.testing.assert_allclose(votes, votes[0])
        assert model.predict(zero) == 0

    def test_blp_zero_context_votes_from_head_bias_only(self):
        model = StreamModel(stream_config(
            variant="blp", fusion="mlb", streams=("context",),
            fusion_options={"activation": "none"},
        ))
        example = tiny_example()
        zeroed = QAExample(
            context_seq=np.zeros_like(example.context_seq),
            text_seq=example.text_seq, question=example.question,
            answers=example.answers, label=example.label,
        )
        votes = votes_of(model, zeroed)
        np.testing.assert_allclose(votes, votes[0], atol=1e-12)

    def test_golden_fixture_concat(self):
        """Frozen straight-line-reference votes for a fixed seed and example."""
        model = StreamModel(stream_config())
        example = tiny_example()
        expected = np.array([
            -0.021992389631732952,
            0.3486087523187974,
            0.4350590886399549,
            0.5461530690387655,
            0.37567702903836697,
        ])
        np.testing.assert_allclose(votes_of(model, example), expected,
                                   atol=1e-12)
        np.testing.assert_allclose(stream_concat_votes(model, example),
                                   expected, atol=1e-12)

    def test_reference_agreement_across_variant_seeds(self):
        for seed in (1, 2, 3):
            model = StreamModel(stream_config(seed=seed))
            example = tiny_example(seed=seed)
            np.testing.assert_allclose(
                votes_of(model, example),
                stream_concat_votes(model, example), atol=1e-12,
            )

    def test_concat_width_is_five_feature_dims(self):
        model = StreamModel(stream_config())
        for s in model.config.streams:
            assert model.heads[s]["w1"].value.shape[0] \
                == 5 * model.config.feature_dim

    def test_single_stream_ignores_the_other(self):
        model = StreamModel(stream_config(streams=("context",)))
        example = tiny_example()
        tampered = QAExample(
            context_seq=example.context_seq,
            text_seq=np.zeros_like(example.text_seq),
            question=example.question, answers=example.answers,
            label=example.label,
        )
        np.testing.assert_array_equal(votes_of(model, example),
                                      votes_of(model, tampered))

    def test_candidate_swap_permutes_votes(self):
        model = StreamModel(stream_config(variant="blp", fusion="mfb"))
        example = tiny_example()
        swapped_answers = example.answers.copy()
        swapped_answers[[1, 3]] = swapped_answers[[3, 1]]
        swapped = QAExample(
            context_seq=example.context_seq, text_seq=example.text_seq,
            question=example.question, answers=swapped_answers,
            label=example.label,
        )
        votes = votes_of(model, example)
        perm = votes_of(model, swapped)
        np.testing.assert_allclose(perm[[3, 1]], votes[[1, 3]], atol=1e-12)
        np.testing.assert_allclose(perm[[0, 2, 4]], votes[[0, 2, 4]],
                                   atol=1e-12)

    def test_no_question_flag_zeroes_question(self):
        model = StreamModel(stream_config(no_question=True))
        example = tiny_example()
        other = QAExample(
            context_seq=example.context_seq, text_seq=example.text_seq,
            question=example.question + 5.0, answers=example.answers,
            label=example.label,
        )
        np.testing.assert_array_equal(votes_of(model, example),
                                      votes_of(model, other))

    def test_every_fusion_kind_forwards(self):
        example = tiny_example()
        for kind in ("mcb", "mlb", "mfb", "mfh", "tucker", "block"):
            model = StreamModel(stream_config(variant="blp", fusion=kind))
            assert votes_of(model, example).shape == (5,)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError, match="variant"):
            stream_config(variant="sum")

    def test_blp_requires_fusion_kind(self):
        with pytest.raises(ValueError, match="fusion kind"):
            stream_config(variant="blp")


class TestDccaVariant:
    def test_forward_and_joint_aux_loss(self):
        model = StreamModel(stream_config(variant="dcca", dcca_components=2))
        examples = [tiny_example(seed=s) for s in (1, 2, 3, 4)]
        assert votes_of(model, examples[0]).shape == (5,)
        with ad.record():
            aux = model.batch_aux_loss(examples, train_mode=True)
        assert isinstance(aux, ad.Var)
        assert model.batch_aux_loss(examples, train_mode=False) is None

    def test_pretrain_mode_freezes_encoders(self):
        model = StreamModel(stream_config(
            variant="dcca", dcca_mode="pretrain", dcca_components=2,
        ))
        examples = [tiny_example(seed=s) for s in (1, 2, 3, 4)]
        history = model.pretrain_coordination(examples, steps=5, lr=1e-3)
        assert len(history) == 5
        assert history[-1] <= history[0] + 1e-6
        trainable = set(model.trainable_params())
        assert not any(name.endswith(".enc.w1") or name.startswith("enc_text")
                       for name in trainable)
        assert "text_proj" in trainable


class TestDualStreamModel:
    def dual_config(self, **kw):
        base = dict(fusion="mlb", feature_dim=6, fused_dim=4, hidden_dim=8,
                    seed=41, fusion_options={"activation": "none"},
                    **TINY_DIMS)
        base.update(kw)
        return DualStreamConfig(**base)

    def test_identical_streams_swap_invariant(self):
        model = DualStreamModel(self.dual_config())
        example = tiny_example()
        same = QAExample(
            context_seq=example.context_seq.copy(),
            text_seq=example.context_seq.copy(),
            question=example.question, answers=example.answers,
            label=example.label,
        )
        swapped = QAExample(
            context_seq=same.text_seq, text_seq=same.context_seq,
            question=same.question, answers=same.answers, label=same.label,
        )
        np.testing.assert_array_equal(votes_of(model, same),
                                      votes_of(model, swapped))

    def test_zero_context_stream_annihilates_fusion(self):
        model = DualStreamModel(self.dual_config())
        example = tiny_example()
        zeroed = QAExample(
            context_seq=np.zeros_like(example.context_seq),
            text_seq=example.text_seq, question=example.question,
            answers=example.answers, label=example.label,
        )
        votes = votes_of(model, zeroed)
        np.testing.assert_allclose(votes, votes[0], atol=1e-12)

    def test_golden_fixture_dual_mlb(self):
        model = DualStreamModel(self.dual_config())
        example = tiny_example()
        expected = np.array([
            0.0002188699878663537,
            -5.703754461587661e-05,
            9.876250686632741e-05,
            0.00011527203231258761,
            -1.9138361006302385e-06,
        ])
        np.testing.assert_allclose(votes_of(model, example), expected,
                                   atol=1e-12)
        np.testing.assert_allclose(dual_mlb_votes(model, example), expected,
                                   atol=1e-12)

    def test_missing_stream_rejected(self):
        model = DualStreamModel(self.dual_config())
        example = tiny_example()
        broken = QAExample(
            context_seq=example.context_seq, text_seq=None,
            question=example.question, answers=example.answers,
            label=example.label,
        )
        with pytest.raises(ValueError, match="both context and text"):
            model.forward(broken)

    def test_pool_then_fuse_mode(self):
        per_step = DualStreamModel(self.dual_config())
        pooled = DualStreamModel(self.dual_config(fuse_mode="pool_then_fuse"))
        example = tiny_example()
        assert votes_of(pooled, example).shape == (5,)
        assert not np.allclose(votes_of(per_step, example),
                               votes_of(pooled, example))

    def test_unknown_fuse_mode_rejected(self):
        with pytest.raises(ValueError, match="fuse_mode"):
            self.dual_config(fuse_mode="mean")


class TestBuildModel:
    def test_round_trips_configs(self):
        stream = stream_config(variant="blp", fusion="tucker")
        model = build_model(stream.to_dict())
        assert isinstance(model, StreamModel)
        assert model.config.fusion == "tucker"
        dual = DualStreamConfig(fusion="mcb", **TINY_DIMS)
        assert isinstance(build_model(dual.to_dict()), DualStreamModel)

    def test_unknown_type_rejected(self):
        with pytest.raises(ValueError, match="model_type"):
            build_model({"model_type": "other"})

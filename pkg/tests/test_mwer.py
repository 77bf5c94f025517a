"""Word edit distance, the expected-excess-error objective, and the N-best
finetuning step with frozen parameter groups."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import ftrans.autodiff as ad
from ftrans.autodiff import Tensor
from ftrans.decoding import BeamConfig, FusionParams
from ftrans.mwer import NBest, mwer_finetune_step, mwer_loss, word_edit_distance
from ftrans.optim import Adam

from test_decoding import _model, _vocab


class TestEditDistance:
    def test_hand_example(self):
        assert word_edit_distance("a b c".split(), "a x c d".split()) == 2

    def test_identity(self):
        assert word_edit_distance(["x", "y"], ["x", "y"]) == 0

    def test_empty_sides(self):
        assert word_edit_distance([], ["a", "b", "c"]) == 3
        assert word_edit_distance(["a", "b"], []) == 2
        assert word_edit_distance([], []) == 0

    def test_pure_substitution(self):
        assert word_edit_distance(["a", "b"], ["c", "d"]) == 2

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.sampled_from("abc"), max_size=6),
           st.lists(st.sampled_from("abc"), max_size=6))
    def test_metric_properties(self, x, y):
        d = word_edit_distance(x, y)
        assert d == word_edit_distance(y, x)
        assert abs(len(x) - len(y)) <= d <= max(len(x), len(y))
        assert (d == 0) == (x == y)


def _nbest(scores, errors):
    n = len(scores)
    return NBest(token_seqs=[[i] for i in range(n)],
                 scores=np.asarray(scores, dtype=np.float64),
                 words=[[str(i)] for i in range(n)], errors=list(errors))


class TestMWERLoss:
    def test_hand_value_two_hypotheses(self):
        # softmax(ln 3, 0) = (0.75, 0.25); errors (0, 2), mean 1
        # L = 0.75 * (-1) + 0.25 * 1 = -0.5
        loss = mwer_loss(_nbest([math.log(3.0), 0.0], [0, 2]))
        assert loss.item() == pytest.approx(-0.5, abs=1e-9)

    def test_zero_when_errors_equal(self):
        loss = mwer_loss(_nbest([0.3, -1.2, 4.0], [2, 2, 2]))
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_uniform_scores_equal_weighting(self):
        # uniform posterior makes the baseline-subtracted expectation zero
        loss = mwer_loss(_nbest([0.0, 0.0, 0.0], [0, 1, 5]))
        assert loss.item() == pytest.approx(0.0, abs=1e-9)

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        s = rng.standard_normal(5)
        e = rng.integers(0, 6, size=5)
        a = mwer_loss(_nbest(s, e)).item()
        b = mwer_loss(_nbest(s + 123.456, e)).item()
        assert a == pytest.approx(b, abs=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mwer_loss(NBest([], np.zeros(0), [], []))

    def test_gradient_pushes_down_bad_hypothesis(self):
        s = Tensor(np.zeros(2), requires_grad=True)
        nb = NBest([[0], [1]], s, [["a"], ["b"]], [0, 3])
        mwer_loss(nb).backward()
        # raising the score of the worse hypothesis raises the loss
        assert s.grad[1] > 0 > s.grad[0]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_bounded_by_error_spread(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 6))
        s = rng.standard_normal(n) * 3
        e = rng.integers(0, 10, size=n)
        val = mwer_loss(_nbest(s, e)).item()
        assert e.min() - e.mean() - 1e-9 <= val <= e.max() - e.mean() + 1e-9


def _batch(model, rng, n=3, T0=16, text="a b"):
    return [(rng.standard_normal((T0, model.encoder.d_feat)).astype(np.float32),
             text, f"u{i}") for i in range(n)]


class _CharTok:
    """Tiny stand-in tokenizer: id -> letter, for finetune-step plumbing."""

    def __init__(self, vocab):
        self.vocab = vocab

    def decode(self, ids):
        return " ".join(self.vocab.tokens[i].lstrip("▁") for i in ids)

    def encode(self, text):
        return [2 for _ in text.split()]


class TestFinetuneStep:
    def _setup(self, seed=0, lr=1e-3):
        model = _model(V=4, d_feat=4, seed=seed)
        tok = _CharTok(model.vocab)
        # exclude the predictor: the optimizer only touches what it is given
        params = {k: v for k, v in model.trainable_params().items()
                  if not k.startswith("pred.")}
        opt = Adam(params, lr=lr)
        return model, tok, opt, params

    def test_step_updates_only_named_params(self):
        model, tok, opt, params = self._setup(seed=3)
        frozen = {k: p.data.copy() for k, p in model.predictor.params.items()}
        before = {k: p.data.copy() for k, p in params.items()}
        rng = np.random.default_rng(4)
        m = mwer_finetune_step(model, _batch(model, rng), FusionParams(0.6, 0.6),
                               BeamConfig(beam_size=4, nbest=4), opt, tok)
        assert m.rescore_max_diff <= 1e-4
        changed = any(np.any(p.data != before[k]) for k, p in params.items())
        assert changed
        for k, p in model.predictor.params.items():
            np.testing.assert_array_equal(p.data, frozen[k])

    def test_equal_error_nbest_gives_zero_update(self):
        model, tok, opt, params = self._setup(seed=5)
        before = {k: p.data.copy() for k, p in params.items()}

        class _ConstTok(_CharTok):
            def decode(self, ids):
                return "same words"

        rng = np.random.default_rng(6)
        m = mwer_finetune_step(model, _batch(model, rng, text="other ref"),
                               FusionParams(0.6, 0.6),
                               BeamConfig(beam_size=4, nbest=4), opt,
                               _ConstTok(model.vocab))
        assert m.mwer_loss == pytest.approx(0.0, abs=1e-9)
        for k, p in params.items():
            np.testing.assert_array_equal(p.data, before[k])

    def test_loss_decreases_over_steps(self):
        model, tok, opt, params = self._setup(seed=7, lr=5e-3)
        rng = np.random.default_rng(8)
        batch = _batch(model, rng, n=4, text="b b")
        fp, cfg = FusionParams(0.6, 0.6), BeamConfig(beam_size=4, nbest=4)
        first = mwer_finetune_step(model, batch, fp, cfg, opt, tok).mwer_loss
        last = first
        for _ in range(15):
            last = mwer_finetune_step(model, batch, fp, cfg, opt, tok).mwer_loss
        assert last < first

    def test_divergence_guard_raises(self):
        model, tok, opt, _ = self._setup(seed=9)
        rng = np.random.default_rng(10)
        with pytest.raises(AssertionError, match="diverged"):
            mwer_finetune_step(model, _batch(model, rng), FusionParams(0.6, 0.6),
                               BeamConfig(beam_size=4, nbest=4), opt, tok,
                               rescore_tol=0.0)

    def test_metrics_fields(self):
        model, tok, opt, _ = self._setup(seed=11)
        rng = np.random.default_rng(12)
        m = mwer_finetune_step(model, _batch(model, rng, n=2), FusionParams(0.6, 0.6),
                               BeamConfig(beam_size=4, nbest=4), opt, tok)
        assert m.skipped == 0
        assert 0.0 <= m.ref_in_nbest <= 1.0
        assert m.oracle_wer >= 0.0

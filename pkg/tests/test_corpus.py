"""Synthetic word source, feature synthesis, manifests, and pooled WER."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftrans.corpus import (CorpusConfig, DatasetManifest, SynthesisProfile,
                           ToyLanguage, build_corpus, compute_wer,
                           synthesize_utterance)
from ftrans.tokenizer import train_subword


class TestToyLanguage:
    def test_same_seed_same_sentences(self):
        a = ToyLanguage(seed=5, n_words=30)
        b = ToyLanguage(seed=5, n_words=30)
        assert a.lexicon == b.lexicon
        assert a.sentences(0, 20) == b.sentences(0, 20)

    def test_different_seeds_differ(self):
        a = ToyLanguage(seed=1, n_words=30)
        b = ToyLanguage(seed=2, n_words=30)
        assert a.sentences(0, 10) != b.sentences(0, 10)

    def test_lexicon_unique_and_sized(self):
        lang = ToyLanguage(seed=0, n_words=50)
        assert len(lang.lexicon) == 50
        assert len(set(lang.lexicon)) == 50
        assert all(2 <= len(w) <= 6 for w in lang.lexicon)

    def test_sentences_nonempty_in_lexicon(self):
        lang = ToyLanguage(seed=3, n_words=40)
        vocab = set(lang.lexicon)
        for s in lang.sentences(0, 50):
            words = s.split()
            assert words
            assert all(w in vocab for w in words)

    def test_successor_sets_are_small(self):
        """Each two-word context allows only `branching` continuations, so
        the source is far from uniform over the lexicon."""
        lang = ToyLanguage(seed=7, n_words=60, branching=3)
        succ = lang._successors(4, 9)
        assert len(set(succ.tolist())) == 3
        np.testing.assert_array_equal(succ, lang._successors(4, 9))

    def test_two_word_context_limits_successors(self):
        """The source is order 3: any two-word history admits at most
        `branching` distinct next words, while single words fan out wider."""
        lang = ToyLanguage(seed=11, n_words=30, branching=3)
        pair_next: dict[tuple, set] = {}
        single_next: dict[str, set] = {}
        for s in lang.sentences(0, 500):
            words = s.split()
            for i in range(2, len(words)):
                pair_next.setdefault((words[i - 2], words[i - 1]), set()).add(words[i])
                single_next.setdefault(words[i - 1], set()).add(words[i])
        assert pair_next
        assert all(len(v) <= 3 for v in pair_next.values())
        assert max(len(v) for v in single_next.values()) > 3

    def test_branch_probs_validated(self):
        with pytest.raises(ValueError):
            ToyLanguage(seed=0, n_words=10, branching=2, branch_probs=(0.6, 0.3, 0.1))


class TestSynthesis:
    def test_prototypes_deterministic(self):
        p = SynthesisProfile(seed=4, d_feat=12)
        np.testing.assert_array_equal(p.prototype(7), p.prototype(7))
        assert p.prototype(7).shape == (12,)
        assert 2 <= p.duration(7) <= 5

    def test_sigma_zero_no_jitter_exact_concat(self):
        p = SynthesisProfile(seed=4, d_feat=6, noise_sigma=0.0, jitter_prob=0.0)
        ids = [3, 1, 3]
        feats = synthesize_utterance(p, ids, utt_seed=0)
        rows = [np.tile(p.prototype(t), (p.duration(t), 1)) for t in ids]
        np.testing.assert_array_equal(feats, np.concatenate(rows, axis=0))

    def test_same_utt_seed_reproducible(self):
        p = SynthesisProfile(seed=4, d_feat=6)
        a = synthesize_utterance(p, [1, 2], utt_seed=9)
        b = synthesize_utterance(p, [1, 2], utt_seed=9)
        np.testing.assert_array_equal(a, b)
        c = synthesize_utterance(p, [1, 2], utt_seed=10)
        assert a.shape != c.shape or np.any(a != c)

    def test_empty_transcript_rejected(self):
        with pytest.raises(ValueError):
            synthesize_utterance(SynthesisProfile(seed=0, d_feat=4), [], 0)

    def test_minimum_two_frames_per_token(self):
        p = SynthesisProfile(seed=1, d_feat=4, jitter_prob=1.0)
        for s in range(20):
            feats = synthesize_utterance(p, [0, 1, 2], utt_seed=s)
            assert feats.shape[0] >= 6

    def test_frames_recoverable_at_moderate_noise(self):
        """Nearest-prototype classification of noisy frames recovers the
        source token for at least 95 percent of frames at sigma 0.3."""
        p = SynthesisProfile(seed=2, d_feat=40, noise_sigma=0.3, jitter_prob=0.0)
        ids = list(range(20)) * 3
        feats = synthesize_utterance(p, ids, utt_seed=0)
        protos = np.stack([p.prototype(t) for t in range(20)])
        labels = np.concatenate([[t] * p.duration(t) for t in ids])
        d2 = ((feats[:, None, :] - protos[None, :, :]) ** 2).sum(-1)
        pred = d2.argmin(axis=1)
        assert (pred == labels).mean() >= 0.95


class TestManifest:
    def test_save_load_round_trip(self, tmp_path):
        m = DatasetManifest("dev", [("u1", "a.fsta#u1", "hello there"),
                                    ("u2", "a.fsta#u2", "more text")])
        m.save(tmp_path / "dev.tsv")
        back = DatasetManifest.load(tmp_path / "dev.tsv")
        assert back.entries == m.entries
        assert back.split == "dev"

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            DatasetManifest("x", [("u1", "", "a"), ("u1", "", "b")])


class TestBuildCorpus:
    CFG = CorpusConfig(n_train=6, n_dev=3, n_test=3, n_lm=20, d_feat=8,
                       n_words=25)

    def test_same_seed_byte_identical(self, tmp_path):
        lang = ToyLanguage(seed=1, n_words=25)
        text = lang.sentences(0, 40)
        tok = train_subword(text, 60)
        build_corpus(self.CFG, seed=1, out_dir=tmp_path / "a", tokenizer=tok)
        build_corpus(self.CFG, seed=1, out_dir=tmp_path / "b", tokenizer=tok)
        for name in ("asr_train.fsta", "asr_test.fsta"):
            a = (tmp_path / "a" / name).read_bytes()
            b = (tmp_path / "b" / name).read_bytes()
            assert a == b, name
        for name in ("asr_train", "asr_dev", "lm_text"):
            # feature paths embed the output directory, compare the rest
            a = DatasetManifest.load(tmp_path / "a" / f"{name}.tsv")
            b = DatasetManifest.load(tmp_path / "b" / f"{name}.tsv")
            assert [(u, t) for u, _, t in a.entries] == \
                   [(u, t) for u, _, t in b.entries], name

    def test_splits_disjoint_and_sized(self, tmp_path):
        ms = build_corpus(self.CFG, seed=2, out_dir=tmp_path)
        sizes = {k: len(m.entries) for k, m in ms.items()}
        assert sizes == {"asr_train": 6, "asr_dev": 3, "asr_test": 3, "lm_text": 20}
        ids = [uid for m in ms.values() for uid, _, _ in m.entries]
        assert len(set(ids)) == len(ids)

    def test_features_round_trip(self, tmp_path):
        lang = ToyLanguage(seed=3, n_words=25)
        tok = train_subword(lang.sentences(0, 40), 60)
        ms = build_corpus(self.CFG, seed=3, out_dir=tmp_path, tokenizer=tok)
        feats = ms["asr_dev"].load_features()
        assert set(feats) == {uid for uid, _, _ in ms["asr_dev"].entries}
        for uid, _, text in ms["asr_dev"].entries:
            assert feats[uid].shape[1] == 8
            assert feats[uid].shape[0] >= 2 * len(tok.encode(text))

    def test_lm_corpus_much_larger_than_paired(self, tmp_path):
        ms = build_corpus(CorpusConfig(n_train=5, n_dev=2, n_test=2, n_lm=100,
                                       d_feat=4, n_words=25), seed=4,
                          out_dir=tmp_path)
        assert len(ms["lm_text"].entries) >= 10 * len(ms["asr_train"].entries)
        assert all(fp == "" for _, fp, _ in ms["lm_text"].entries)

    def test_bad_sizes_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            build_corpus(CorpusConfig(n_train=0, n_dev=1, n_test=1, n_lm=1,
                                      n_words=25), seed=0, out_dir=tmp_path)


class TestComputeWER:
    def test_hand_example(self):
        out = compute_wer([["a", "b", "x"], ["q"]],
                          [["a", "b", "c"], ["q", "r"]])
        assert out["sub"] == 1 and out["del"] == 1 and out["ins"] == 0
        assert out["wer"] == pytest.approx(2 / 5)

    def test_perfect_is_zero(self):
        out = compute_wer([["a"], ["b", "c"]], [["a"], ["b", "c"]])
        assert out["wer"] == 0.0

    def test_all_deleted_is_one(self):
        out = compute_wer([[]], [["a", "b", "c"]])
        assert out["wer"] == pytest.approx(1.0)
        assert out["del"] == 3

    def test_insertions_can_exceed_one(self):
        out = compute_wer([["x", "y", "z"]], [["a"]])
        assert out["wer"] == pytest.approx(3.0)

    def test_pooled_not_averaged(self):
        # 1 error over 10 words pools to 0.1 even with a bad short utterance
        hyps = [["w"] * 9 + ["x"], []]
        refs = [["w"] * 10, []]
        out = compute_wer(hyps, refs)
        assert out["wer"] == pytest.approx(0.1)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            compute_wer([["a"]], [["a"], ["b"]])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.sampled_from("ab"), max_size=5),
           st.lists(st.sampled_from("ab"), min_size=1, max_size=5))
    def test_counts_consistent(self, hyp, ref):
        out = compute_wer([hyp], [ref])
        total = out["sub"] + out["ins"] + out["del"]
        assert out["wer"] == pytest.approx(total / len(ref))
        assert len(hyp) == len(ref) + out["ins"] - out["del"]

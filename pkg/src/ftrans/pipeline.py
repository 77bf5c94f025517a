"""End-to-end pipeline stages behind the CLI: data generation, tokenizer and LM
training, vocabulary adaptation, transducer training, predictor swap, MWER
finetuning, decoding, and evaluation. Every stage is a pure function of its
input artifacts and the seed."""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import RunConfig
from .corpus import CorpusConfig, DatasetManifest, ToyLanguage, build_corpus, compute_wer
from .decoding import BeamConfig, FusionParams, beam_search, swap_predictor
from .encoder import ChunkedEncoder
from .lm import CausalLM, RecurrentLM, StatelessPredictor, adapt_vocabulary, perplexity, train_lm
from .mwer import mwer_finetune_step
from .optim import Adam
from .tokenizer import TokenizerModel, Vocabulary, train_subword
from .transducer import FactorizedTransducer, train_step


def _paths(out):
    out = Path(out)
    return {
        "data": out / "data",
        "tok": out / "tokenizers",
        "lms": out / "lms",
        "asr": out / "asr",
        "decodes": out / "decodes",
        "report": out / "report.json",
    }


def _corpus_cfg(cfg: RunConfig) -> CorpusConfig:
    c = cfg.corpus
    return CorpusConfig(n_train=c.n_train, n_dev=c.n_dev, n_test=c.n_test, n_lm=c.n_lm,
                        d_feat=c.d_feat, noise_sigma=c.noise_sigma, jitter_prob=c.jitter_prob,
                        proto_scale=c.proto_scale, n_words=c.n_words, branching=c.branching)


def gen_data(cfg: RunConfig, out) -> dict:
    """Texts, tokenizers, then synthesized features (features need the ASR
    tokenizer, so the three sub-steps live in one stage)."""
    p = _paths(out)
    ccfg = _corpus_cfg(cfg)
    manifests = build_corpus(ccfg, cfg.seed, p["data"])  # texts only
    tok_metrics = train_tokenizers(cfg, out)
    asr_tok = TokenizerModel.load(p["tok"] / "asr.vocab")
    build_corpus(ccfg, cfg.seed, p["data"], tokenizer=asr_tok)  # now with features
    return {
        "sentences": {k: len(m.entries) for k, m in manifests.items()},
        "lm_to_train_ratio": ccfg.n_lm / ccfg.n_train,
        **tok_metrics,
    }


def train_tokenizers(cfg: RunConfig, out) -> dict:
    p = _paths(out)
    train_texts = [e[2] for e in DatasetManifest.load(p["data"] / "asr_train.tsv").entries]
    lm_texts = [e[2] for e in DatasetManifest.load(p["data"] / "lm_text.tsv").entries]
    asr_tok = train_subword(train_texts, cfg.tokenizer.asr_vocab_size)
    lm_tok = train_subword(lm_texts + train_texts, cfg.tokenizer.lm_vocab_size)
    p["tok"].mkdir(parents=True, exist_ok=True)
    asr_tok.save(p["tok"] / "asr.vocab")
    lm_tok.save(p["tok"] / "lm.vocab")
    return {"asr_vocab_size": len(asr_tok.vocab), "lm_vocab_size": len(lm_tok.vocab)}


def _load_texts(out, split) -> list[str]:
    return [e[2] for e in DatasetManifest.load(_paths(out)["data"] / f"{split}.tsv").entries]


def _fit_len(seqs: list[list[int]], max_len: int) -> list[list[int]]:
    """Truncate token sequences so that, with the start token prepended, they
    fit the model's positional table."""
    return [s[: max_len - 1] for s in seqs]


def train_lms(cfg: RunConfig, out) -> dict:
    """Pre-train the large (transformer) LM on its own vocabulary and the small
    (recurrent) LM directly on the ASR vocabulary, both from text-only data."""
    p = _paths(out)
    asr_tok = TokenizerModel.load(p["tok"] / "asr.vocab")
    lm_tok = TokenizerModel.load(p["tok"] / "lm.vocab")
    lm_texts = _load_texts(out, "lm_text")
    dev_texts = _load_texts(out, "asr_dev")

    s = cfg.large_lm
    large = CausalLM(lm_tok.vocab, d_model=s.d_model, n_layers=s.n_layers, n_heads=s.n_heads,
                     d_ff=s.d_ff, max_len=s.max_len, seed=cfg.seed + 11)
    corpus_u = _fit_len([lm_tok.encode(t) for t in lm_texts], s.max_len)
    held_u = _fit_len([lm_tok.encode(t) for t in dev_texts], s.max_len)
    large_ppls = train_lm(large, corpus_u, epochs=s.epochs, lr=s.lr, batch_size=s.batch_size,
                          seed=cfg.seed + 12, clip_norm=cfg.optimizer.clip_norm)
    p["lms"].mkdir(parents=True, exist_ok=True)
    large.save(p["lms"] / "large", vocab_path=p["tok"] / "lm.vocab")

    t = cfg.small_lm
    small = RecurrentLM(asr_tok.vocab, d_model=t.d_model, seed=cfg.seed + 13)
    corpus_v = [asr_tok.encode(x) for x in lm_texts]
    held_v = [asr_tok.encode(x) for x in dev_texts]
    small_ppls = train_lm(small, corpus_v, epochs=t.epochs, lr=t.lr, batch_size=t.batch_size,
                          seed=cfg.seed + 14, clip_norm=cfg.optimizer.clip_norm)
    small.save(p["lms"] / "small", vocab_path=p["tok"] / "asr.vocab")
    return {
        "large_train_ppl": large_ppls,
        "large_held_out_ppl": perplexity(large, held_u),
        "small_train_ppl": small_ppls,
        "small_held_out_ppl": perplexity(small, held_v),
    }


def adapt_vocab(cfg: RunConfig, out) -> dict:
    """Retarget the large LM to the ASR vocabulary, then finetune only its
    embedding/output matrices on the same text (early stop on held-out ppl)."""
    p = _paths(out)
    asr_tok = TokenizerModel.load(p["tok"] / "asr.vocab")
    lm_tok = TokenizerModel.load(p["tok"] / "lm.vocab")
    large = CausalLM.load(p["lms"] / "large", lm_tok.vocab)
    adapted, report = adapt_vocabulary(large, lm_tok, asr_tok.vocab, seed=cfg.seed + 21)

    corpus_v = _fit_len([asr_tok.encode(x) for x in _load_texts(out, "lm_text")],
                        cfg.large_lm.max_len)
    held_v = _fit_len([asr_tok.encode(x) for x in _load_texts(out, "asr_dev")],
                      cfg.large_lm.max_len)
    a = cfg.adapt
    ppls = train_lm(adapted, corpus_v, epochs=a.epochs, lr=a.lr, batch_size=a.batch_size,
                    seed=cfg.seed + 22, held_out=held_v, patience=a.patience,
                    clip_norm=cfg.optimizer.clip_norm)
    adapted.save(p["lms"] / "adapted", vocab_path=p["tok"] / "asr.vocab")
    metrics = {
        "adapt_counts": report.counts,
        "adapt_fractions": report.fractions(len(asr_tok.vocab)),
        "finetune_ppl": ppls,
        "held_out_ppl": perplexity(adapted, held_v),
    }
    (p["lms"] / "adapt_report.json").write_text(json.dumps(metrics, indent=2))
    return metrics


def _load_split(out, split, tokenizer):
    m = DatasetManifest.load(_paths(out)["data"] / f"{split}.tsv")
    feats = m.load_features()
    return [(feats[uid], tokenizer.encode(text), uid) for uid, _, text in m.entries], m


def train_asr(cfg: RunConfig, out) -> dict:
    """Train the factorized transducer from scratch with the weak (stateless)
    predictor: lattice loss plus the auxiliary predictor cross-entropy."""
    p = _paths(out)
    asr_tok = TokenizerModel.load(p["tok"] / "asr.vocab")
    vocab = asr_tok.vocab
    e = cfg.encoder
    encoder = ChunkedEncoder(d_feat=cfg.corpus.d_feat, d_model=e.d_model, n_layers=e.n_layers,
                             n_heads=e.n_heads, d_ff=e.d_ff, chunk_frames=e.chunk_frames,
                             max_frames=e.max_frames, seed=cfg.seed + 31)
    weak = StatelessPredictor(vocab, seed=cfg.seed + 32)
    model = FactorizedTransducer(encoder, vocab, weak, d_blank=cfg.transducer.d_blank,
                                 d_joint=cfg.transducer.d_joint, seed=cfg.seed + 33)
    data, _ = _load_split(out, "asr_train", asr_tok)
    o = cfg.optimizer
    opt = Adam(model.trainable_params(), lr=cfg.transducer.lr, beta1=o.beta1, beta2=o.beta2,
               eps=o.eps, clip_norm=o.clip_norm)
    rng = np.random.default_rng(cfg.seed + 34)
    t0 = time.perf_counter()
    losses = []
    for _ in range(cfg.transducer.steps):
        idx = rng.choice(len(data), size=min(cfg.transducer.batch_size, len(data)), replace=False)
        batch = [data[i] for i in idx]
        m = train_step(model, batch, opt, lam_ilm=cfg.transducer.lam_ilm,
                       detach_lattice_ilm=cfg.transducer.detach_lattice_ilm)
        losses.append(m["rnnt_loss"])
    elapsed = time.perf_counter() - t0
    p["asr"].mkdir(parents=True, exist_ok=True)
    model.save(p["asr"] / "ft", vocab_path=p["tok"] / "asr.vocab")
    k = max(1, min(10, len(losses) // 10))
    return {
        "steps": len(losses),
        "rnnt_loss_first": float(np.mean(losses[:k])),
        "rnnt_loss_last": float(np.mean(losses[-k:])),
        "timing": {"seconds": elapsed, "steps_per_s": len(losses) / elapsed if elapsed else 0.0},
    }


def load_predictor(cfg: RunConfig, out, which: str):
    p = _paths(out)
    asr_vocab = Vocabulary.load(p["tok"] / "asr.vocab")
    if which == "weak":
        model = FactorizedTransducer.load(p["asr"] / "ft", asr_vocab)
        return model.predictor
    if which == "small":
        return RecurrentLM.load(p["lms"] / "small", asr_vocab)
    if which == "strong":
        return CausalLM.load(p["lms"] / "adapted", asr_vocab)
    raise ValueError(f"unknown predictor '{which}' (expected weak|small|strong)")


def load_model(cfg: RunConfig, out, checkpoint="ft", predictor: str | None = None):
    p = _paths(out)
    asr_vocab = Vocabulary.load(p["tok"] / "asr.vocab")
    model = FactorizedTransducer.load(p["asr"] / checkpoint, asr_vocab)
    if predictor is not None and predictor != "weak":
        swap_predictor(model, load_predictor(cfg, out, predictor))
    return model


def decode_split(cfg: RunConfig, out, split: str, predictor: str | None = "weak",
                 checkpoint="ft", alpha=None, beta=None, beam=None, tag=None) -> dict:
    """Offline beam decode of one split; writes JSONL and returns pooled WER.

    predictor=None decodes with the predictor stored in the checkpoint.
    """
    p = _paths(out)
    asr_tok = TokenizerModel.load(p["tok"] / "asr.vocab")
    model = load_model(cfg, out, checkpoint=checkpoint, predictor=predictor)
    fp = FusionParams(alpha=cfg.fusion.alpha if alpha is None else alpha,
                      beta=cfg.fusion.beta if beta is None else beta)
    bc = BeamConfig(beam_size=cfg.beam.beam_size if beam is None else beam,
                    max_symbols_per_frame=cfg.beam.max_symbols_per_frame,
                    nbest=min(cfg.beam.nbest, cfg.beam.beam_size if beam is None else beam))
    data, manifest = _load_split(out, split, asr_tok)
    p["decodes"].mkdir(parents=True, exist_ok=True)
    tag = tag or f"{split}_{predictor or checkpoint}"
    rows, hyps, refs = [], [], []
    t0 = time.perf_counter()
    for (features, _, uid), (_, _, text) in zip(data, manifest.entries):
        with ad.no_grad():
            enc = model.encoder.encode_full(features).data
            nbest = beam_search(enc, model, model.predictor, fp, bc)
        toks, score = nbest[0]
        hyp_text = asr_tok.decode(toks)
        rows.append({"id": uid, "hyp": hyp_text, "score": score,
                     "nbest": [{"hyp": asr_tok.decode(t), "score": s} for t, s in nbest],
                     "frames": int(enc.shape[0]), "emitted_tokens": len(toks)})
        hyps.append(hyp_text.split())
        refs.append(text.split())
    elapsed = time.perf_counter() - t0
    with open(p["decodes"] / f"{tag}.jsonl", "w") as f:
        for r in rows:
            f.write(json.dumps(r) + "\n")
    wer = compute_wer(hyps, refs)
    return {**wer, "utterances": len(rows), "tag": tag,
            "timing": {"seconds": elapsed}}


def evaluate_decode(out, tag: str, split: str) -> dict:
    """Recompute pooled WER from a decode JSONL against the split manifest."""
    p = _paths(out)
    manifest = DatasetManifest.load(p["data"] / f"{split}.tsv")
    refs = {uid: text.split() for uid, _, text in manifest.entries}
    hyps, ordered_refs = [], []
    for line in (p["decodes"] / f"{tag}.jsonl").read_text().splitlines():
        r = json.loads(line)
        hyps.append(r["hyp"].split())
        ordered_refs.append(refs[r["id"]])
    return compute_wer(hyps, ordered_refs)


def swap_lm(cfg: RunConfig, out, predictor: str, checkpoint="ft", save_as=None) -> dict:
    """Swap the non-blank predictor and write the combined checkpoint."""
    p = _paths(out)
    model = load_model(cfg, out, checkpoint=checkpoint, predictor=predictor)
    save_as = save_as or f"ft_{predictor}"
    model.save(p["asr"] / save_as, vocab_path=p["tok"] / "asr.vocab")
    return {"checkpoint": save_as, "predictor": predictor}


def mwer_finetune(cfg: RunConfig, out, checkpoint="ft", predictor="strong",
                  save_as="ft_mwer") -> dict:
    """MWER finetuning after the swap; trunk-frozen groups stay untouched."""
    p = _paths(out)
    asr_tok = TokenizerModel.load(p["tok"] / "asr.vocab")
    model = load_model(cfg, out, checkpoint=checkpoint, predictor=predictor)
    fp = FusionParams(alpha=cfg.fusion.alpha, beta=cfg.fusion.beta)
    bc = BeamConfig(beam_size=cfg.beam.beam_size,
                    max_symbols_per_frame=cfg.beam.max_symbols_per_frame,
                    nbest=cfg.beam.nbest)
    m = DatasetManifest.load(p["data"] / "asr_train.tsv")
    feats = m.load_features()
    data = [(feats[uid], text, uid) for uid, _, text in m.entries]
    o = cfg.optimizer
    opt = Adam(model.trainable_params(), lr=cfg.mwer.lr, beta1=o.beta1, beta2=o.beta2,
               eps=o.eps, clip_norm=o.clip_norm)
    rng = np.random.default_rng(cfg.seed + 41)
    t0 = time.perf_counter()
    losses, oracle, in_nbest, skipped = [], [], [], 0
    for _ in range(cfg.mwer.steps):
        idx = rng.choice(len(data), size=min(cfg.mwer.batch_size, len(data)), replace=False)
        batch = [data[i] for i in idx]
        metrics = mwer_finetune_step(model, batch, fp, bc, opt, asr_tok,
                                     rnnt_interp=cfg.mwer.rnnt_interp)
        losses.append(metrics.mwer_loss)
        oracle.append(metrics.oracle_wer)
        in_nbest.append(metrics.ref_in_nbest)
        skipped += metrics.skipped
    elapsed = time.perf_counter() - t0
    model.save(p["asr"] / save_as, vocab_path=p["tok"] / "asr.vocab")
    return {
        "steps": len(losses),
        "mwer_loss_mean": float(np.mean(losses)) if losses else 0.0,
        "oracle_wer_mean": float(np.mean(oracle)) if oracle else 0.0,
        "ref_in_nbest_mean": float(np.mean(in_nbest)) if in_nbest else 0.0,
        "skipped": skipped,
        "timing": {"seconds": elapsed},
    }


def run_all(cfg: RunConfig, out) -> dict:
    """Full recipe: data -> tokenizers -> LM pre-training -> weak-predictor FT
    training -> vocabulary adaptation -> swap -> MWER -> decode/evaluate."""
    report = {"seed": cfg.seed, "config": cfg.to_dict(), "stages": {}}
    st = report["stages"]
    st["gen_data"] = gen_data(cfg, out)
    st["train_lms"] = train_lms(cfg, out)
    st["train_asr"] = train_asr(cfg, out)
    st["adapt_vocab"] = adapt_vocab(cfg, out)
    st["swap"] = swap_lm(cfg, out, "strong")
    st["mwer"] = mwer_finetune(cfg, out, checkpoint="ft_strong", predictor="strong")
    decodes = {}
    for split in ("asr_dev", "asr_test"):
        decodes[split] = {}
        for pred in ("weak", "small", "strong"):
            decodes[split][pred] = decode_split(cfg, out, split, predictor=pred)
        decodes[split]["strong_mwer"] = decode_split(
            cfg, out, split, predictor=None, checkpoint="ft_mwer",
            tag=f"{split}_strong_mwer")
    st["decode"] = decodes
    report["metrics"] = _metric_view(report)
    _paths(out)["report"].write_text(json.dumps(report, indent=2))
    return report


def _metric_view(report: dict) -> dict:
    """Deterministic metric subtree (no wall-clock values) for run comparison."""

    def strip(x):
        if isinstance(x, dict):
            return {k: strip(v) for k, v in x.items() if k != "timing"}
        return x

    return strip(report["stages"])


def bench_vocab_scaling(cfg: RunConfig, out, sizes=(500, 4000), steps=20) -> dict:
    """Train the transducer a fixed number of steps at two vocabulary sizes
    with identical everything else; smaller vocab must run strictly faster."""
    p = _paths(out)
    train_texts = _load_texts(out, "asr_train")
    results = {}
    for size in sizes:
        tok = train_subword(train_texts, size)
        vocab = tok.vocab
        from .corpus import SynthesisProfile, synthesize_utterance
        prof = SynthesisProfile(seed=cfg.seed, d_feat=cfg.corpus.d_feat,
                                noise_sigma=cfg.corpus.noise_sigma,
                                jitter_prob=cfg.corpus.jitter_prob,
                                proto_scale=cfg.corpus.proto_scale)
        data = []
        for i, text in enumerate(train_texts[:steps * cfg.transducer.batch_size]):
            ids = tok.encode(text)
            data.append((synthesize_utterance(prof, ids, utt_seed=i), ids, f"bench-{i}"))
        e = cfg.encoder
        encoder = ChunkedEncoder(d_feat=cfg.corpus.d_feat, d_model=e.d_model,
                                 n_layers=e.n_layers, n_heads=e.n_heads, d_ff=e.d_ff,
                                 chunk_frames=e.chunk_frames, max_frames=e.max_frames,
                                 seed=cfg.seed + 31)
        weak = StatelessPredictor(vocab, seed=cfg.seed + 32)
        model = FactorizedTransducer(encoder, vocab, weak, d_blank=cfg.transducer.d_blank,
                                     d_joint=cfg.transducer.d_joint, seed=cfg.seed + 33)
        opt = Adam(model.trainable_params(), lr=cfg.transducer.lr,
                   clip_norm=cfg.optimizer.clip_norm)
        rng = np.random.default_rng(cfg.seed + 34)
        mean_tu = float(np.mean([f.shape[0] // 4 * (len(t) + 1) for f, t, _ in data]))
        t0 = time.perf_counter()
        for _ in range(steps):
            idx = rng.choice(len(data), size=min(cfg.transducer.batch_size, len(data)),
                             replace=False)
            train_step(model, [data[i] for i in idx], opt, lam_ilm=cfg.transducer.lam_ilm)
        dt = time.perf_counter() - t0
        results[str(size)] = {
            "actual_vocab": len(vocab),
            "steps_per_s": steps / dt,
            "lattice_elements_per_cell": len(vocab),
            "mean_lattice_cells": mean_tu,
        }
    lo, hi = str(sizes[0]), str(sizes[1])
    results["speed_ratio_small_over_large"] = results[lo]["steps_per_s"] / results[hi]["steps_per_s"]
    (Path(out) / "bench_vocab.json").write_text(json.dumps(results, indent=2))
    return results

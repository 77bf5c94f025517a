"""Minimum word error rate finetuning on beam-search N-best lists.

Objective per utterance: softmax-normalize the N-best fused scores, weight each
hypothesis's word edit distance against the mean-error baseline, and let the
gradient flow through the differentiable rescoring pass into every non-frozen
parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .decoding import (BeamConfig, FusionParams, SearchTrace, beam_search,
                       rescore_trace)
from .optim import Adam
from .transducer import FactorizedTransducer, rnnt_forward_loss


def word_edit_distance(hyp_words: list[str], ref_words: list[str]) -> int:
    """Levenshtein distance over word tokens, unit costs."""
    n, m = len(hyp_words), len(ref_words)
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        for j in range(1, m + 1):
            sub = prev[j - 1] + (hyp_words[i - 1] != ref_words[j - 1])
            cur[j] = min(sub, prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return prev[m]


@dataclass
class NBest:
    token_seqs: list[list[int]]
    scores: object              # Tensor [N] (differentiable) or numpy array
    words: list[list[str]]
    errors: list[int]


@dataclass
class MWERBatchMetrics:
    mwer_loss: float
    oracle_wer: float           # mean over utterances of min-error / ref words
    ref_in_nbest: float         # fraction of utterances whose reference appeared
    skipped: int = 0
    rescore_max_diff: float = 0.0


def mwer_loss(nbest: NBest) -> Tensor:
    """Expected excess word error under the N-best posterior.

    L = sum_i softmax(S)_i * (E_i - mean(E)); zero when all errors are equal,
    and invariant to adding a constant to every score.
    """
    if not nbest.token_seqs:
        raise ValueError("empty N-best")
    scores = nbest.scores if isinstance(nbest.scores, Tensor) else Tensor(np.asarray(nbest.scores))
    post = ad.exp(ad.log_softmax(scores, axis=-1))
    errs = np.asarray(nbest.errors, dtype=np.float64)
    return (post * (errs - errs.mean())).sum()


def mwer_finetune_step(model: FactorizedTransducer, batch, fp: FusionParams,
                       cfg: BeamConfig, opt: Adam, tokenizer, rnnt_interp=0.0,
                       rescore_tol=1e-4, check_rescore=True) -> MWERBatchMetrics:
    """One MWER update over a batch of (features, transcript, utt id) triples.

    N-best lists come from beam search under the same fusion weights used at
    inference; their scores are recomputed with a differentiable replay of the
    traced search merges, which must match the search scores within
    rescore_tol. Only non-frozen parameter groups receive updates.
    """
    opt.zero_grad()
    total = None
    loss_sum = 0.0
    oracle_sum, in_nbest = 0.0, 0
    skipped = 0
    max_diff = 0.0
    n_used = 0
    for features, transcript, utt_id in batch:
        ref_words = transcript.split()
        trace = SearchTrace()
        with ad.no_grad():
            enc = model.encoder.encode_full(features).data
            nb = beam_search(enc, model, model.predictor, fp, cfg, trace=trace)
        nb = [(toks, sc) for toks, sc in nb]
        if not nb:
            skipped += 1
            continue
        enc_t = model.encoder.encode_full(features)
        scores, errors, words = [], [], []
        for toks, search_score in nb:
            s = rescore_trace(model, features, toks, trace, fp, enc=enc_t)
            diff = abs(s.item() - search_score)
            max_diff = max(max_diff, diff)
            hyp_words = tokenizer.decode(toks).split()
            scores.append(s)
            words.append(hyp_words)
            errors.append(word_edit_distance(hyp_words, ref_words))
        nbest = NBest(token_seqs=[t for t, _ in nb], scores=ad.stack(scores),
                      words=words, errors=errors)
        loss_u = mwer_loss(nbest)
        if rnnt_interp > 0.0:
            ref_ids = tokenizer.encode(transcript)
            dists = model.lattice(features, ref_ids)
            loss_u = loss_u + rnnt_interp * rnnt_forward_loss(dists, ref_ids).loss
        loss_sum += loss_u.item()
        oracle_sum += min(errors) / max(len(ref_words), 1)
        in_nbest += int(any(w == ref_words for w in words))
        total = loss_u if total is None else total + loss_u
        n_used += 1
    if check_rescore and max_diff > rescore_tol:
        raise AssertionError(
            f"rescoring pass diverged from search scores: max diff {max_diff:.3e} > {rescore_tol:.1e}")
    if n_used == 0:
        return MWERBatchMetrics(0.0, 0.0, 0.0, skipped=skipped, rescore_max_diff=max_diff)
    (total * (1.0 / n_used)).backward()
    opt.step()
    return MWERBatchMetrics(loss_sum / n_used, oracle_sum / n_used, in_nbest / n_used,
                            skipped=skipped, rescore_max_diff=max_diff)

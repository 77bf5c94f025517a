"""Fused-score decoding: time-synchronous beam search with duplicate merging,
greedy search, the weak-to-strong predictor swap, a streaming session, and a
differentiable capped-alignment rescoring pass for sequence training.

Non-blank decode score per Eq.-style fusion:
    log(1-P_b) + log_softmax(log P_ac + alpha * log P_ilm)[k] + beta * log P_ilm[k]
Blank keeps its raw log P_b.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .transducer import FactorizedTransducer

NEG_INF = -np.inf


@dataclass
class FusionParams:
    alpha: float = 0.6
    beta: float = 0.6


@dataclass
class BeamConfig:
    beam_size: int = 10
    max_symbols_per_frame: int = 3
    nbest: int = 4

    def __post_init__(self):
        if not 1 <= self.nbest <= self.beam_size:
            raise ValueError("nbest must satisfy 1 <= nbest <= beam_size")


@dataclass
class Hypothesis:
    tokens: tuple
    score: float
    lm_state: object
    lm_row: np.ndarray        # cached next-token log-probs for this history
    last_token: int | None    # None = BOS context for the blank embedding
    node: int | None = None   # SearchTrace node id when tracing


class SearchTrace:
    """Merge DAG recorded during beam search.

    Every surviving hypothesis instance becomes a node; each score
    contribution becomes an edge (parent node, delta) where delta names a
    lattice transition: ("b", frame, emitted_count) for a blank step or
    ("e", frame, emitted_count, token) for an emission. Re-evaluating the
    DAG with differentiable transition scores reproduces the search-time
    merged score of any returned hypothesis exactly (it sums the same
    alignments the pruned search summed, no more and no fewer).
    """

    def __init__(self):
        self.edges: list[list] = []
        self.final_nodes: dict[tuple, int] = {}

    def node(self) -> int:
        self.edges.append([])
        return len(self.edges) - 1

    def edge(self, child: int, parent: int, delta: tuple):
        self.edges[child].append((parent, delta))


def _lsm(x: np.ndarray) -> np.ndarray:
    m = x.max()
    z = x - m
    return z - np.log(np.exp(z).sum())


def fused_scores(logp_b, log1m_pb, logp_ac_row, logp_lm_row, fp: FusionParams):
    """(blank score, non-blank score vector); accepts Tensors (differentiable)
    or plain arrays/floats."""
    if isinstance(logp_ac_row, Tensor) or isinstance(logp_lm_row, Tensor):
        a = logp_ac_row if isinstance(logp_ac_row, Tensor) else Tensor(logp_ac_row)
        i = logp_lm_row if isinstance(logp_lm_row, Tensor) else Tensor(logp_lm_row)
        if a.shape != i.shape:
            raise ValueError(f"shape mismatch: {a.shape} vs {i.shape}")
        nb = log1m_pb + ad.log_softmax(a + i * fp.alpha, axis=-1) + i * fp.beta
        return logp_b, nb
    a, i = np.asarray(logp_ac_row), np.asarray(logp_lm_row)
    if a.shape != i.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {i.shape}")
    nb = log1m_pb + _lsm(a + fp.alpha * i) + fp.beta * i
    return logp_b, nb


class _FrameScorer:
    """Per-utterance cached pieces for fast per-frame fused scoring."""

    def __init__(self, model: FactorizedTransducer, enc: np.ndarray):
        p = model.params
        self.model = model
        self.enc_a = enc @ p["blank.joiner.A"].data.T          # [T, d_j]
        self.w = p["blank.joiner.w"].data
        self.bemb = p["blank.emb"].data @ p["blank.joiner.B"].data.T  # [(V+1), d_j]
        logits = enc @ p["ac.proj"].data.T
        m = logits.max(axis=-1, keepdims=True)
        z = logits - m
        self.lac = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))  # [T, V]
        self.bos_row = model.bos_row

    def blank_pair(self, t: int, last_token: int | None) -> tuple[float, float]:
        ctx = self.bos_row if last_token is None else last_token
        z = float(np.tanh(self.enc_a[t] + self.bemb[ctx]) @ self.w)
        # stable (log sigma(z), log(1 - sigma(z)))
        sp = np.logaddexp(0.0, -z)
        sn = np.logaddexp(0.0, z)
        return -sp, -sn


def _advance_frame(scorer: _FrameScorer, predictor, fp: FusionParams, cfg: BeamConfig,
                   beam: list[Hypothesis], t: int,
                   trace: SearchTrace | None = None) -> list[Hypothesis]:
    """Process one encoder frame: up to max_symbols_per_frame emissions per
    hypothesis, then a blank to advance; duplicates merge by logaddexp."""
    completed: dict[tuple, Hypothesis] = {}
    active = beam
    for s in range(cfg.max_symbols_per_frame + 1):
        for hyp in active:
            lpb, _ = scorer.blank_pair(t, hyp.last_token)
            sc = hyp.score + lpb
            prev = completed.get(hyp.tokens)
            if prev is None:
                node = trace.node() if trace is not None else None
                completed[hyp.tokens] = Hypothesis(hyp.tokens, sc, hyp.lm_state,
                                                   hyp.lm_row, hyp.last_token, node)
                if trace is not None:
                    trace.edge(node, hyp.node, ("b", t, len(hyp.tokens)))
            else:
                prev.score = float(np.logaddexp(prev.score, sc))
                if trace is not None:
                    trace.edge(prev.node, hyp.node, ("b", t, len(hyp.tokens)))
        if s == cfg.max_symbols_per_frame:
            break
        expansions: dict[tuple, list] = {}
        for hyp in active:
            _, l1mb = scorer.blank_pair(t, hyp.last_token)
            _, nb = fused_scores(0.0, l1mb, scorer.lac[t], hyp.lm_row, fp)
            cand = nb + hyp.score
            k_top = np.argpartition(cand, -min(cfg.beam_size, cand.size))[-cfg.beam_size:] \
                if cand.size > cfg.beam_size else np.arange(cand.size)
            for k in k_top:
                seq = hyp.tokens + (int(k),)
                entry = expansions.get(seq)
                if entry is None:
                    expansions[seq] = [float(cand[k]), hyp, int(k), [hyp.node]]
                else:
                    entry[0] = float(np.logaddexp(entry[0], cand[k]))
                    entry[3].append(hyp.node)
        if not expansions:
            break
        ranked = sorted(expansions.items(), key=lambda kv: -kv[1][0])[:cfg.beam_size]
        active = []
        for seq, (sc, parent, k, parent_nodes) in ranked:
            state, row = predictor.step(parent.lm_state, k)
            node = None
            if trace is not None:
                node = trace.node()
                for pn in parent_nodes:
                    trace.edge(node, pn, ("e", t, len(seq) - 1, k))
            active.append(Hypothesis(seq, sc, state, row, k, node))
    merged = sorted(completed.values(), key=lambda h: -h.score)
    return merged[:cfg.beam_size]


def _initial_beam(predictor, trace: SearchTrace | None = None) -> list[Hypothesis]:
    state, row = predictor.step(predictor.init_state(), None)
    node = trace.node() if trace is not None else None
    return [Hypothesis((), 0.0, state, row, None, node)]


def beam_search(enc: np.ndarray, model: FactorizedTransducer, predictor,
                fp: FusionParams, cfg: BeamConfig,
                trace: SearchTrace | None = None) -> list[tuple[list[int], float]]:
    """Time-synchronous beam search over encoder frames; returns top-N distinct
    (token sequence, merged fused log-score), best first."""
    enc = np.asarray(enc)
    if enc.shape[0] == 0:
        if trace is not None:
            trace.final_nodes = {(): trace.node()}
        return [([], 0.0)]
    scorer = _FrameScorer(model, enc)
    beam = _initial_beam(predictor, trace)
    for t in range(enc.shape[0]):
        beam = _advance_frame(scorer, predictor, fp, cfg, beam, t, trace)
    out = beam[:cfg.nbest]
    if trace is not None:
        trace.final_nodes = {h.tokens: h.node for h in out}
    return [(list(h.tokens), h.score) for h in out]


def greedy_search(enc: np.ndarray, model: FactorizedTransducer, predictor,
                  fp: FusionParams, max_symbols_per_frame=3) -> tuple[list[int], float]:
    """beam_search with B = 1, N = 1."""
    cfg = BeamConfig(beam_size=1, max_symbols_per_frame=max_symbols_per_frame, nbest=1)
    return beam_search(enc, model, predictor, fp, cfg)[0]


def swap_predictor(model: FactorizedTransducer, new_lm) -> FactorizedTransducer:
    """Replace the non-blank predictor; every other parameter is untouched."""
    old_v, new_v = model.vocab.tokens, new_lm.vocab.tokens
    if len(old_v) != len(new_v):
        raise ValueError(f"vocabulary size mismatch: model {len(old_v)} vs LM {len(new_v)}")
    for i, (a, b) in enumerate(zip(old_v, new_v)):
        if a != b:
            raise ValueError(f"vocabulary mismatch at id {i}: model '{a}' vs LM '{b}'")
    model.predictor = new_lm
    return model


# -- streaming session ---------------------------------------------------------

class StreamingSession:
    """Incremental decoding: push raw feature chunks, finalize for the N-best.

    Finalize matches offline beam_search token-for-token given equal encoder
    outputs; partial transcripts are best-so-far and may change while open.
    """

    def __init__(self, model: FactorizedTransducer, predictor, fp: FusionParams,
                 cfg: BeamConfig):
        self.model = model
        self.predictor = predictor
        self.fp = fp
        self.cfg = cfg
        self.enc_state = model.encoder.new_state()
        self.beam = _initial_beam(predictor)
        self.frames = 0
        self.finalized = False

    def _extend(self, enc_frames: np.ndarray):
        if enc_frames.shape[0] == 0:
            return
        scorer = _FrameScorer(self.model, enc_frames)
        for t in range(enc_frames.shape[0]):
            self.beam = _advance_frame(scorer, self.predictor, self.fp, self.cfg,
                                       self.beam, t)
        self.frames += enc_frames.shape[0]

    def push(self, feature_chunk: np.ndarray) -> list[int]:
        """Feed raw feature frames; returns the current best partial hypothesis."""
        if self.finalized:
            raise RuntimeError("push after finalize")
        self._extend(self.model.encoder.encode_stream(self.enc_state, feature_chunk))
        return list(self.beam[0].tokens)

    def finalize(self) -> list[tuple[list[int], float]]:
        """Flush the encoder and return the final ranked N-best."""
        if self.finalized:
            raise RuntimeError("finalize called twice")
        self._extend(self.model.encoder.finalize(self.enc_state))
        self.finalized = True
        if self.frames == 0:
            return [([], 0.0)]
        return [(list(h.tokens), h.score) for h in self.beam[:self.cfg.nbest]]


def session_push(session: StreamingSession, feature_chunk: np.ndarray) -> list[int]:
    return session.push(feature_chunk)


# -- differentiable rescoring --------------------------------------------------

def _lattice_terms(model: FactorizedTransducer, features, tokens: list[int],
                   fp: FusionParams, enc: Tensor | None = None):
    """Differentiable per-transition scores along a fixed token sequence.

    Returns (lpb [T, U+1] blank log-probs, F [T, U] fused emission scores,
    where F[t, u] scores emitting tokens[u] at frame t with u tokens already
    out). F is None when the sequence is empty.
    """
    if enc is None:
        enc = model.encoder.encode_full(features)
    lpb, l1mb = model.blank_logprobs(enc, tokens)
    T = lpb.shape[0]
    U = len(tokens)
    F = None
    if U > 0:
        lac = model.ac_logprobs(enc)
        lilm = model.predictor.logprobs_t(list(tokens))
        V = lac.shape[1]
        fused = lac.reshape(T, 1, V) + lilm[:U].reshape(1, U, V) * fp.alpha
        lse = ad.logsumexp(fused, axis=-1)
        idx_u = np.arange(U)
        idx_y = np.asarray(tokens, dtype=np.int64)
        picked = fused[:, idx_u, idx_y]
        ext = lilm[idx_u, idx_y] * fp.beta
        F = l1mb[:, :U] + picked - lse + ext.reshape(1, U)     # [T, U]
    return lpb, F


def rescore_trace(model: FactorizedTransducer, features, tokens: list[int],
                  trace: SearchTrace, fp: FusionParams,
                  enc: Tensor | None = None) -> Tensor:
    """Differentiable search-time score of one hypothesis returned by a traced
    beam_search: replays exactly the merged alignments the search kept, so the
    value matches the reported score up to float noise while the gradient
    flows into every parameter feeding the fused transition scores."""
    key = tuple(tokens)
    if key not in trace.final_nodes:
        raise ValueError("hypothesis was not among the traced N-best")
    final = trace.final_nodes[key]
    # parents before children; merge edges break creation order, so DFS
    order: list[int] = []
    seen: set[int] = set()
    stack: list[tuple[int, bool]] = [(final, False)]
    while stack:
        nd, expanded = stack.pop()
        if expanded:
            order.append(nd)
            continue
        if nd in seen:
            continue
        seen.add(nd)
        stack.append((nd, True))
        for parent, _ in trace.edges[nd]:
            stack.append((parent, False))
    lpb, F = _lattice_terms(model, features, tokens, fp, enc)
    # the search accumulates python floats (64-bit); upcast each 32-bit
    # transition term so the replayed sums round the same way
    up = Tensor(np.zeros((), dtype=np.float64))
    scores: dict[int, Tensor | None] = {}
    for nd in order:
        if not trace.edges[nd]:
            scores[nd] = None       # root hypothesis, log-score 0
            continue
        acc = None
        for parent, delta in trace.edges[nd]:
            if delta[0] == "b":
                d = lpb[delta[1], delta[2]] + up
            else:
                _, t, u, k = delta
                if k != tokens[u]:
                    raise AssertionError("trace edge diverges from hypothesis")
                d = F[t, u] + up
            term = d if scores[parent] is None else scores[parent] + d
            acc = term if acc is None else ad.logaddexp(acc, term)
        scores[nd] = acc
    out = scores[final]
    if out is None:                 # empty-input degenerate case
        return Tensor(np.zeros(()), requires_grad=False)
    return out


def score_sequence(model: FactorizedTransducer, features: np.ndarray, tokens: list[int],
                   fp: FusionParams, cfg: BeamConfig, enc: Tensor | None = None) -> Tensor:
    """Total fused log-score of a fixed token sequence: logsumexp over all
    alignments emitting at most max_symbols_per_frame tokens per frame.
    Differentiable w.r.t. all model parameters feeding the fused scores."""
    lpb, F = _lattice_terms(model, features, tokens, fp, enc)
    T = lpb.shape[0]
    U = len(tokens)
    c = cfg.max_symbols_per_frame
    neg1 = Tensor(np.array([NEG_INF], dtype=np.float64))
    beta_vec = Tensor(np.concatenate([[0.0], np.full(U, NEG_INF)]))
    for t in range(T):
        gamma = beta_vec
        acc = gamma
        for _ in range(min(c, U)):
            gamma = ad.concat([neg1, gamma[:U] + F[t]], axis=0)
            acc = ad.logaddexp(acc, gamma)
        beta_vec = acc + lpb[t]
    return beta_vec[U]

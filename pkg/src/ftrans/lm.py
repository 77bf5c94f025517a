"""Causal LMs used as non-blank predictors.

Three families, one interface:
  * CausalLM      — pre-norm transformer trunk, learned absolute positions;
                    plays the role of the large pre-trained LM (trunk can be
                    frozen so only embedding/output matrices train).
  * RecurrentLM   — 1-layer gated (GRU) LM, the "small" pre-trained predictor.
  * StatelessPredictor — order-1 predictor (previous token only), the weak
                    train-time predictor.

All expose: logprobs_t (differentiable [(L+1) x |vocab|] log-distributions,
BOS-conditioned), logprobs (plain numpy), init_state/step for incremental
decoding, params / trainable_params dicts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .archive import load_archive, save_archive
from .autodiff import Tensor
from .optim import Adam
from .tokenizer import BOS_ID, UNK_ID, TokenizerModel, Vocabulary

NEG_INF = -1e30


def _init(rng, shape, std=0.02, dtype=np.float32) -> Tensor:
    return Tensor((rng.standard_normal(shape) * std).astype(dtype), requires_grad=True)


def _zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def layer_norm(x: Tensor, g: Tensor, b: Tensor, eps=1e-5) -> Tensor:
    m = x.mean(axis=-1, keepdims=True)
    c = x - m
    v = (c * c).mean(axis=-1, keepdims=True)
    return c * (v + eps) ** -0.5 * g + b


def softmax(x: Tensor, axis=-1) -> Tensor:
    return ad.exp(ad.log_softmax(x, axis=axis))


class LMState:
    """Incremental decoding state; produced and consumed by one LM instance."""

    __slots__ = ("owner", "count", "kv", "hidden", "last_token")

    def __init__(self, owner, count=0, kv=None, hidden=None, last_token=None):
        self.owner = owner
        self.count = count
        self.kv = kv            # CausalLM: list of (K, V) numpy arrays [H, t, dh]
        self.hidden = hidden    # RecurrentLM: numpy vector [d]
        self.last_token = last_token  # StatelessPredictor


class CausalLM:
    """Pre-norm causal self-attention LM with learned absolute positions."""

    def __init__(self, vocab: Vocabulary, d_model=128, n_layers=4, n_heads=4,
                 d_ff=256, max_len=512, seed=0, dtype=np.float32, trunk_frozen=False):
        assert d_model % n_heads == 0
        self.vocab = vocab
        self.d_model, self.n_layers, self.n_heads, self.d_ff = d_model, n_layers, n_heads, d_ff
        self.max_len = max_len
        self.dtype = dtype
        self.trunk_frozen = trunk_frozen
        rng = np.random.default_rng(seed)
        V = len(vocab)
        p: dict[str, Tensor] = {
            "emb": _init(rng, (V, d_model), dtype=dtype),
            "out": _init(rng, (V, d_model), dtype=dtype),
            "trunk.pos": _init(rng, (max_len, d_model), dtype=dtype),
        }
        for l in range(n_layers):
            pre = f"trunk.{l}."
            p[pre + "ln1.g"] = _ones(d_model, dtype)
            p[pre + "ln1.b"] = _zeros(d_model, dtype)
            for w in ("wq", "wk", "wv", "wo"):
                p[pre + "attn." + w] = _init(rng, (d_model, d_model), dtype=dtype)
            p[pre + "ln2.g"] = _ones(d_model, dtype)
            p[pre + "ln2.b"] = _zeros(d_model, dtype)
            p[pre + "ff.w1"] = _init(rng, (d_ff, d_model), dtype=dtype)
            p[pre + "ff.b1"] = _zeros(d_ff, dtype)
            p[pre + "ff.w2"] = _init(rng, (d_model, d_ff), dtype=dtype)
            p[pre + "ff.b2"] = _zeros(d_model, dtype)
        p["trunk.ln_f.g"] = _ones(d_model, dtype)
        p["trunk.ln_f.b"] = _zeros(d_model, dtype)
        self.params = p

    @property
    def trainable_params(self) -> dict[str, Tensor]:
        if self.trunk_frozen:
            return {k: v for k, v in self.params.items() if not k.startswith("trunk.")}
        return self.params

    def _check_ids(self, tokens):
        V = len(self.vocab)
        for t in tokens:
            if not 0 <= t < V:
                raise ValueError(f"token id {t} out of range [0, {V})")

    def _attend(self, q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None) -> Tensor:
        dh = self.d_model // self.n_heads
        scores = q @ k.swapaxes(-1, -2) * (dh ** -0.5)
        if mask is not None:
            scores = scores + mask
        return softmax(scores) @ v

    def _split_heads(self, x: Tensor, L: int) -> Tensor:
        # [..., L, d] -> [..., H, L, dh]
        dh = self.d_model // self.n_heads
        lead = x.shape[:-2]
        return x.reshape(lead + (L, self.n_heads, dh)).swapaxes(-2, -3)

    def _merge_heads(self, x: Tensor, L: int) -> Tensor:
        lead = x.shape[:-3]
        return x.swapaxes(-2, -3).reshape(lead + (L, self.d_model))

    def _trunk(self, h: Tensor, mask: np.ndarray | None) -> Tensor:
        p = self.params
        L = h.shape[-2]
        for l in range(self.n_layers):
            pre = f"trunk.{l}."
            x = layer_norm(h, p[pre + "ln1.g"], p[pre + "ln1.b"])
            q = self._split_heads(x @ p[pre + "attn.wq"].T, L)
            k = self._split_heads(x @ p[pre + "attn.wk"].T, L)
            v = self._split_heads(x @ p[pre + "attn.wv"].T, L)
            a = self._merge_heads(self._attend(q, k, v, mask), L)
            h = h + a @ p[pre + "attn.wo"].T
            x = layer_norm(h, p[pre + "ln2.g"], p[pre + "ln2.b"])
            h = h + ad.tanh(x @ p[pre + "ff.w1"].T + p[pre + "ff.b1"]) @ p[pre + "ff.w2"].T + p[pre + "ff.b2"]
        return layer_norm(h, p["trunk.ln_f.g"], p["trunk.ln_f.b"])

    def logprobs_t(self, tokens: list[int]) -> Tensor:
        """Differentiable [(L+1) x |vocab|] next-token log-distributions."""
        return self.logprobs_batch([tokens])[0]

    def logprobs_batch(self, batch: list[list[int]]) -> list[Tensor]:
        """Batched forward over padded sequences; returns per-sequence rows."""
        for t in batch:
            self._check_ids(t)
        lens = [len(t) + 1 for t in batch]
        L = max(lens)
        if L > self.max_len:
            raise ValueError(f"sequence length {L} exceeds max_len {self.max_len}")
        ids = np.zeros((len(batch), L), dtype=np.int64)
        for i, t in enumerate(batch):
            ids[i, 0] = BOS_ID
            ids[i, 1:len(t) + 1] = t
        p = self.params
        h = p["emb"][ids] + p["trunk.pos"][:L]
        causal = np.triu(np.full((L, L), NEG_INF, dtype=self.dtype), k=1)
        h = self._trunk(h, causal)
        logits = h @ p["out"].T
        rows = ad.log_softmax(logits, axis=-1)
        return [rows[i, :lens[i]] for i in range(len(batch))]

    def logprobs(self, tokens: list[int]) -> np.ndarray:
        with ad.no_grad():
            return self.logprobs_t(tokens).data

    # -- incremental decoding ------------------------------------------
    def init_state(self) -> LMState:
        dh = self.d_model // self.n_heads
        kv = [(np.zeros((self.n_heads, 0, dh), dtype=self.dtype),
               np.zeros((self.n_heads, 0, dh), dtype=self.dtype))
              for _ in range(self.n_layers)]
        return LMState(self, count=0, kv=kv)

    def step(self, state: LMState, token: int | None) -> tuple[LMState, np.ndarray]:
        """Feed one token (None = BOS); returns (new state, next-token log-probs)."""
        if state.owner is not self:
            raise ValueError("LMState belongs to a different model")
        tid = BOS_ID if token is None else token
        self._check_ids([tid])
        p = self.params
        dh = self.d_model // self.n_heads
        with ad.no_grad():
            # Sliding window past max_len: clamp the position index and keep
            # only the most recent keys/values, so open-ended decoding never
            # runs off the positional table. Within max_len this is exact.
            pos = min(state.count, self.max_len - 1)
            keep = self.max_len - 1
            h = p["emb"].data[tid] + p["trunk.pos"].data[pos]  # [d]
            new_kv = []
            for l in range(self.n_layers):
                pre = f"trunk.{l}."
                x = _ln_np(h, p[pre + "ln1.g"].data, p[pre + "ln1.b"].data)
                q = (x @ p[pre + "attn.wq"].data.T).reshape(self.n_heads, 1, dh)
                k1 = (x @ p[pre + "attn.wk"].data.T).reshape(self.n_heads, 1, dh)
                v1 = (x @ p[pre + "attn.wv"].data.T).reshape(self.n_heads, 1, dh)
                K_prev, V_prev = state.kv[l]
                if K_prev.shape[1] > keep:
                    K_prev, V_prev = K_prev[:, -keep:], V_prev[:, -keep:]
                K = np.concatenate([K_prev, k1], axis=1)
                V = np.concatenate([V_prev, v1], axis=1)
                new_kv.append((K, V))
                scores = (q @ np.swapaxes(K, -1, -2)) * (dh ** -0.5)  # [H,1,t]
                scores -= scores.max(axis=-1, keepdims=True)
                w = np.exp(scores)
                w /= w.sum(axis=-1, keepdims=True)
                a = (w @ V).reshape(self.d_model)
                h = h + a @ p[pre + "attn.wo"].data.T
                x = _ln_np(h, p[pre + "ln2.g"].data, p[pre + "ln2.b"].data)
                h = h + np.tanh(x @ p[pre + "ff.w1"].data.T + p[pre + "ff.b1"].data) @ p[pre + "ff.w2"].data.T + p[pre + "ff.b2"].data
            h = _ln_np(h, p["trunk.ln_f.g"].data, p["trunk.ln_f.b"].data)
            logits = h @ p["out"].data.T
            logits -= logits.max()
            lp = logits - np.log(np.exp(logits).sum())
        return LMState(self, count=state.count + 1, kv=new_kv), lp

    # -- persistence -----------------------------------------------------
    def save(self, prefix, vocab_path=None):
        prefix = Path(prefix)
        save_archive(prefix.with_suffix(".fsta"), {k: v.data for k, v in self.params.items()})
        manifest = {
            "kind": "causal_lm",
            "vocab_path": str(vocab_path) if vocab_path else None,
            "vocab_size": len(self.vocab),
            "d_model": self.d_model, "n_layers": self.n_layers,
            "n_heads": self.n_heads, "d_ff": self.d_ff, "max_len": self.max_len,
            "trunk_frozen": self.trunk_frozen,
        }
        prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, prefix, vocab: Vocabulary) -> "CausalLM":
        prefix = Path(prefix)
        m = json.loads(prefix.with_suffix(".json").read_text())
        lm = cls(vocab, d_model=m["d_model"], n_layers=m["n_layers"], n_heads=m["n_heads"],
                 d_ff=m["d_ff"], max_len=m["max_len"], trunk_frozen=m["trunk_frozen"])
        tensors = load_archive(prefix.with_suffix(".fsta"))
        for k, v in tensors.items():
            lm.params[k].data = v.copy()
        return lm


def _ln_np(x, g, b, eps=1e-5):
    m = x.mean(axis=-1, keepdims=True) if x.ndim > 1 else x.mean()
    c = x - m
    v = (c * c).mean(axis=-1, keepdims=True) if x.ndim > 1 else (c * c).mean()
    return c / np.sqrt(v + eps) * g + b


class RecurrentLM:
    """1-layer GRU language model (the "small" pre-trained predictor)."""

    def __init__(self, vocab: Vocabulary, d_model=64, seed=0, dtype=np.float32):
        self.vocab = vocab
        self.d_model = d_model
        self.dtype = dtype
        self.trunk_frozen = False
        rng = np.random.default_rng(seed)
        V = len(vocab)
        d = d_model
        self.params = {
            "emb": _init(rng, (V, d), dtype=dtype),
            "wxz": _init(rng, (d, d), std=0.1, dtype=dtype), "whz": _init(rng, (d, d), std=0.1, dtype=dtype), "bz": _zeros(d, dtype),
            "wxr": _init(rng, (d, d), std=0.1, dtype=dtype), "whr": _init(rng, (d, d), std=0.1, dtype=dtype), "br": _zeros(d, dtype),
            "wxh": _init(rng, (d, d), std=0.1, dtype=dtype), "whh": _init(rng, (d, d), std=0.1, dtype=dtype), "bh": _zeros(d, dtype),
            "out": _init(rng, (V, d), dtype=dtype),
        }

    @property
    def trainable_params(self):
        return self.params

    def _check_ids(self, tokens):
        V = len(self.vocab)
        for t in tokens:
            if not 0 <= t < V:
                raise ValueError(f"token id {t} out of range [0, {V})")

    def _cell(self, x: Tensor, h: Tensor) -> Tensor:
        p = self.params
        z = ad.sigmoid(x @ p["wxz"].T + h @ p["whz"].T + p["bz"])
        r = ad.sigmoid(x @ p["wxr"].T + h @ p["whr"].T + p["br"])
        hc = ad.tanh(x @ p["wxh"].T + (r * h) @ p["whh"].T + p["bh"])
        return (1.0 - z) * h + z * hc

    def logprobs_batch(self, batch: list[list[int]]) -> list[Tensor]:
        for t in batch:
            self._check_ids(t)
        lens = [len(t) + 1 for t in batch]
        L = max(lens)
        B = len(batch)
        ids = np.zeros((B, L), dtype=np.int64)
        for i, t in enumerate(batch):
            ids[i, 0] = BOS_ID
            ids[i, 1:len(t) + 1] = t
        p = self.params
        x = p["emb"][ids]  # [B, L, d]
        h = Tensor(np.zeros((B, self.d_model), dtype=self.dtype))
        hs = []
        for u in range(L):
            h = self._cell(x[:, u], h)
            hs.append(h)
        H = ad.stack(hs, axis=1)  # [B, L, d]
        rows = ad.log_softmax(H @ p["out"].T, axis=-1)
        return [rows[i, :lens[i]] for i in range(B)]

    def logprobs_t(self, tokens: list[int]) -> Tensor:
        return self.logprobs_batch([tokens])[0]

    def logprobs(self, tokens: list[int]) -> np.ndarray:
        with ad.no_grad():
            return self.logprobs_t(tokens).data

    def init_state(self) -> LMState:
        return LMState(self, count=0, hidden=np.zeros(self.d_model, dtype=self.dtype))

    def step(self, state: LMState, token: int | None) -> tuple[LMState, np.ndarray]:
        if state.owner is not self:
            raise ValueError("LMState belongs to a different model")
        tid = BOS_ID if token is None else token
        self._check_ids([tid])
        with ad.no_grad():
            x = Tensor(self.params["emb"].data[tid][None, :])
            h = self._cell(x, Tensor(state.hidden[None, :]))
            logits = h @ self.params["out"].T
            lp = ad.log_softmax(logits, axis=-1).data[0]
        return LMState(self, count=state.count + 1, hidden=h.data[0]), lp

    def save(self, prefix, vocab_path=None):
        prefix = Path(prefix)
        save_archive(prefix.with_suffix(".fsta"), {k: v.data for k, v in self.params.items()})
        manifest = {"kind": "recurrent_lm", "vocab_path": str(vocab_path) if vocab_path else None,
                    "vocab_size": len(self.vocab), "d_model": self.d_model, "trunk_frozen": False}
        prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, prefix, vocab: Vocabulary) -> "RecurrentLM":
        prefix = Path(prefix)
        m = json.loads(prefix.with_suffix(".json").read_text())
        lm = cls(vocab, d_model=m["d_model"])
        for k, v in load_archive(prefix.with_suffix(".fsta")).items():
            lm.params[k].data = v.copy()
        return lm


class StatelessPredictor:
    """Order-1 non-blank predictor: distribution depends on the previous token only."""

    def __init__(self, vocab: Vocabulary, d_model=64, seed=0, dtype=np.float32):
        self.vocab = vocab
        self.d_model = d_model
        self.dtype = dtype
        self.trunk_frozen = False
        rng = np.random.default_rng(seed)
        V = len(vocab)
        self.params = {
            "emb": _init(rng, (V, d_model), dtype=dtype),
            "bos": _zeros(d_model, dtype),
            "out": _zeros((V, d_model), dtype),  # zero projection => uniform start
        }

    @property
    def trainable_params(self):
        return self.params

    def _check_ids(self, tokens):
        V = len(self.vocab)
        for t in tokens:
            if not 0 <= t < V:
                raise ValueError(f"token id {t} out of range [0, {V})")

    def logprobs_t(self, tokens: list[int]) -> Tensor:
        self._check_ids(tokens)
        p = self.params
        if tokens:
            ctx = ad.concat([p["bos"].reshape(1, self.d_model), p["emb"][np.asarray(tokens, dtype=np.int64)]], axis=0)
        else:
            ctx = p["bos"].reshape(1, self.d_model)
        return ad.log_softmax(ctx @ p["out"].T, axis=-1)

    def logprobs_batch(self, batch: list[list[int]]) -> list[Tensor]:
        return [self.logprobs_t(t) for t in batch]

    def logprobs(self, tokens: list[int]) -> np.ndarray:
        with ad.no_grad():
            return self.logprobs_t(tokens).data

    def init_state(self) -> LMState:
        return LMState(self, count=0, last_token=None)

    def step(self, state: LMState, token: int | None) -> tuple[LMState, np.ndarray]:
        if state.owner is not self:
            raise ValueError("LMState belongs to a different model")
        with ad.no_grad():
            p = self.params
            ctx = p["bos"].data if token is None else p["emb"].data[token]
            logits = p["out"].data @ ctx
            logits = logits - logits.max()
            lp = logits - np.log(np.exp(logits).sum())
        return LMState(self, count=state.count + 1, last_token=token), lp

    def save(self, prefix, vocab_path=None):
        prefix = Path(prefix)
        save_archive(prefix.with_suffix(".fsta"), {k: v.data for k, v in self.params.items()})
        manifest = {"kind": "stateless", "vocab_path": str(vocab_path) if vocab_path else None,
                    "vocab_size": len(self.vocab), "d_model": self.d_model, "trunk_frozen": False}
        prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, prefix, vocab: Vocabulary) -> "StatelessPredictor":
        prefix = Path(prefix)
        m = json.loads(prefix.with_suffix(".json").read_text())
        lm = cls(vocab, d_model=m["d_model"])
        for k, v in load_archive(prefix.with_suffix(".fsta")).items():
            lm.params[k].data = v.copy()
        return lm


# -- training ---------------------------------------------------------------

def train_lm(lm, corpus: list[list[int]], epochs: int, lr: float, batch_size=32,
             seed=0, held_out: list[list[int]] | None = None, patience: int | None = None,
             clip_norm=5.0) -> list[float]:
    """Train by next-token cross-entropy; returns per-epoch training perplexity.

    With held_out and patience set, stops once held-out perplexity fails to
    improve `patience` epochs in a row. Frozen trunks are never updated.
    """
    if not corpus:
        raise ValueError("empty corpus")
    opt = Adam(lm.trainable_params, lr=lr, clip_norm=clip_norm)
    rng = np.random.default_rng(seed)
    ppls: list[float] = []
    best_held = np.inf
    bad = 0
    for _ in range(epochs):
        order = rng.permutation(len(corpus))
        tot_nll, tot_tok = 0.0, 0
        for start in range(0, len(order), batch_size):
            batch = [corpus[i] for i in order[start:start + batch_size]]
            opt.zero_grad()
            loss, ntok = _lm_batch_nll(lm, batch)
            (loss * (1.0 / ntok)).backward()
            opt.step()
            tot_nll += loss.item()
            tot_tok += ntok
        ppls.append(float(np.exp(tot_nll / max(tot_tok, 1))))
        if held_out is not None and patience is not None:
            h = perplexity(lm, held_out)
            if h < best_held - 1e-6:
                best_held, bad = h, 0
            else:
                bad += 1
                if bad >= patience:
                    break
    return ppls


def _lm_batch_nll(lm, batch: list[list[int]]):
    """Summed next-token NLL over a batch (predicting each token from its prefix)."""
    rows = lm.logprobs_batch(batch)
    total = None
    ntok = 0
    for seq, r in zip(batch, rows):
        if not seq:
            continue
        picked = r[np.arange(len(seq)), np.asarray(seq, dtype=np.int64)]
        s = -picked.sum()
        total = s if total is None else total + s
        ntok += len(seq)
    if total is None:
        raise ValueError("batch contains no tokens")
    return total, ntok


def perplexity(lm, corpus: list[list[int]]) -> float:
    """exp(mean next-token NLL), BOS-conditioned, no end-of-sentence token."""
    if not corpus:
        raise ValueError("empty corpus")
    tot, n = 0.0, 0
    with ad.no_grad():
        for seq in corpus:
            if not seq:
                continue
            rows = lm.logprobs(seq)
            tot -= float(rows[np.arange(len(seq)), np.asarray(seq)].sum())
            n += len(seq)
    if n == 0:
        raise ValueError("corpus has no tokens")
    return float(np.exp(tot / n))


# -- vocabulary adaptation ----------------------------------------------------

@dataclass
class AdaptationReport:
    copied: list[str] = field(default_factory=list)
    averaged: list[str] = field(default_factory=list)
    random: list[str] = field(default_factory=list)

    @property
    def counts(self) -> dict[str, int]:
        return {"copy": len(self.copied), "mean": len(self.averaged), "random": len(self.random)}

    def fractions(self, total: int) -> dict[str, float]:
        return {k: v / total for k, v in self.counts.items()}


def _segment_piece(tok: TokenizerModel, piece: str) -> list[int]:
    """Greedy longest-match of a raw token string (marker included) against a
    source vocabulary; uncoverable characters are skipped, so the result holds
    only non-UNK subtoken ids (possibly none)."""
    ids: list[int] = []
    pos = 0
    while pos < len(piece):
        hit = None
        for ln in range(min(tok._max_len, len(piece) - pos), 0, -1):
            cand = tok.vocab.id_of(piece[pos:pos + ln])
            if cand is not None and cand not in (BOS_ID, UNK_ID):
                hit, pos = cand, pos + ln
                break
        if hit is None:
            pos += 1
        else:
            ids.append(hit)
    return ids


def adapt_vocabulary(src: CausalLM, src_tok: TokenizerModel,
                     tgt_vocab: Vocabulary, seed=0) -> tuple[CausalLM, AdaptationReport]:
    """Retarget a large LM to a new vocabulary by rebuilding its embedding and
    output matrices: exact copy for shared tokens, subtoken mean for
    decomposable tokens, moment-matched random rows otherwise. The trunk is
    shared unchanged and frozen.
    """
    if src_tok.vocab is not src.vocab and src_tok.vocab.tokens != src.vocab.tokens:
        raise ValueError("source tokenizer and source LM vocabulary differ")
    d = src.d_model
    V = len(tgt_vocab)
    emb_src = src.params["emb"].data
    out_src = src.params["out"].data
    rng = np.random.default_rng(seed)
    report = AdaptationReport()

    new_emb = np.zeros((V, d), dtype=emb_src.dtype)
    new_out = np.zeros((V, d), dtype=out_src.dtype)
    stats = {}
    for name, mat in (("emb", emb_src), ("out", out_src)):
        stats[name] = (mat.mean(axis=0), mat.std(axis=0))
    for i, t in enumerate(tgt_vocab.tokens):
        j = src.vocab.id_of(t)
        if j is not None:
            new_emb[i] = emb_src[j]
            new_out[i] = out_src[j]
            report.copied.append(t)
            continue
        sub = _segment_piece(src_tok, t)
        if sub:
            new_emb[i] = emb_src[sub].mean(axis=0)
            new_out[i] = out_src[sub].mean(axis=0)
            report.averaged.append(t)
        else:
            mu, sd = stats["emb"]
            new_emb[i] = mu + sd * rng.standard_normal(d)
            mu, sd = stats["out"]
            new_out[i] = mu + sd * rng.standard_normal(d)
            report.random.append(t)

    adapted = CausalLM(tgt_vocab, d_model=src.d_model, n_layers=src.n_layers,
                       n_heads=src.n_heads, d_ff=src.d_ff, max_len=src.max_len,
                       trunk_frozen=True)
    adapted.params["emb"] = Tensor(new_emb, requires_grad=True)
    adapted.params["out"] = Tensor(new_out, requires_grad=True)
    for k in list(adapted.params):
        if k.startswith("trunk."):
            adapted.params[k] = src.params[k]  # shared, frozen
    return adapted, report

"""Factorized transducer: sigmoid blank head, decoupled non-blank distribution,
exact lattice loss (log-domain forward recursion, diagonal-vectorized), an
alignment-enumeration oracle, the auxiliary predictor cross-entropy loss, and
the training step."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .archive import load_archive, save_archive
from .autodiff import Tensor
from .encoder import ChunkedEncoder
from .lm import CausalLM, RecurrentLM, StatelessPredictor, _init, _zeros
from .optim import Adam
from .tokenizer import Vocabulary

NEG_INF = -np.inf


@dataclass
class LatticeDistributions:
    """Per-utterance grids defining the factorized transducer distribution.

    logp_blank / log1m_blank: [T, U+1]; logp_ac: [T, |V|] (normalized rows);
    logp_ilm: [U+1, |V|] (normalized rows). Entries may be numpy arrays or
    Tensors; Tensors keep the loss differentiable.
    """
    logp_blank: object
    log1m_blank: object
    logp_ac: object
    logp_ilm: object

    def as_tensors(self):
        return tuple(x if isinstance(x, Tensor) else Tensor(x)
                     for x in (self.logp_blank, self.log1m_blank, self.logp_ac, self.logp_ilm))


@dataclass
class RNNTLossResult:
    loss: Tensor                 # scalar, differentiable
    alpha: np.ndarray            # [T, U+1] forward grid, log domain


class FactorizedTransducer:
    """Blank head + acoustic projection over a shared encoder, with a swappable
    non-blank predictor (stateless at train time, any causal LM after swap)."""

    def __init__(self, encoder: ChunkedEncoder, vocab: Vocabulary, predictor,
                 d_blank=64, d_joint=128, seed=0, dtype=np.float32):
        self.encoder = encoder
        self.vocab = vocab
        self.predictor = predictor
        self.d_blank, self.d_joint = d_blank, d_joint
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        V = len(vocab)
        self.bos_row = V  # extra blank-embedding row for the BOS context
        self.params = {
            "blank.emb": _init(rng, (V + 1, d_blank), dtype=dtype),
            "blank.joiner.A": _init(rng, (d_joint, encoder.d_model), dtype=dtype),
            "blank.joiner.B": _init(rng, (d_joint, d_blank), dtype=dtype),
            "blank.joiner.w": _zeros(d_joint, dtype),
            "ac.proj": _init(rng, (V, encoder.d_model), dtype=dtype),
        }

    # -- parameter plumbing ------------------------------------------------
    def all_params(self) -> dict[str, Tensor]:
        out = dict(self.params)
        out.update(self.encoder.params)
        for k, v in self.predictor.params.items():
            out["pred." + k] = v
        return out

    def trainable_params(self) -> dict[str, Tensor]:
        out = dict(self.params)
        out.update(self.encoder.params)
        for k, v in self.predictor.trainable_params.items():
            out["pred." + k] = v
        return out

    # -- distribution pieces -------------------------------------------------
    def blank_logprobs(self, enc: Tensor, targets: list[int]) -> tuple[Tensor, Tensor]:
        """[T, U+1] grids (log P_b, log(1-P_b)); context y_0 is the BOS row."""
        p = self.params
        ys = np.asarray([self.bos_row] + list(targets), dtype=np.int64)
        ea = enc @ p["blank.joiner.A"].T                       # [T, d_j]
        eb = p["blank.emb"][ys] @ p["blank.joiner.B"].T        # [U+1, d_j]
        T, U1 = ea.shape[0], len(ys)
        z = ad.tanh(ea.reshape(T, 1, self.d_joint) + eb.reshape(1, U1, self.d_joint)) \
            @ p["blank.joiner.w"].reshape(self.d_joint, 1)
        z = z.reshape(T, U1)
        return ad.log_sigmoid_pair(z)

    def ac_logprobs(self, enc: Tensor) -> Tensor:
        """[T, |V|] normalized acoustic log-distributions."""
        return ad.log_softmax(enc @ self.params["ac.proj"].T, axis=-1)

    def lattice(self, features: np.ndarray, targets: list[int],
                ilm_rows: Tensor | None = None) -> LatticeDistributions:
        enc = self.encoder.encode_full(features)
        lpb, l1mb = self.blank_logprobs(enc, targets)
        lac = self.ac_logprobs(enc)
        if ilm_rows is None:
            ilm_rows = self.predictor.logprobs_t(list(targets))
        return LatticeDistributions(lpb, l1mb, lac, ilm_rows)

    # -- persistence -----------------------------------------------------
    def save(self, prefix, vocab_path=None):
        prefix = Path(prefix)
        save_archive(prefix.with_suffix(".fsta"), {k: v.data for k, v in self.all_params().items()})
        manifest = {
            "kind": "factorized_transducer",
            "vocab_path": str(vocab_path) if vocab_path else None,
            "vocab_size": len(self.vocab),
            "d_blank": self.d_blank, "d_joint": self.d_joint,
            "encoder": {"d_feat": self.encoder.d_feat, "d_model": self.encoder.d_model,
                        "n_layers": self.encoder.n_layers, "n_heads": self.encoder.n_heads,
                        "d_ff": self.encoder.d_ff, "chunk_frames": self.encoder.chunk_frames,
                        "max_frames": self.encoder.max_frames},
            "predictor": {"kind": _pred_kind(self.predictor), "d_model": self.predictor.d_model,
                          **_pred_extra(self.predictor)},
        }
        prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, prefix, vocab: Vocabulary) -> "FactorizedTransducer":
        prefix = Path(prefix)
        m = json.loads(prefix.with_suffix(".json").read_text())
        e = m["encoder"]
        encoder = ChunkedEncoder(d_feat=e["d_feat"], d_model=e["d_model"], n_layers=e["n_layers"],
                                 n_heads=e["n_heads"], d_ff=e["d_ff"], chunk_frames=e["chunk_frames"],
                                 max_frames=e["max_frames"])
        pm = m["predictor"]
        predictor = _build_predictor(pm, vocab)
        model = cls(encoder, vocab, predictor, d_blank=m["d_blank"], d_joint=m["d_joint"])
        tensors = load_archive(prefix.with_suffix(".fsta"))
        for k, v in model.all_params().items():
            v.data = tensors[k].copy()
        return model


def _pred_kind(pred) -> str:
    return {StatelessPredictor: "stateless", RecurrentLM: "recurrent_lm",
            CausalLM: "causal_lm"}[type(pred)]


def _pred_extra(pred) -> dict:
    if isinstance(pred, CausalLM):
        return {"n_layers": pred.n_layers, "n_heads": pred.n_heads, "d_ff": pred.d_ff,
                "max_len": pred.max_len, "trunk_frozen": pred.trunk_frozen}
    return {}


def _build_predictor(pm: dict, vocab: Vocabulary):
    kind = pm["kind"]
    if kind == "stateless":
        return StatelessPredictor(vocab, d_model=pm["d_model"])
    if kind == "recurrent_lm":
        return RecurrentLM(vocab, d_model=pm["d_model"])
    if kind == "causal_lm":
        lm = CausalLM(vocab, d_model=pm["d_model"], n_layers=pm["n_layers"], n_heads=pm["n_heads"],
                      d_ff=pm["d_ff"], max_len=pm["max_len"], trunk_frozen=pm["trunk_frozen"])
        return lm
    raise ValueError(f"unknown predictor kind '{kind}'")


# -- distribution/normalization ----------------------------------------------

def factorized_distribution(logp_ac_row, logp_ilm_row, logp_b, log1m_pb) -> Tensor:
    """log P_nb over |V|: log(1-P_b) + log_softmax(log P_ac + log P_ilm)."""
    a = logp_ac_row if isinstance(logp_ac_row, Tensor) else Tensor(logp_ac_row)
    i = logp_ilm_row if isinstance(logp_ilm_row, Tensor) else Tensor(logp_ilm_row)
    if a.shape != i.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {i.shape}")
    return log1m_pb + ad.log_softmax(a + i, axis=-1)


def _target_lognb(l1mb: Tensor, lac: Tensor, lilm: Tensor, targets: list[int]) -> Tensor:
    """[T, U] grid: log P_nb(y_{u+1} | t, u) for u = 0..U-1."""
    T = lac.shape[0]
    U = len(targets)
    V = lac.shape[1]
    fused = lac.reshape(T, 1, V) + lilm[:U].reshape(1, U, V)
    lse = ad.logsumexp(fused, axis=-1)                        # [T, U]
    picked = fused[:, np.arange(U), np.asarray(targets, dtype=np.int64)]
    return l1mb[:, :U] + picked - lse


def rnnt_forward_loss(dists: LatticeDistributions, targets: list[int]) -> RNNTLossResult:
    """Exact transducer NLL by log-domain forward recursion over anti-diagonals."""
    lpb, l1mb, lac, lilm = dists.as_tensors()
    for x, nm in ((lpb, "logP_b"), (l1mb, "log1m_Pb"), (lac, "logP_ac"), (lilm, "logP_ilm")):
        if np.isnan(x.data).any():
            raise FloatingPointError(f"NaN in {nm} grid")
    T, U1 = lpb.shape
    U = len(targets)
    if U1 != U + 1:
        raise ValueError(f"blank grid has {U1} columns, expected U+1={U + 1}")
    for y in targets:
        if not 0 <= y < lac.shape[1]:
            raise ValueError(f"target id {y} out of range")

    alpha = np.full((T, U + 1), NEG_INF)
    alpha[0, 0] = 0.0
    if U == 0:
        loss = -lpb.sum()
        with np.errstate(invalid="ignore"):
            alpha[:, 0] = np.concatenate([[0.0], np.cumsum(lpb.data[:-1, 0])])
        return RNNTLossResult(loss, alpha)

    lognb = _target_lognb(l1mb, lac, lilm, targets)           # [T, U]
    neg = Tensor(np.array([NEG_INF], dtype=lpb.dtype))
    diag_prev = Tensor(np.zeros(1, dtype=lpb.dtype))          # alpha(0,0)
    tlo_prev = 0
    for d in range(1, T + U):
        tlo = max(0, d - U)
        thi = min(d, T - 1)
        ts = np.arange(tlo, thi + 1)
        us = d - ts
        pad = ad.concat([neg, diag_prev, neg], axis=0)
        len_p = diag_prev.shape[0]
        # blank parent (t-1, u)
        ib = np.clip(ts - 1 - tlo_prev + 1, 0, len_p + 1)
        blank = pad[ib] + lpb[np.clip(ts - 1, 0, T - 1), us]
        # label parent (t, u-1)
        il = np.clip(ts - tlo_prev + 1, 0, len_p + 1)
        label = pad[il] + lognb[ts, np.clip(us - 1, 0, U - 1)]
        diag_prev = ad.logaddexp(blank, label)
        tlo_prev = tlo
        alpha[ts, us] = diag_prev.data
    loss = -(diag_prev[0] + lpb[T - 1, U])
    return RNNTLossResult(loss.reshape(()), alpha)


def rnnt_loss_oracle(dists: LatticeDistributions, targets: list[int]) -> float:
    """Brute-force NLL: enumerate every monotone alignment in 64-bit. Test-only."""
    lpb, l1mb, lac, lilm = dists.as_tensors()
    lpb, l1mb = lpb.data.astype(np.float64), l1mb.data.astype(np.float64)
    lac, lilm = lac.data.astype(np.float64), lilm.data.astype(np.float64)
    T = lpb.shape[0]
    U = len(targets)
    if T * U > 12:
        raise ValueError(f"instance too large for enumeration (T*U={T * U} > 12)")

    def lognb(t, u):
        fused = lac[t] + lilm[u]
        m = fused.max()
        return l1mb[t, u] + fused[targets[u]] - (m + np.log(np.exp(fused - m).sum()))

    paths: list[float] = []

    def walk(t, u, acc):
        if t == T - 1 and u == U:
            paths.append(acc + lpb[T - 1, U])
            return
        if t < T - 1:
            walk(t + 1, u, acc + lpb[t, u])
        if u < U:
            walk(t, u + 1, acc + lognb(t, u))

    walk(0, 0, 0.0)
    rnnt_loss_oracle.last_path_count = len(paths)
    m = max(paths)
    return float(-(m + np.log(np.sum(np.exp(np.asarray(paths) - m)))))


def ilm_ce_loss(predictor, targets: list[int]) -> Tensor:
    """Mean next-token NLL of the current non-blank predictor on the transcript."""
    if not targets:
        raise ValueError("empty targets")
    rows = predictor.logprobs_t(list(targets))
    picked = rows[np.arange(len(targets)), np.asarray(targets, dtype=np.int64)]
    return -picked.mean()


def train_step(model: FactorizedTransducer, batch, opt: Adam, lam_ilm=0.2,
               detach_lattice_ilm=False) -> dict[str, float]:
    """One optimization step on a batch of (features, target ids, utt id) triples.

    Objective: mean lattice NLL + lam_ilm * mean predictor cross-entropy.
    """
    opt.zero_grad()
    total = None
    rnnt_sum, ilm_sum = 0.0, 0.0
    for features, targets, utt_id in batch:
        ilm_rows = model.predictor.logprobs_t(list(targets))
        lattice_rows = ilm_rows.detach() if detach_lattice_ilm else ilm_rows
        dists = model.lattice(features, targets, ilm_rows=lattice_rows)
        res = rnnt_forward_loss(dists, targets)
        loss_u = res.loss
        rnnt_sum += res.loss.item()
        if lam_ilm != 0.0 and targets:
            picked = ilm_rows[np.arange(len(targets)), np.asarray(targets, dtype=np.int64)]
            ce = -picked.mean()
            ilm_sum += ce.item()
            loss_u = loss_u + lam_ilm * ce
        if not np.isfinite(loss_u.item()):
            raise FloatingPointError(f"non-finite loss on utterance '{utt_id}'")
        total = loss_u if total is None else total + loss_u
    n = len(batch)
    (total * (1.0 / n)).backward()
    grad_norm = opt.step()
    return {"rnnt_loss": rnnt_sum / n, "ilm_loss": ilm_sum / n, "grad_norm": grad_norm}

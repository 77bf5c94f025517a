"""Streaming acoustic encoder: 4x frame stacking then chunked-causal attention.

Position i may attend position j iff chunk(j) <= chunk(i), so each frame sees
its whole chunk plus all earlier chunks (unbounded left context). Streaming
push-based processing reproduces full-utterance processing because completed
chunks never revisit later input.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .lm import NEG_INF, _init, _ones, _zeros, layer_norm, softmax

SUBSAMPLE = 4


def subsample(features: np.ndarray) -> np.ndarray:
    """Stack frames with stride 4; the last group is zero-padded."""
    features = np.asarray(features)
    t0, d = features.shape
    t = -(-t0 // SUBSAMPLE)
    buf = np.zeros((t * SUBSAMPLE, d), dtype=features.dtype)
    buf[:t0] = features
    return buf.reshape(t, SUBSAMPLE * d)


class EncoderState:
    """Per-session streaming state: raw-frame buffer plus per-layer KV caches."""

    __slots__ = ("owner", "raw_buf", "kv", "pos", "finalized")

    def __init__(self, owner, d_feat):
        self.owner = owner
        self.raw_buf = np.zeros((0, d_feat), dtype=np.float32)
        dh = owner.d_model // owner.n_heads
        self.kv = [(np.zeros((owner.n_heads, 0, dh), dtype=owner.dtype),
                    np.zeros((owner.n_heads, 0, dh), dtype=owner.dtype))
                   for _ in range(owner.n_layers)]
        self.pos = 0
        self.finalized = False


class ChunkedEncoder:
    def __init__(self, d_feat=80, d_model=128, n_layers=4, n_heads=4, d_ff=256,
                 chunk_frames=16, max_frames=512, seed=0, dtype=np.float32):
        assert d_model % n_heads == 0
        self.d_feat, self.d_model, self.n_layers = d_feat, d_model, n_layers
        self.n_heads, self.d_ff = n_heads, d_ff
        self.chunk_frames = chunk_frames
        self.max_frames = max_frames
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        p: dict[str, Tensor] = {
            "enc.subsample.proj": _init(rng, (d_model, SUBSAMPLE * d_feat), dtype=dtype),
            "enc.subsample.bias": _zeros(d_model, dtype),
            "enc.pos": _init(rng, (max_frames, d_model), dtype=dtype),
        }
        for l in range(n_layers):
            pre = f"enc.{l}."
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
        p["enc.ln_f.g"] = _ones(d_model, dtype)
        p["enc.ln_f.b"] = _zeros(d_model, dtype)
        self.params = p

    def _heads(self, x: Tensor, L: int) -> Tensor:
        dh = self.d_model // self.n_heads
        return x.reshape((L, self.n_heads, dh)).swapaxes(0, 1)

    def _block(self, h: Tensor, l: int, mask: np.ndarray | None,
               kv_cache=None) -> tuple[Tensor, tuple]:
        """One pre-norm block. With kv_cache, new keys/values are appended and
        attention spans cache + current frames (no mask needed per chunk)."""
        p = self.params
        L = h.shape[0]
        pre = f"enc.{l}."
        x = layer_norm(h, p[pre + "ln1.g"], p[pre + "ln1.b"])
        q = self._heads(x @ p[pre + "attn.wq"].T, L)
        k = self._heads(x @ p[pre + "attn.wk"].T, L)
        v = self._heads(x @ p[pre + "attn.wv"].T, L)
        new_kv = None
        if kv_cache is not None:
            k_full = np.concatenate([kv_cache[0], k.data], axis=1)
            v_full = np.concatenate([kv_cache[1], v.data], axis=1)
            new_kv = (k_full, v_full)
            k, v = Tensor(k_full), Tensor(v_full)
        dh = self.d_model // self.n_heads
        scores = q @ k.swapaxes(-1, -2) * (dh ** -0.5)
        if mask is not None:
            scores = scores + mask
        a = (softmax(scores) @ v).swapaxes(0, 1).reshape((L, self.d_model))
        h = h + a @ p[pre + "attn.wo"].T
        x = layer_norm(h, p[pre + "ln2.g"], p[pre + "ln2.b"])
        h = h + ad.tanh(x @ p[pre + "ff.w1"].T + p[pre + "ff.b1"]) @ p[pre + "ff.w2"].T + p[pre + "ff.b2"]
        return h, new_kv

    def encode_full(self, features: np.ndarray, chunk_frames: int | None = None) -> Tensor:
        """Full-utterance encoding with a chunked-causal attention mask."""
        c = self.chunk_frames if chunk_frames is None else chunk_frames
        if c < 1:
            raise ValueError("chunk_frames must be >= 1")
        stacked = subsample(np.asarray(features, dtype=self.dtype))
        T = stacked.shape[0]
        if T > self.max_frames:
            raise ValueError(f"{T} frames exceed max_frames {self.max_frames}")
        p = self.params
        h = Tensor(stacked) @ p["enc.subsample.proj"].T + p["enc.subsample.bias"] + p["enc.pos"][:T]
        ci = np.arange(T) // c
        mask = np.where(ci[None, :] <= ci[:, None], 0.0, NEG_INF).astype(self.dtype)
        for l in range(self.n_layers):
            h, _ = self._block(h, l, mask)
        out = layer_norm(h, p["enc.ln_f.g"], p["enc.ln_f.b"])
        ad.check_finite(out, "encoder output")
        return out

    # -- streaming --------------------------------------------------------
    def new_state(self) -> EncoderState:
        return EncoderState(self, self.d_feat)

    def _process_chunk(self, state: EncoderState, stacked: np.ndarray) -> np.ndarray:
        p = self.params
        T = stacked.shape[0]
        with ad.no_grad():
            h = Tensor(stacked) @ p["enc.subsample.proj"].T + p["enc.subsample.bias"] \
                + p["enc.pos"][state.pos:state.pos + T]
            for l in range(self.n_layers):
                h, new_kv = self._block(h, l, None, kv_cache=state.kv[l])
                state.kv[l] = new_kv
            out = layer_norm(h, p["enc.ln_f.g"], p["enc.ln_f.b"])
        state.pos += T
        return out.data

    def encode_stream(self, state: EncoderState, feature_chunk: np.ndarray) -> np.ndarray:
        """Push raw feature frames; returns encoder frames for chunks completed
        by this push. Call finalize() to flush the residual."""
        if state.finalized:
            raise RuntimeError("push after finalize")
        chunk = np.asarray(feature_chunk, dtype=np.float32)
        if chunk.size:
            state.raw_buf = np.concatenate([state.raw_buf, chunk.reshape(-1, self.d_feat)], axis=0)
        raw_per_chunk = SUBSAMPLE * self.chunk_frames
        outs = []
        while state.raw_buf.shape[0] >= raw_per_chunk:
            raw = state.raw_buf[:raw_per_chunk]
            state.raw_buf = state.raw_buf[raw_per_chunk:]
            outs.append(self._process_chunk(state, subsample(raw.astype(self.dtype))))
        if outs:
            return np.concatenate(outs, axis=0)
        return np.zeros((0, self.d_model), dtype=self.dtype)

    def finalize(self, state: EncoderState) -> np.ndarray:
        """Flush the residual sub-chunk buffer (zero-padding the last stack group)."""
        if state.finalized:
            raise RuntimeError("finalize called twice")
        state.finalized = True
        if state.raw_buf.shape[0] == 0:
            return np.zeros((0, self.d_model), dtype=self.dtype)
        out = self._process_chunk(state, subsample(state.raw_buf.astype(self.dtype)))
        state.raw_buf = np.zeros((0, self.d_feat), dtype=np.float32)
        return out

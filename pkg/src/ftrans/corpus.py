"""Deterministic synthetic world: an order-3 toy word source, token-prototype
feature synthesis, paired ASR splits plus a much larger text-only LM corpus,
and pooled WER scoring. Everything is a pure function of its seeds."""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archive import load_archive, save_archive
from .tokenizer import TokenizerModel


@dataclass
class ToyLanguage:
    """Order-3 word source: the next word depends on the previous two."""
    seed: int = 0
    n_words: int = 200
    branching: int = 3
    mean_len: float = 8.0
    branch_probs: tuple | None = None
    lexicon: list[str] = field(init=False)

    START = -1

    def __post_init__(self):
        rng = np.random.default_rng((self.seed, 0xABCD))
        letters = np.array(list(string.ascii_lowercase))
        words: list[str] = []
        seen = set()
        while len(words) < self.n_words:
            ln = int(rng.integers(2, 7))
            w = "".join(rng.choice(letters, size=ln))
            if w not in seen:
                seen.add(w)
                words.append(w)
        self.lexicon = words
        if self.branch_probs is None:
            if self.branching == 3:
                self.branch_probs = (0.6, 0.3, 0.1)
            else:
                # geometric decay, ratio 2, normalized
                raw = np.array([2.0 ** -k for k in range(self.branching)])
                self.branch_probs = tuple(raw / raw.sum())
        if len(self.branch_probs) != self.branching:
            raise ValueError("branch_probs length must equal branching")

    def _successors(self, w1: int, w2: int) -> np.ndarray:
        rng = np.random.default_rng((self.seed, 0x5EED, w1 + 1, w2 + 1))
        return rng.choice(self.n_words, size=self.branching, replace=False)

    def sentence(self, index: int) -> str:
        """Deterministic sentence for (seed, index)."""
        rng = np.random.default_rng((self.seed, 0x7E47, index))
        length = int(rng.geometric(1.0 / self.mean_len))
        w1, w2 = self.START, self.START
        out = []
        probs = np.asarray(self.branch_probs)
        for _ in range(length):
            succ = self._successors(w1, w2)
            nxt = int(rng.choice(succ, p=probs))
            out.append(self.lexicon[nxt])
            w1, w2 = w2, nxt
        return " ".join(out) if out else self.lexicon[0]

    def sentences(self, start: int, count: int) -> list[str]:
        return [self.sentence(i) for i in range(start, start + count)]


@dataclass
class SynthesisProfile:
    """Per-token feature prototypes: fixed duration in [2, 5] frames and a
    d_feat-dim mean vector; utterances add duration jitter and Gaussian noise."""
    seed: int = 0
    d_feat: int = 80
    noise_sigma: float = 0.3
    jitter_prob: float = 0.2
    proto_scale: float = 1.0

    def duration(self, token_id: int) -> int:
        return int(np.random.default_rng((self.seed, 0xD0, token_id)).integers(2, 6))

    def prototype(self, token_id: int) -> np.ndarray:
        rng = np.random.default_rng((self.seed, 0x9A, token_id))
        return (rng.standard_normal(self.d_feat) * self.proto_scale).astype(np.float32)


def synthesize_utterance(profile: SynthesisProfile, token_ids: list[int],
                         utt_seed: int) -> np.ndarray:
    """Concatenate jittered token prototypes and add noise; >= 2 frames/token."""
    if not token_ids:
        raise ValueError("empty transcript")
    rng = np.random.default_rng((profile.seed, 0x07, utt_seed))
    rows = []
    for tid in token_ids:
        dur = profile.duration(tid)
        if profile.jitter_prob > 0:
            r = rng.random()
            if r < profile.jitter_prob / 2:
                dur += 1
            elif r < profile.jitter_prob:
                dur -= 1
        dur = max(dur, 2)
        rows.append(np.tile(profile.prototype(tid), (dur, 1)))
    feats = np.concatenate(rows, axis=0)
    if profile.noise_sigma > 0:
        feats = feats + (rng.standard_normal(feats.shape) * profile.noise_sigma).astype(np.float32)
    return feats.astype(np.float32)


@dataclass
class DatasetManifest:
    split: str
    entries: list[tuple[str, str, str]]  # (utterance id, feature path, transcript)

    def __post_init__(self):
        ids = [e[0] for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate utterance ids in split '{self.split}'")

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for uid, fp, text in self.entries:
                f.write(f"{uid}\t{fp}\t{text}\n")

    @classmethod
    def load(cls, path, split=None) -> "DatasetManifest":
        entries = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            uid, fp, text = line.split("\t")
            entries.append((uid, fp, text))
        return cls(split or Path(path).stem, entries)

    def load_features(self) -> dict[str, np.ndarray]:
        """Feature paths use '<archive>#<entry>'; archives load once."""
        cache: dict[str, dict] = {}
        out = {}
        for uid, fp, _ in self.entries:
            apath, entry = fp.rsplit("#", 1)
            if apath not in cache:
                cache[apath] = load_archive(apath)
            out[uid] = cache[apath][entry]
        return out


@dataclass
class CorpusConfig:
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    n_lm: int = 100_000
    d_feat: int = 80
    noise_sigma: float = 0.3
    jitter_prob: float = 0.2
    proto_scale: float = 1.0
    n_words: int = 200
    branching: int = 3


def build_corpus(cfg: CorpusConfig, seed: int, out_dir, tokenizer: TokenizerModel | None = None,
                 language: ToyLanguage | None = None) -> dict[str, DatasetManifest]:
    """Paired splits + LM text, fully reproducible from seed. When a tokenizer
    is given, features are synthesized and written as one archive per split;
    otherwise manifests carry transcripts only (lm_text never has features).

    Splits are disjoint by sentence index; the LM corpus draws many more
    samples from the same source than the paired transcripts.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lang = language or ToyLanguage(seed=seed, n_words=cfg.n_words, branching=cfg.branching)
    sizes = [("asr_train", cfg.n_train), ("asr_dev", cfg.n_dev), ("asr_test", cfg.n_test),
             ("lm_text", cfg.n_lm)]
    if any(n <= 0 for _, n in sizes):
        raise ValueError("corpus sizes must be positive")
    profile = SynthesisProfile(seed=seed, d_feat=cfg.d_feat, noise_sigma=cfg.noise_sigma,
                               jitter_prob=cfg.jitter_prob, proto_scale=cfg.proto_scale)
    manifests = {}
    start = 0
    for split, n in sizes:
        texts = lang.sentences(start, n)
        entries = []
        if split != "lm_text" and tokenizer is not None:
            archive_path = out_dir / f"{split}.fsta"
            feats = {}
            for i, text in enumerate(texts):
                uid = f"{split}-{start + i:06d}"
                ids = tokenizer.encode(text)
                feats[uid] = synthesize_utterance(profile, ids, utt_seed=start + i)
                entries.append((uid, f"{archive_path}#{uid}", text))
            save_archive(archive_path, feats)
        else:
            for i, text in enumerate(texts):
                uid = f"{split}-{start + i:06d}"
                entries.append((uid, "", text))
        m = DatasetManifest(split, entries)
        m.save(out_dir / f"{split}.tsv")
        manifests[split] = m
        start += n
    return manifests


def compute_wer(hyps: list[list[str]], refs: list[list[str]]) -> dict:
    """Pooled WER = (S+I+D) / reference words over the whole set."""
    if len(hyps) != len(refs):
        raise ValueError(f"utterance count mismatch: {len(hyps)} hyps vs {len(refs)} refs")
    S = I = D = N = 0
    for hyp, ref in zip(hyps, refs):
        s, i, d = _edit_ops(hyp, ref)
        S, I, D = S + s, I + i, D + d
        N += len(ref)
    rate = (S + I + D) / N if N else 0.0
    return {"wer": rate, "sub": S, "ins": I, "del": D, "ref_words": N}


def _edit_ops(hyp: list[str], ref: list[str]) -> tuple[int, int, int]:
    """Minimum-cost (sub, ins, del) counts aligning hyp to ref."""
    n, m = len(hyp), len(ref)
    # cost plus backtrace: 0=match/sub diag, 1=ins (extra hyp word), 2=del
    cost = np.zeros((n + 1, m + 1), dtype=np.int32)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost[i, j] = min(cost[i - 1, j - 1] + (hyp[i - 1] != ref[j - 1]),
                             cost[i - 1, j] + 1, cost[i, j - 1] + 1)
    s = i_ = d = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (hyp[i - 1] != ref[j - 1]):
            s += hyp[i - 1] != ref[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            i_ += 1
            i -= 1
        else:
            d += 1
            j -= 1
    return s, i_, d

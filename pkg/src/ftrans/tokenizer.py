"""Subword vocabularies: pair-merge training, greedy longest-match segmentation.

Word-initial tokens carry the "▁" marker prefix; both the ASR and LM
vocabularies share this convention. The blank symbol is never a vocabulary
member (it lives at index |V| in the transducer output space only).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

MARKER = "▁"
BOS_ID = 0
UNK_ID = 1
BOS_TOKEN = "<bos>"
UNK_TOKEN = "<unk>"


@dataclass
class Vocabulary:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.tokens[BOS_ID] != BOS_TOKEN or self.tokens[UNK_ID] != UNK_TOKEN:
            raise ValueError("vocabulary must start with <bos>, <unk>")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate token strings in vocabulary")

    def __len__(self):
        return len(self.tokens)

    def id_of(self, token: str) -> int | None:
        return self.index.get(token)

    def token_of(self, i: int) -> str:
        if not 0 <= i < len(self.tokens):
            raise IndexError(f"token id {i} out of range for vocabulary of size {len(self.tokens)}")
        return self.tokens[i]

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines)


@dataclass
class TokenizerModel:
    vocab: Vocabulary
    _max_len: int = field(init=False, repr=False)

    def __post_init__(self):
        self._max_len = max(len(t) for t in self.vocab.tokens)

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for word in text.split():
            s = MARKER + word
            pos = 0
            while pos < len(s):
                tid = None
                for ln in range(min(self._max_len, len(s) - pos), 0, -1):
                    cand = self.vocab.id_of(s[pos:pos + ln])
                    if cand is not None and cand not in (BOS_ID, UNK_ID):
                        tid, pos = cand, pos + ln
                        break
                if tid is None:
                    ids.append(UNK_ID)
                    pos += 2 if pos == 0 else 1  # skip marker together with unknown first char
                else:
                    ids.append(tid)
        return ids

    def decode(self, ids: list[int]) -> str:
        parts = [self.vocab.token_of(i) for i in ids]
        return "".join(parts).replace(MARKER, " ").strip()

    def save(self, path):
        self.vocab.save(path)

    @classmethod
    def load(cls, path) -> "TokenizerModel":
        return cls(Vocabulary.load(path))


def _word_counts(corpus: list[str]) -> Counter:
    wc: Counter = Counter()
    for line in corpus:
        for w in line.split():
            wc[MARKER + w] += 1
    return wc


def train_subword(corpus: list[str], target_size: int) -> TokenizerModel:
    """Train by iterative highest-frequency adjacent-pair merging.

    The base inventory is every single character as seen (word-initial
    characters get the marker variant); merges are added until the vocabulary
    reaches target_size or no pair repeats. Ties break on the lexicographically
    smallest merged string, so training is fully deterministic.
    """
    words = _word_counts(corpus)
    if not words:
        raise ValueError("empty corpus")

    base: set[str] = set()
    for w in words:
        base.add(w[:2])  # marker + first char
        base.update(w[2:])
    min_feasible = 2 + len(base)
    if target_size < min_feasible:
        raise ValueError(
            f"target_size {target_size} too small; minimum feasible size is {min_feasible}"
        )

    # word -> current segmentation into tokens
    segs = {w: [w[:2]] + list(w[2:]) for w in words}
    vocab_tokens = sorted(base)
    while 2 + len(vocab_tokens) < target_size:
        pairs: Counter = Counter()
        for w, seg in segs.items():
            f = words[w]
            for a, b in zip(seg, seg[1:]):
                pairs[(a, b)] += f
        if not pairs:
            break
        best_freq = max(pairs.values())
        merged, pair = min(
            (a + b, (a, b)) for (a, b), c in pairs.items() if c == best_freq
        )
        if merged not in vocab_tokens:
            vocab_tokens.append(merged)
        a, b = pair
        for w, seg in segs.items():
            out, i = [], 0
            while i < len(seg):
                if i + 1 < len(seg) and seg[i] == a and seg[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(seg[i])
                    i += 1
            segs[w] = out

    return TokenizerModel(Vocabulary([BOS_TOKEN, UNK_TOKEN] + vocab_tokens))

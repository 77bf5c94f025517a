"""Declarative run configuration: strict JSON with nested sections.

Unknown keys are rejected on load; serialization round-trips exactly.
Defaults follow the reference setup (fusion weights 0.6/0.6, beam 10,
4x subsampling, 16-frame chunks).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


@dataclass
class CorpusSection:
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


@dataclass
class TokenizerSection:
    asr_vocab_size: int = 500
    lm_vocab_size: int = 4000


@dataclass
class LargeLMSection:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 256
    max_len: int = 512
    epochs: int = 3
    lr: float = 1e-3
    batch_size: int = 32


@dataclass
class SmallLMSection:
    d_model: int = 64
    epochs: int = 3
    lr: float = 2e-3
    batch_size: int = 32


@dataclass
class AdaptSection:
    epochs: int = 3
    lr: float = 1e-3
    batch_size: int = 32
    patience: int = 1


@dataclass
class EncoderSection:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 256
    chunk_frames: int = 16
    max_frames: int = 512


@dataclass
class TransducerSection:
    d_blank: int = 64
    d_joint: int = 128
    lam_ilm: float = 0.2
    steps: int = 1000
    batch_size: int = 8
    lr: float = 1e-3
    detach_lattice_ilm: bool = False


@dataclass
class FusionSection:
    alpha: float = 0.6
    beta: float = 0.6


@dataclass
class BeamSection:
    beam_size: int = 10
    max_symbols_per_frame: int = 3
    nbest: int = 4


@dataclass
class MWERSection:
    steps: int = 200
    batch_size: int = 4
    lr: float = 1e-5
    rnnt_interp: float = 0.0


@dataclass
class OptimizerSection:
    clip_norm: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class RunConfig:
    seed: int = 0
    corpus: CorpusSection = field(default_factory=CorpusSection)
    tokenizer: TokenizerSection = field(default_factory=TokenizerSection)
    large_lm: LargeLMSection = field(default_factory=LargeLMSection)
    small_lm: SmallLMSection = field(default_factory=SmallLMSection)
    adapt: AdaptSection = field(default_factory=AdaptSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    transducer: TransducerSection = field(default_factory=TransducerSection)
    fusion: FusionSection = field(default_factory=FusionSection)
    beam: BeamSection = field(default_factory=BeamSection)
    mwer: MWERSection = field(default_factory=MWERSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "config")

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _build(dc_type, d: dict, where: str):
    import dataclasses

    if not isinstance(d, dict):
        raise ValueError(f"{where}: expected an object")
    known = {f.name: f for f in fields(dc_type)}
    unknown = set(d) - set(known)
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, f in known.items():
        if name not in d:
            continue
        v = d[name]
        if f.default_factory is not dataclasses.MISSING and dataclasses.is_dataclass(f.default_factory):
            kwargs[name] = _build(f.default_factory, v, f"{where}.{name}")
        else:
            kwargs[name] = v
    return dc_type(**kwargs)

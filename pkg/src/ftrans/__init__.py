"""Streamable factorized transducer with swappable causal-LM non-blank
predictors, fused-score beam decoding, vocabulary adaptation, and MWER
finetuning, verified against brute-force oracles on a synthetic corpus."""

from .autodiff import Tensor, log_sigmoid_pair, log_softmax, logaddexp, no_grad
from .config import RunConfig
from .decoding import (BeamConfig, FusionParams, StreamingSession, beam_search,
                       fused_scores, greedy_search, swap_predictor)
from .encoder import ChunkedEncoder, subsample
from .lm import (AdaptationReport, CausalLM, RecurrentLM, StatelessPredictor,
                 adapt_vocabulary, perplexity, train_lm)
from .mwer import mwer_finetune_step, mwer_loss, word_edit_distance
from .optim import Adam, grad_check
from .tokenizer import TokenizerModel, Vocabulary, train_subword
from .transducer import (FactorizedTransducer, LatticeDistributions,
                         factorized_distribution, rnnt_forward_loss,
                         rnnt_loss_oracle, train_step)

__all__ = [name for name in dir() if not name.startswith("_")]

"""Multi-encoder Transformer for automatic postediting with a symmetric
self-attention regularizer, plus TER/BLEU-based APE evaluation."""

from .data import Corpus, TripleExample, Vocabulary
from .decoding import DecodeConfig, beam_search, greedy_search, translate
from .metrics import CorpusReport, bleu_sentence, report, ter
from .model import APETransformer, ModelConfig, load_checkpoint, save_checkpoint
from .symmetry import compute_loss, skewness_row
from .training import TrainConfig, train

__version__ = "0.1.0"

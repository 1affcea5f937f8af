"""Multi-prompt slot-filling named-entity recognition at desk scale."""
from .data import Corpus, CorpusRecord, Span, SynthSpec, corpus_stats, load_corpus, save_corpus, synth_generate
from .matching import Entity, augment_gold, compute_losses, cost_matrix, hungarian_solve, match_cost
from .model import ModelConfig, PredictionSet, SlotNER, decode_entities
from .training import EvalReport, TrainConfig, evaluate, fit, score

__version__ = "0.1.0"

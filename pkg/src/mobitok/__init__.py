"""Semantic location tokens for mobility data.

Locations are described in text, embedded, and quantized by a residual
quantizer into short discrete token sequences. Trajectories over those tokens
feed instruction-tuning datasets and a trie-constrained decoder.
"""

from .decoder import NgramScorer, beam_search, fit_ngram
from .embed import EmbeddingTable, load_embeddings, save_embeddings
from .errors import ConfigError, InvalidPrefixError, LoadError, MobitokError, ParseError, TrainingError
from .evalkit import EvalReport, consistency_study, evaluate_next_location, evaluate_recovery, hit_at_k, ndcg_at_k
from .geo import LatLon, Location, geohash_decode, geohash_encode, haversine_km
from .ingest import DatasetSplit, MobilityRecord, Trajectory
from .quantizer import QuantizerConfig, RqVaeModel, quantize, train
from .sft import SftExample, build_dataset
from .tokens import TokenMap, TokenTrie, assign_tokens, build_trie

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DatasetSplit",
    "EmbeddingTable",
    "EvalReport",
    "InvalidPrefixError",
    "LatLon",
    "LoadError",
    "Location",
    "MobilityRecord",
    "MobitokError",
    "NgramScorer",
    "ParseError",
    "QuantizerConfig",
    "RqVaeModel",
    "SftExample",
    "TokenMap",
    "TokenTrie",
    "TrainingError",
    "Trajectory",
    "assign_tokens",
    "beam_search",
    "build_dataset",
    "build_trie",
    "consistency_study",
    "evaluate_next_location",
    "evaluate_recovery",
    "fit_ngram",
    "geohash_decode",
    "geohash_encode",
    "haversine_km",
    "hit_at_k",
    "load_embeddings",
    "ndcg_at_k",
    "quantize",
    "save_embeddings",
    "train",
]

"""Dataset collection, evaluation sweeps, random search and the command line."""

from .dataset import (DatasetFormatError, DatasetWriter, collect_dataset, filter_dataset_max6,
                      iter_transitions, load_buffer, read_header)
from .evaluation import (EVAL_NS, NOISE_LEVELS, SEEDS_PER_N, EvalReport, GreedyAgent, KeepAgent,
                         NoiseSpec, RuleBasedAgent, eval_seed, evaluate_agent, evaluate_policy,
                         load_agent, run_baseline, run_episode)
from .search import SEARCH_SPACES, SearchSpace, random_search

__all__ = [
    "EVAL_NS", "NOISE_LEVELS", "SEARCH_SPACES", "SEEDS_PER_N", "DatasetFormatError", "DatasetWriter",
    "EvalReport", "GreedyAgent", "KeepAgent", "NoiseSpec", "RuleBasedAgent", "SearchSpace",
    "collect_dataset", "eval_seed", "evaluate_agent", "evaluate_policy", "filter_dataset_max6",
    "iter_transitions", "load_agent", "load_buffer", "random_search", "read_header", "run_baseline",
    "run_episode",
]

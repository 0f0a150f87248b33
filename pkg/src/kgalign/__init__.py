"""Entity alignment between knowledge graphs: reliable two-hop path mining,
a relation-aware heterogeneous graph transformer, dual margin training, and
Hits@k / MRR evaluation.

Submodules import lazily so the CLI can pin thread counts before numpy
loads.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "KnowledgeGraph": "data",
    "AlignmentSeeds": "data",
    "AlignmentDataset": "data",
    "load_kg": "data",
    "load_seeds": "data",
    "load_embeddings": "data",
    "load_dataset": "data",
    "build_path_triples": "data",
    "PathNeighborhood": "mining",
    "ReliablePathSet": "mining",
    "MiningResult": "mining",
    "mine": "mining",
    "Tensor": "autodiff",
    "Adam": "autodiff",
    "EncoderConfig": "encoder",
    "EdgeList": "encoder",
    "RhgtParams": "encoder",
    "encode": "encoder",
    "TrainConfig": "training",
    "TrainResult": "training",
    "train": "training",
    "RankingResult": "evaluation",
    "evaluate": "evaluation",
    "make_harder_split": "evaluation",
    "name_only_baseline": "evaluation",
    "RprRhgtAligner": "estimator",
    "KgAlignError": "errors",
    "DataError": "errors",
    "NumericalError": "errors",
}


def __getattr__(name):
    if name in _EXPORTS:
        import importlib

        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_EXPORTS))

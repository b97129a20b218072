"""Domain-adaptive text-retrieval toolkit.

Pipeline pieces: corpus ingestion and cleaning, tokenization and
vocabularies, static word-embedding training, miniature bidirectional
encoder pretraining (masked tokens + sentence adjacency), task heads for
text classification and sequence labeling, weighted-F1 metrics, and a
config-driven experiment runner.  Everything trains on a small
reverse-mode autodiff engine (`regir.ndgrad`) backed by numpy arrays.
"""

__version__ = "0.1.0"

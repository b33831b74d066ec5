"""Training and evaluation engine for a multimedia recommender that keeps
per-item modality features alive inside graph-convolved embeddings and scores
candidates with a target-aware attention over each user's history."""

__version__ = "0.1.0"

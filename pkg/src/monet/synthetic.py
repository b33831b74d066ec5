"""Planted-preference synthetic data for trend checks without a real corpus.

Items belong to balanced latent clusters; both modality feature matrices are
noisy copies of per-cluster centroids (the same cluster labels drive both).
Each user carries a personal taste vector per modality near their preferred
cluster's centroid, and preference rises with the feature cosine against that
taste — graded *within* a cluster, readable only from feature geometry.

On top of the taste signal sits a low-rank behavioral factor that neither
feature matrix can see (independent unit vectors per user and item).  Its
share of the preference is HIDDEN_WEIGHT.  Because no linear map of the
features can express it, a model can only fit that part through co-occurrence,
which pulls learned item embeddings away from the raw feature geometry — the
divergence between collaborative and modality structure that the preservation
diagnostics are meant to detect.

Null mode removes all structure: uniform interactions over pure-noise
features, which flattens the interacted/non-interacted similarity gap.

Raw ids are zero-padded so lexicographic order equals numeric order and the
feature rows line up with the dense indices the preparation step assigns.
Item degrees are topped up to ``min_degree`` so the default k-core filter
keeps the whole set.
"""

import os
from dataclasses import dataclass

import numpy as np

from .datasets import MODALITIES, ModalityFeatureMatrix, RawInteraction, write_features
from .errors import ConfigError

NOISE_SCALE = 0.4
TASTE_NOISE = 0.5
CONCENTRATION = 4.0
HIDDEN_DIM = 8
HIDDEN_WEIGHT = 0.45
FEATURE_SCALE = 0.7    # row norm after unit-normalization; keeps projections small


@dataclass
class SyntheticDataset:
    interactions: list
    features: dict                 # modality -> ModalityFeatureMatrix
    item_cluster: np.ndarray | None
    user_cluster: np.ndarray | None


def _pad_ids(prefix: str, count: int) -> list:
    width = len(str(count - 1))
    return [f"{prefix}{k:0{width}d}" for k in range(count)]


def generate(num_users: int = 200, num_items: int = 100, feature_dim: int = 16,
             seed: int = 0, null: bool = False, num_clusters: int | None = None,
             min_degree: int = 5, degree_range: tuple = (15, 30)) -> SyntheticDataset:
    if num_users < 1 or num_items < 2:
        raise ConfigError(f"need at least 1 user and 2 items, got {num_users}/{num_items}")
    if feature_dim < 1:
        raise ConfigError(f"feature_dim must be >= 1, got {feature_dim}")
    if seed < 0:
        raise ConfigError(f"seed must be >= 0, got {seed}")
    lo, hi = degree_range
    if not 1 <= lo <= hi:
        raise ConfigError(f"degree_range must satisfy 1 <= lo <= hi, got {degree_range}")
    hi = min(hi, num_items)
    lo = min(lo, hi)
    rng = np.random.default_rng([seed, 44])

    def _unit_rows(mat):
        out = mat / np.linalg.norm(mat, axis=1, keepdims=True)
        return (FEATURE_SCALE * out).astype(np.float32)

    if null:
        item_cluster = user_cluster = None
        features = {
            m: _unit_rows(rng.normal(size=(num_items, feature_dim)))
            for m in MODALITIES
        }
    else:
        k = num_clusters if num_clusters is not None else max(2, num_items // 10)
        if k > num_items:
            raise ConfigError(f"{k} clusters for {num_items} items")
        item_cluster = rng.permutation(num_items) % k      # balanced labels
        user_cluster = rng.permutation(num_users) % k
        features = {}
        centers_by_mod = {}
        for m in MODALITIES:
            centers = rng.normal(size=(k, feature_dim))
            centers /= np.linalg.norm(centers, axis=1, keepdims=True)
            centers_by_mod[m] = centers
            noisy = centers[item_cluster] + NOISE_SCALE * rng.normal(size=(num_items, feature_dim))
            features[m] = _unit_rows(noisy)

    if not null:
        unit_feats = {}
        for m in MODALITIES:
            f = features[m].astype(np.float64)
            unit_feats[m] = f / np.linalg.norm(f, axis=1, keepdims=True)
        hidden_item = rng.normal(size=(num_items, HIDDEN_DIM))
        hidden_item /= np.linalg.norm(hidden_item, axis=1, keepdims=True)
        hidden_user = rng.normal(size=(num_users, HIDDEN_DIM))
        hidden_user /= np.linalg.norm(hidden_user, axis=1, keepdims=True)

    chosen = [set() for _ in range(num_users)]
    for u in range(num_users):
        n_u = int(rng.integers(lo, hi + 1))
        if null:
            picks = rng.choice(num_items, size=n_u, replace=False)
        else:
            affinity = np.zeros(num_items)
            for m in MODALITIES:
                taste = centers_by_mod[m][user_cluster[u]] + TASTE_NOISE * rng.normal(size=feature_dim)
                taste /= np.linalg.norm(taste)
                affinity += unit_feats[m] @ taste
            affinity /= len(MODALITIES)
            affinity = ((1.0 - HIDDEN_WEIGHT) * affinity
                        + HIDDEN_WEIGHT * (hidden_item @ hidden_user[u]))
            weights = np.exp(CONCENTRATION * affinity)
            weights /= weights.sum()
            picks = rng.choice(num_items, size=n_u, replace=False, p=weights)
        chosen[u].update(int(i) for i in picks)

    # top up cold items so a k-core pass at min_degree removes nothing
    degree = np.zeros(num_items, dtype=np.int64)
    for mine in chosen:
        for i in mine:
            degree[i] += 1
    for i in np.flatnonzero(degree < min_degree):
        free_users = [u for u in range(num_users) if i not in chosen[u]]
        needed = min(min_degree - degree[i], len(free_users))
        for u in rng.choice(len(free_users), size=needed, replace=False):
            chosen[free_users[u]].add(int(i))

    user_ids = _pad_ids("u", num_users)
    item_ids = _pad_ids("i", num_items)
    interactions = []
    stamp = 0
    for u in range(num_users):
        for i in sorted(chosen[u]):
            interactions.append(RawInteraction(user_ids[u], item_ids[i], stamp))
            stamp += 1
    feats = {
        m: ModalityFeatureMatrix(m, num_items, feature_dim, features[m])
        for m in MODALITIES
    }
    return SyntheticDataset(interactions, feats, item_cluster, user_cluster)


def write_synthetic(out_dir, synth: SyntheticDataset) -> dict:
    """interactions.tsv plus one binary feature file per modality; returns the
    paths keyed by artifact name."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {"interactions": os.path.join(out_dir, "interactions.tsv")}
    with open(paths["interactions"], "w", encoding="utf-8") as fh:
        for r in synth.interactions:
            fh.write(f"{r.user_raw_id}\t{r.item_raw_id}\t{r.timestamp}\n")
    for m in MODALITIES:
        paths[m] = os.path.join(out_dir, f"{m}.mmfv")
        write_features(paths[m], synth.features[m].values)
    return paths

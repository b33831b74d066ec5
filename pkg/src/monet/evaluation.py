"""Full-ranking top-N evaluation, the modality-preservation diagnostic, and
the interacted/non-interacted similarity analysis.

Candidates are every item except the user's training positives (and validation
positives too when scoring the test split).  Ties are broken by ascending item
index.  The preservation diagnostic compares pairwise item cosines in the raw
feature space against pairwise cosines of the modality-specific final
embeddings: the mean absolute gap over ordered pairs i != j.  Cosine against a
zero vector is defined as 0.
"""

from dataclasses import dataclass

import numpy as np

from .datasets import MODALITIES, InteractionDataset, ModalityFeatureMatrix
from .errors import EvaluationError
from .graph import BipartiteGraph
from .model import EncoderOutput, HyperParams, score_all_items

_PHASES = ("validation", "test")


@dataclass
class EvalReport:
    n: int
    precision: float
    recall: float
    ndcg: float
    num_users_evaluated: int
    per_user: list | None = None   # (user, precision, recall, ndcg) rows


@dataclass(frozen=True)
class AvgDiffEntry:
    modality: str
    value: float
    num_pairs: int
    mode: str


@dataclass
class SimilarityReport:
    mean_ii: dict   # modality -> mean cosine among a user's interacted items
    mean_in: dict   # modality -> mean cosine interacted vs. non-interacted
    mode: str
    num_users_ii: int
    num_users_in: int


def _candidate_items(user: int, graph: BipartiteGraph, dataset: InteractionDataset,
                     phase: str, val_sets: dict | None) -> np.ndarray:
    mask = np.ones(dataset.num_items, dtype=bool)
    mask[graph.items_of(user)] = False
    if phase == "test" and val_sets is not None and user in val_sets:
        mask[list(val_sets[user])] = False
    return np.flatnonzero(mask)


def rank_topn(user: int, n: int, enc: EncoderOutput, graph: BipartiteGraph,
              dataset: InteractionDataset, hp: HyperParams, phase: str = "test") -> list:
    """Top-n candidate items for one user, descending blended score, ascending
    index on ties.  Returns fewer than n when fewer candidates exist."""
    if phase not in _PHASES:
        raise ValueError(f"phase must be one of {_PHASES}, got {phase!r}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    val_sets = dataset.positives_by_user("validation") if phase == "test" else None
    cands = _candidate_items(user, graph, dataset, phase, val_sets)
    return _topn_from_candidates(user, n, enc, graph, hp, cands)


def _topn_from_candidates(user, n, enc, graph, hp, cands) -> list:
    if cands.size == 0:
        return []
    scores = score_all_items(user, cands, enc, graph, hp)
    order = np.lexsort((cands, -scores))
    return [int(i) for i in cands[order[:n]]]


def metrics_at_n(recommended, relevant, n: int):
    """(precision, recall, ndcg) with binary relevance and log2 discounting;
    the ideal ranking is truncated at min(n, |relevant|)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not relevant:
        raise ValueError("relevant set is empty; skip this user")
    relevant = set(relevant)
    hits = 0
    dcg = 0.0
    for rank, item in enumerate(recommended[:n], start=1):
        if item in relevant:
            hits += 1
            dcg += 1.0 / np.log2(rank + 1)
    idcg = sum(1.0 / np.log2(r + 1) for r in range(1, min(n, len(relevant)) + 1))
    return hits / n, hits / len(relevant), dcg / idcg


def evaluate(enc: EncoderOutput, graph: BipartiteGraph, dataset: InteractionDataset,
             hp: HyperParams, n: int = 20, phase: str = "test", per_user: bool = False) -> EvalReport:
    """Mean metrics over every user with at least one held-out interaction in
    the requested split.  Deterministic: users ascending, 64-bit sums."""
    if phase not in _PHASES:
        raise ValueError(f"phase must be one of {_PHASES}, got {phase!r}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    relevant_by_user = dataset.positives_by_user(phase)
    val_sets = dataset.positives_by_user("validation") if phase == "test" else None
    sums = np.zeros(3, dtype=np.float64)
    rows = [] if per_user else None
    count = 0
    for user in sorted(relevant_by_user):
        relevant = relevant_by_user[user]
        if not relevant:
            continue
        cands = _candidate_items(user, graph, dataset, phase, val_sets)
        top = _topn_from_candidates(user, n, enc, graph, hp, cands)
        p, r, g = metrics_at_n(top, relevant, n)
        sums += (p, r, g)
        count += 1
        if per_user:
            rows.append((user, p, r, g))
    if count == 0:
        raise EvaluationError(f"no users with {phase} interactions to evaluate")
    p, r, g = (sums / count).tolist()
    return EvalReport(n=n, precision=p, recall=r, ndcg=g,
                      num_users_evaluated=count, per_user=rows)


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    """Rows scaled to unit norm in float64; zero rows stay zero, which makes
    every cosine involving them 0."""
    out = np.asarray(matrix, dtype=np.float64).copy()
    norms = np.linalg.norm(out, axis=1)
    nz = norms > 0
    out[nz] /= norms[nz, None]
    return out


def avg_diff(features: ModalityFeatureMatrix, final_emb: np.ndarray, mode: str = "exact",
             sample_size: int = 100_000, seed: int = 0) -> AvgDiffEntry:
    """Mean absolute cosine gap between raw features and final embeddings over
    ordered item pairs i != j; exact enumeration or seeded pair sampling."""
    raw = features.values
    final_emb = np.asarray(final_emb)
    if raw.shape[0] != final_emb.shape[0]:
        raise ValueError(
            f"feature rows ({raw.shape[0]}) and embedding rows ({final_emb.shape[0]}) differ"
        )
    num_items = raw.shape[0]
    if num_items < 2:
        raise EvaluationError("avg_diff needs at least 2 items")
    n1 = _unit_rows(raw)
    n2 = _unit_rows(final_emb)
    if mode == "exact":
        total = 0.0
        block = max(1, 4_000_000 // num_items)
        for s in range(0, num_items, block):
            e = min(num_items, s + block)
            gap = np.abs(n1[s:e] @ n1.T - n2[s:e] @ n2.T)
            gap[np.arange(e - s), np.arange(s, e)] = 0.0
            total += float(gap.sum())
        num_pairs = num_items * (num_items - 1)
        return AvgDiffEntry(features.modality, total / num_pairs, num_pairs, "exact")
    if mode == "sampled":
        if sample_size < 1:
            raise ValueError(f"sample_size must be >= 1, got {sample_size}")
        rng = np.random.default_rng([seed, 55])
        i = rng.integers(0, num_items, size=sample_size)
        j = rng.integers(0, num_items - 1, size=sample_size)
        j = j + (j >= i)
        c1 = (n1[i] * n1[j]).sum(axis=1)
        c2 = (n2[i] * n2[j]).sum(axis=1)
        value = float(np.abs(c1 - c2).mean())
        return AvgDiffEntry(features.modality, value, sample_size, f"sampled({sample_size},{seed})")
    raise ValueError(f"mode must be 'exact' or 'sampled', got {mode!r}")


def avg_diff_report(features: dict, item_final: dict, mode: str = "exact",
                    sample_size: int = 100_000, seed: int = 0) -> dict:
    """Per-modality entries comparing each feature matrix against the
    corresponding modality-specific final item embeddings."""
    return {
        m: avg_diff(features[m], item_final[m], mode, sample_size, seed)
        for m in MODALITIES
    }


def interaction_similarity(features: dict, dataset: InteractionDataset, mode: str = "exact",
                           sample_size: int = 200, seed: int = 0) -> SimilarityReport:
    """Average cosine among a user's interacted items (users with >= 2) and
    between interacted and non-interacted items, over the full filtered log.
    Sampled mode subsamples each user's non-interacted pool."""
    if mode not in ("exact", "sampled"):
        raise ValueError(f"mode must be 'exact' or 'sampled', got {mode!r}")
    by_user = dataset.positives_by_user("all")
    num_items = dataset.num_items
    normed = {m: _unit_rows(features[m].values) for m in MODALITIES}
    colsum = {m: normed[m].sum(axis=0) for m in MODALITIES}
    rng = np.random.default_rng([seed, 66])

    sums_ii = {m: 0.0 for m in MODALITIES}
    sums_in = {m: 0.0 for m in MODALITIES}
    n_ii = n_in = 0
    for user in sorted(by_user):
        owned = np.fromiter(sorted(by_user[user]), dtype=np.int64)
        k = owned.size
        if k == 0:
            continue
        counted_in = False
        if mode == "sampled" and num_items - k > 0:
            mask = np.ones(num_items, dtype=bool)
            mask[owned] = False
            pool = np.flatnonzero(mask)
            take = min(sample_size, pool.size)
            others = rng.choice(pool, size=take, replace=False)
            counted_in = True
        for m in MODALITIES:
            rows = normed[m][owned]
            gram = rows @ rows.T
            if k >= 2:
                sums_ii[m] += (float(gram.sum()) - float(np.trace(gram))) / (k * (k - 1))
            if mode == "exact":
                if num_items - k > 0:
                    inter_non = float((rows @ colsum[m]).sum()) - float(gram.sum())
                    sums_in[m] += inter_non / (k * (num_items - k))
                    counted_in = True
            elif counted_in:
                sums_in[m] += float((rows @ normed[m][others].T).mean())
        if k >= 2:
            n_ii += 1
        if counted_in:
            n_in += 1

    if n_ii == 0 or n_in == 0:
        raise EvaluationError("no users qualify for the similarity analysis")
    return SimilarityReport(
        mean_ii={m: sums_ii[m] / n_ii for m in MODALITIES},
        mean_in={m: sums_in[m] / n_in for m in MODALITIES},
        mode=mode if mode == "exact" else f"sampled({sample_size},{seed})",
        num_users_ii=n_ii,
        num_users_in=n_in,
    )

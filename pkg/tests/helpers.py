"""Shared builders for the test suite: tiny hand-sized datasets, random
feature sets, and the central-difference gradient checker."""

import numpy as np

from monet.datasets import MODALITIES, InteractionDataset
from monet.model import init_parameters
from monet.training import batch_loss, compute_gradients


def toy_dataset(num_users=4, num_items=6, per_user=3):
    """Training-only dataset where user u owns items u..u+per_user-1 (mod
    num_items); every user and every item appears in train."""
    rows = []
    for u in range(num_users):
        for off in range(per_user):
            rows.append((u, (u + off) % num_items))
    train = np.array(rows, dtype=np.int64)
    empty = np.zeros((0, 2), dtype=np.int64)
    return InteractionDataset(
        num_users=num_users,
        num_items=num_items,
        train=train,
        validation=empty,
        test=empty.copy(),
        user_id_map={f"u{u}": u for u in range(num_users)},
        item_id_map={f"i{i}": i for i in range(num_items)},
    )


def toy_features(num_items, dims=(3, 5), seed=0, dtype=np.float32):
    rng = np.random.default_rng([seed, 7])
    return {m: rng.normal(size=(num_items, d)).astype(dtype) for m, d in zip(MODALITIES, dims)}


def toy_batch(dataset, size=6, seed=0):
    """(B, 3) triples; negatives drawn from outside each user's profile."""
    rng = np.random.default_rng([seed, 13])
    owned = dataset.positives_by_user("train")
    users = sorted(owned)
    triples = []
    for t in range(size):
        u = users[t % len(users)]
        pos = int(rng.choice(sorted(owned[u])))
        free = [i for i in range(dataset.num_items) if i not in owned[u]]
        neg = int(rng.choice(free))
        triples.append((u, pos, neg))
    return np.array(triples, dtype=np.int64)


def jittered_params(hp, dims, counts, seed):
    """Glorot init plus a uniform jitter so biases are non-zero and leaky
    activations straddle both sides of the kink."""
    params = init_parameters(hp, dims, counts, seed)
    rng = np.random.default_rng([seed, 99])
    for _, arr in params.named_arrays():
        arr += rng.uniform(-0.05, 0.05, size=arr.shape).astype(arr.dtype)
    return params


def fd_badness(batch, params, graph, features, hp, mask_target=False,
               h=1e-4, rtol=1e-4, atol=1e-6):
    """Worst coordinate-wise disagreement between the analytic gradient and a
    central difference, scaled so 1.0 is the pass/fail boundary: a coordinate
    passes when |g - fd| <= atol or the relative error is <= rtol."""
    p64 = params.astype(np.float64)
    feats64 = {m: np.asarray(features[m], dtype=np.float64) for m in MODALITIES}
    grads, _ = compute_gradients(batch, p64, graph, feats64, hp, mask_target)
    worst = 0.0
    for name, arr in p64.named_arrays():
        gflat = grads.array(name).reshape(-1)
        flat = arr.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + h
            up = batch_loss(batch, p64, graph, feats64, hp, mask_target)
            flat[j] = keep - h
            down = batch_loss(batch, p64, graph, feats64, hp, mask_target)
            flat[j] = keep
            fd = (up - down) / (2.0 * h)
            err = abs(gflat[j] - fd)
            scale = max(abs(gflat[j]), abs(fd))
            bad = err / atol if scale == 0.0 else min(err / atol, err / scale / rtol)
            worst = max(worst, bad)
    return worst

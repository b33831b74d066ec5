"""Interaction-log ingestion, k-core filtering, deterministic splitting, and
the binary feature-matrix format.

Interaction files are UTF-8 TSV, one interaction per line::

    user_raw_id <TAB> item_raw_id [<TAB> timestamp]

Lines starting with ``#`` are comments; blank lines are skipped.  Duplicate
(user, item) pairs collapse to the first occurrence.  Timestamps are parsed
and retained but never used for ordering (splits are random, not temporal).

Modality feature matrices travel in the "MMFV" binary format: 4-byte magic
``MMFV``, u16 little-endian version (currently 1), u32 LE row count, u32 LE
column count, then rows*cols f32 LE values in row-major order.  Reads and
writes are bit-exact.

``prepare`` artifacts written next to each other in the output directory:
``user_ids.tsv`` / ``item_ids.tsv`` (raw_id TAB dense index, index order) and
``train.tsv`` / ``val.tsv`` / ``test.tsv`` (user_index TAB item_index).
Dense indices are assigned by sorted raw id, so the mapping is reproducible
from the filtered log alone.
"""

import math
import os
import struct
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, FeatureFileError, ParseError

MODALITIES = ("textual", "visual")

MMFV_MAGIC = b"MMFV"
MMFV_VERSION = 1
_MMFV_HEADER = struct.Struct("<HII")  # version, rows, cols (after the magic)


@dataclass(frozen=True)
class RawInteraction:
    user_raw_id: str
    item_raw_id: str
    timestamp: int | None = None


@dataclass
class InteractionDataset:
    """Index-mapped interactions with disjoint train/validation/test parts.

    The three partitions are (N, 2) int arrays of (user_index, item_index)
    rows.  Together they reproduce the filtered log exactly; every user and
    every item occurs in ``train`` at least once.
    """

    num_users: int
    num_items: int
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    user_id_map: dict = field(repr=False)
    item_id_map: dict = field(repr=False)

    def positives_by_user(self, part: str) -> dict:
        """Per-user sets of item indices for one partition ('train',
        'validation', 'test') or 'all' for the full filtered log."""
        if part == "all":
            pairs = np.concatenate([self.train, self.validation, self.test])
        else:
            pairs = getattr(self, part)
        out: dict = {}
        for u, i in pairs:
            out.setdefault(int(u), set()).add(int(i))
        return out


@dataclass
class ModalityFeatureMatrix:
    """Dense per-item feature matrix for one modality; rows follow the item
    index order of the id map."""

    modality: str
    num_items: int
    dim: int
    values: np.ndarray  # (num_items, dim) float32


def load_interactions(path) -> list:
    """Parse an interaction TSV.  Returns deduplicated rows in file order."""
    interactions = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) not in (2, 3):
                raise ParseError(
                    f"expected 2 or 3 tab-separated fields, got {len(fields)}",
                    line_no,
                )
            user, item = fields[0], fields[1]
            if not user or not item:
                raise ParseError("empty user or item id", line_no)
            timestamp = None
            if len(fields) == 3:
                try:
                    timestamp = int(fields[2])
                except ValueError:
                    raise ParseError(f"bad timestamp {fields[2]!r}", line_no) from None
            key = (user, item)
            if key in seen:
                continue
            seen.add(key)
            interactions.append(RawInteraction(user, item, timestamp))
    if not interactions:
        raise ParseError(f"no interactions in {path}")
    return interactions


def kcore_filter(interactions, k: int) -> list:
    """Iteratively peel users/items with fewer than k interactions until every
    survivor has at least k.  The fixed point is unique, so the result is
    deterministic; input order of the surviving rows is preserved."""
    if k < 1:
        raise ConfigError(f"k-core parameter must be >= 1, got {k}")
    seen = set()
    pairs = []
    for it in interactions:
        key = (it.user_raw_id, it.item_raw_id)
        if key not in seen:
            seen.add(key)
            pairs.append(it)
    while True:
        user_deg = Counter(it.user_raw_id for it in pairs)
        item_deg = Counter(it.item_raw_id for it in pairs)
        kept = [
            it
            for it in pairs
            if user_deg[it.user_raw_id] >= k and item_deg[it.item_raw_id] >= k
        ]
        if len(kept) == len(pairs):
            break
        pairs = kept
    if not pairs:
        raise DataError("k-core is empty")
    return pairs


def _split_counts(n: int, ratios) -> tuple:
    # floor with a small epsilon so exact products like 0.1*10 do not round down
    n_train = max(1, math.floor(ratios[0] * n + 1e-9))
    n_val = math.floor(ratios[1] * n + 1e-9)
    if n_train + n_val > n:
        n_val = n - n_train
    return n_train, n_val, n - n_train - n_val


def split_dataset(interactions, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> InteractionDataset:
    """Map raw ids to dense indices and split each user's interactions into
    train/validation/test.

    Per user the interactions are shuffled with a seeded generator and cut at
    ``max(1, floor(r_train*n))`` / ``floor(r_val*n)`` / remainder.  Items that
    end up with zero training occurrences are repaired: one of their val/test
    interactions is promoted into train and, when possible, that user's
    last-shuffled train interaction is demoted to the vacated partition (only
    if the demoted item keeps at least one training occurrence).
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    seen = set()
    pairs = []
    for it in interactions:
        key = (it.user_raw_id, it.item_raw_id)
        if key not in seen:
            seen.add(key)
            pairs.append(it)
    if not pairs:
        raise DataError("cannot split an empty interaction log")

    user_ids = sorted({it.user_raw_id for it in pairs})
    item_ids = sorted({it.item_raw_id for it in pairs})
    user_id_map = {raw: idx for idx, raw in enumerate(user_ids)}
    item_id_map = {raw: idx for idx, raw in enumerate(item_ids)}
    num_users, num_items = len(user_ids), len(item_ids)

    by_user: list = [[] for _ in range(num_users)]
    for it in pairs:
        by_user[user_id_map[it.user_raw_id]].append(item_id_map[it.item_raw_id])

    TRAIN, VAL, TEST = 0, 1, 2
    rng = np.random.default_rng([seed, 11])
    order = []       # per user: shuffled item indices
    part = []        # per user: partition tag per position
    for u in range(num_users):
        items_u = by_user[u]
        perm = rng.permutation(len(items_u))
        shuffled = [items_u[p] for p in perm]
        n_train, n_val, _ = _split_counts(len(shuffled), ratios)
        tags = [TRAIN] * n_train + [VAL] * n_val + [TEST] * (len(shuffled) - n_train - n_val)
        order.append(shuffled)
        part.append(tags)

    train_count = Counter()
    for u in range(num_users):
        for pos, i in enumerate(order[u]):
            if part[u][pos] == TRAIN:
                train_count[i] += 1

    # Cold-item repair: Eq.-style propagation needs every item in train.
    holders: dict = {}
    for u in range(num_users):
        for pos, i in enumerate(order[u]):
            if part[u][pos] != TRAIN:
                holders.setdefault(i, []).append((u, part[u][pos], pos))
    for i in range(num_items):
        if train_count[i] > 0:
            continue
        u, src, pos = min(holders[i])
        part[u][pos] = TRAIN
        train_count[i] += 1
        # demote the user's last-shuffled original train interaction, if its
        # item can spare an occurrence
        for dpos in range(len(order[u]) - 1, -1, -1):
            j = order[u][dpos]
            if dpos == pos or part[u][dpos] != TRAIN:
                continue
            if train_count[j] >= 2:
                part[u][dpos] = src
                train_count[j] -= 1
                break

    splits: list = [[], [], []]
    for u in range(num_users):
        for pos, i in enumerate(order[u]):
            splits[part[u][pos]].append((u, i))

    def as_array(rows):
        return np.array(rows, dtype=np.int64).reshape(len(rows), 2)

    return InteractionDataset(
        num_users=num_users,
        num_items=num_items,
        train=as_array(splits[TRAIN]),
        validation=as_array(splits[VAL]),
        test=as_array(splits[TEST]),
        user_id_map=user_id_map,
        item_id_map=item_id_map,
    )


# ---------------------------------------------------------------------------
# MMFV binary matrix format


def write_mmfv_block(fh, values: np.ndarray) -> None:
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"MMFV blocks are 2-D, got shape {values.shape}")
    fh.write(MMFV_MAGIC)
    fh.write(_MMFV_HEADER.pack(MMFV_VERSION, arr.shape[0], arr.shape[1]))
    fh.write(arr.tobytes())


def read_mmfv_block(fh, name: str = "matrix") -> np.ndarray:
    magic = fh.read(4)
    if magic != MMFV_MAGIC:
        raise FeatureFileError(f"{name}: bad magic {magic!r}, expected {MMFV_MAGIC!r}")
    header = fh.read(_MMFV_HEADER.size)
    if len(header) != _MMFV_HEADER.size:
        raise FeatureFileError(f"{name}: truncated header")
    version, rows, cols = _MMFV_HEADER.unpack(header)
    if version != MMFV_VERSION:
        raise FeatureFileError(f"{name}: unsupported version {version}")
    payload = fh.read(rows * cols * 4)
    if len(payload) != rows * cols * 4:
        raise FeatureFileError(
            f"{name}: truncated payload, expected {rows * cols * 4} bytes, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()


def write_features(path, values: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_mmfv_block(fh, values)


def load_features(path, expected_items: int, modality: str = "textual") -> ModalityFeatureMatrix:
    with open(path, "rb") as fh:
        values = read_mmfv_block(fh, name=os.path.basename(path))
        if fh.read(1):
            raise FeatureFileError(f"{path}: trailing bytes after matrix payload")
    if values.shape[0] != expected_items:
        raise FeatureFileError(
            f"{path}: has {values.shape[0]} rows but the dataset holds {expected_items} items"
        )
    if not np.isfinite(values).all():
        bad = int(np.argwhere(~np.isfinite(values).all(axis=1))[0][0])
        raise FeatureFileError(f"{path}: non-finite entries in row for item {bad}")
    zero = np.flatnonzero(~values.any(axis=1))
    if zero.size:
        raise FeatureFileError(f"{path}: all-zero feature row for item {int(zero[0])}")
    return ModalityFeatureMatrix(
        modality=modality, num_items=values.shape[0], dim=values.shape[1], values=values
    )


# ---------------------------------------------------------------------------
# prepared-artifact files


def write_prepared(out_dir, dataset: InteractionDataset) -> list:
    """Write id maps and split files; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    def write_ids(name, id_map):
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            for raw, idx in sorted(id_map.items(), key=lambda kv: kv[1]):
                fh.write(f"{raw}\t{idx}\n")
        paths.append(path)

    def write_pairs(name, pairs):
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            for u, i in pairs:
                fh.write(f"{u}\t{i}\n")
        paths.append(path)

    write_ids("user_ids.tsv", dataset.user_id_map)
    write_ids("item_ids.tsv", dataset.item_id_map)
    write_pairs("train.tsv", dataset.train)
    write_pairs("val.tsv", dataset.validation)
    write_pairs("test.tsv", dataset.test)
    return paths


def read_prepared(out_dir) -> InteractionDataset:
    def read_ids(name):
        id_map = {}
        with open(os.path.join(out_dir, name), encoding="utf-8") as fh:
            for line in fh:
                raw, idx = line.rstrip("\n").split("\t")
                id_map[raw] = int(idx)
        if not id_map:
            raise DataError(f"{name} is empty")
        return id_map

    def read_pairs(name):
        rows = []
        with open(os.path.join(out_dir, name), encoding="utf-8") as fh:
            for line in fh:
                u, i = line.rstrip("\n").split("\t")
                rows.append((int(u), int(i)))
        return np.array(rows, dtype=np.int64).reshape(len(rows), 2)

    user_id_map = read_ids("user_ids.tsv")
    item_id_map = read_ids("item_ids.tsv")
    return InteractionDataset(
        num_users=len(user_id_map),
        num_items=len(item_id_map),
        train=read_pairs("train.tsv"),
        validation=read_pairs("val.tsv"),
        test=read_pairs("test.tsv"),
        user_id_map=user_id_map,
        item_id_map=item_id_map,
    )

"""Per-modality graph encoder and target-aware scorer.

Each modality gets its own id-based user table and a linear projection of the
raw item features to the shared embedding size; both sides are refined by
stacked graph propagation layers and aggregated (mean over all layers, or the
last layer only).  The two modality embeddings are concatenated.  A score for
(user, target item) blends the plain inner product with a target-oriented one
where the user is re-represented as an attention-weighted sum of their
training-history items, with attention logits given by the target's inner
product against each history item.
"""

import io
from dataclasses import dataclass, field

import numpy as np

from .datasets import MODALITIES, ModalityFeatureMatrix, read_mmfv_block, write_mmfv_block
from .errors import CheckpointError, ConfigError
from .graph import BipartiteGraph, propagate

LEAKY_SLOPE = 0.2

_PROPAGATION = ("linear", "nonlinear")
_SELF_CONNECTION = ("on", "off")
_AGGREGATION = ("last", "mean_combination")
_ATTENTION = ("on", "off")


@dataclass(frozen=True)
class HyperParams:
    embedding_dim: int = 64
    num_layers: int = 2
    alpha: float = 1.0
    beta: float = 0.3
    reg_lambda: float = 1e-5
    propagation: str = "linear"
    self_connection: str = "on"
    layer_aggregation: str = "last"
    attention: str = "on"

    def __post_init__(self):
        if self.embedding_dim < 1:
            raise ConfigError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        if self.num_layers < 0:
            raise ConfigError(f"num_layers must be >= 0, got {self.num_layers}")
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ConfigError(f"alpha must be a finite value >= 0, got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if self.reg_lambda < 0:
            raise ConfigError(f"reg_lambda must be >= 0, got {self.reg_lambda}")
        if self.propagation not in _PROPAGATION:
            raise ConfigError(f"propagation must be one of {_PROPAGATION}, got {self.propagation!r}")
        if self.self_connection not in _SELF_CONNECTION:
            raise ConfigError(f"self_connection must be one of {_SELF_CONNECTION}, got {self.self_connection!r}")
        if self.layer_aggregation not in _AGGREGATION:
            raise ConfigError(f"layer_aggregation must be one of {_AGGREGATION}, got {self.layer_aggregation!r}")
        if self.attention not in _ATTENTION:
            raise ConfigError(f"attention must be one of {_ATTENTION}, got {self.attention!r}")

    @property
    def effective_alpha(self) -> float:
        """Self-term weight actually used by propagation (zero when the
        self connection is disabled)."""
        return self.alpha if self.self_connection == "on" else 0.0


@dataclass
class ModelParameters:
    """All trainable arrays, keyed per modality.  ``layer_weights`` holds one
    square matrix per propagation layer and stays empty for the linear
    propagation rule."""

    user_emb0: dict
    proj_weight: dict
    proj_bias: dict
    layer_weights: dict = field(default_factory=lambda: {m: [] for m in MODALITIES})

    def named_arrays(self):
        """(name, array) pairs in a fixed order; the registry every consumer
        (optimizer, checkpoints, gradient checks) iterates."""
        out = []
        for m in MODALITIES:
            out.append((f"user_emb0_{m}", self.user_emb0[m]))
        for m in MODALITIES:
            out.append((f"proj_weight_{m}", self.proj_weight[m]))
            out.append((f"proj_bias_{m}", self.proj_bias[m]))
        for m in MODALITIES:
            for l, w in enumerate(self.layer_weights[m]):
                out.append((f"layer_weight_{m}_{l}", w))
        return out

    def array(self, name: str) -> np.ndarray:
        for n, a in self.named_arrays():
            if n == name:
                return a
        raise KeyError(name)

    def copy(self) -> "ModelParameters":
        return ModelParameters(
            user_emb0={m: self.user_emb0[m].copy() for m in MODALITIES},
            proj_weight={m: self.proj_weight[m].copy() for m in MODALITIES},
            proj_bias={m: self.proj_bias[m].copy() for m in MODALITIES},
            layer_weights={m: [w.copy() for w in self.layer_weights[m]] for m in MODALITIES},
        )

    def zeros_like(self) -> "ModelParameters":
        return ModelParameters(
            user_emb0={m: np.zeros_like(self.user_emb0[m]) for m in MODALITIES},
            proj_weight={m: np.zeros_like(self.proj_weight[m]) for m in MODALITIES},
            proj_bias={m: np.zeros_like(self.proj_bias[m]) for m in MODALITIES},
            layer_weights={m: [np.zeros_like(w) for w in self.layer_weights[m]] for m in MODALITIES},
        )

    def astype(self, dtype) -> "ModelParameters":
        return ModelParameters(
            user_emb0={m: self.user_emb0[m].astype(dtype) for m in MODALITIES},
            proj_weight={m: self.proj_weight[m].astype(dtype) for m in MODALITIES},
            proj_bias={m: self.proj_bias[m].astype(dtype) for m in MODALITIES},
            layer_weights={m: [w.astype(dtype) for w in self.layer_weights[m]] for m in MODALITIES},
        )


def init_parameters(hp: HyperParams, dims, counts, seed: int) -> ModelParameters:
    """Glorot-uniform matrices (bound sqrt(6 / (rows + cols))), zero biases,
    float32, deterministic in ``seed``.  ``dims`` is (d_t, d_v), ``counts`` is
    (num_users, num_items).  Draw order is fixed so adding layers never
    perturbs the earlier tables."""
    if seed < 0:
        raise ConfigError(f"seed must be >= 0, got {seed}")
    feature_dims = dict(zip(MODALITIES, dims))
    num_users = counts[0]
    rng = np.random.default_rng([seed, 22])
    d = hp.embedding_dim

    def glorot(rows, cols):
        bound = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-bound, bound, size=(rows, cols)).astype(np.float32)

    user_emb0 = {m: glorot(num_users, d) for m in MODALITIES}
    proj_weight = {m: glorot(d, feature_dims[m]) for m in MODALITIES}
    proj_bias = {m: np.zeros(d, dtype=np.float32) for m in MODALITIES}
    layer_weights = {m: [] for m in MODALITIES}
    if hp.propagation == "nonlinear":
        for m in MODALITIES:
            layer_weights[m] = [glorot(d, d) for _ in range(hp.num_layers)]
    return ModelParameters(user_emb0, proj_weight, proj_bias, layer_weights)


def project_features(features: dict, params: ModelParameters) -> dict:
    """Layer-0 item embeddings per modality: W f + b."""
    out = {}
    for m in MODALITIES:
        feat = features[m]
        values = feat.values if isinstance(feat, ModalityFeatureMatrix) else np.asarray(feat)
        w, b = params.proj_weight[m], params.proj_bias[m]
        if values.shape[1] != w.shape[1]:
            raise ValueError(
                f"{m} features have dim {values.shape[1]}, projection expects {w.shape[1]}"
            )
        dt = np.result_type(values.dtype, w.dtype)
        out[m] = values.astype(dt, copy=False) @ w.T.astype(dt, copy=False) + b.astype(dt, copy=False)
    return out


def leaky_relu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, LEAKY_SLOPE * x)


@dataclass
class EncoderOutput:
    user_layers: dict   # modality -> [layer 0 .. layer L] user embeddings
    item_layers: dict
    user_final: dict    # modality -> aggregated per-side embedding
    item_final: dict
    fused_user: np.ndarray  # (num_users, 2 * d), textual block first
    fused_item: np.ndarray


def encode(graph: BipartiteGraph, params: ModelParameters, features: dict, hp: HyperParams) -> EncoderOutput:
    """Run all propagation layers for both modalities and fuse by
    concatenation.  Keeps every layer so diagnostics and the backward pass can
    revisit them."""
    item0 = project_features(features, params)
    alpha = hp.effective_alpha
    user_layers, item_layers = {}, {}
    for m in MODALITIES:
        u_l = [params.user_emb0[m]]
        i_l = [item0[m]]
        for l in range(hp.num_layers):
            zu, zi = propagate(graph, u_l[-1], i_l[-1], alpha)
            if hp.propagation == "nonlinear":
                w = params.layer_weights[m][l].astype(zu.dtype)
                zu = leaky_relu(zu @ w.T)
                zi = leaky_relu(zi @ w.T)
            u_l.append(zu)
            i_l.append(zi)
        user_layers[m], item_layers[m] = u_l, i_l

    user_final, item_final = {}, {}
    for m in MODALITIES:
        if hp.layer_aggregation == "mean_combination":
            user_final[m] = sum(user_layers[m]) / len(user_layers[m])
            item_final[m] = sum(item_layers[m]) / len(item_layers[m])
        else:
            user_final[m] = user_layers[m][-1]
            item_final[m] = item_layers[m][-1]
    fused_user = np.hstack([user_final[m] for m in MODALITIES])
    fused_item = np.hstack([item_final[m] for m in MODALITIES])
    return EncoderOutput(user_layers, item_layers, user_final, item_final, fused_user, fused_item)


def attention_weights(fused_item: np.ndarray, target_item: int, user_items) -> np.ndarray:
    """Softmax (max-subtracted) over the target's inner products with each
    item the user interacted with."""
    idx = np.asarray(user_items, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("user has no interaction history to attend over")
    s = fused_item[idx] @ fused_item[target_item]
    s = s - s.max()
    e = np.exp(s)
    return e / e.sum()


def target_oriented_embedding(fused_item: np.ndarray, weights: np.ndarray, user_items) -> np.ndarray:
    """User re-represented for one target: weighted sum of the fused
    embeddings of the interacted items."""
    idx = np.asarray(user_items, dtype=np.int64)
    weights = np.asarray(weights)
    if weights.shape != (idx.size,):
        raise ValueError(f"{weights.shape[0] if weights.ndim else 0} weights for {idx.size} history items")
    return weights @ fused_item[idx]


@dataclass(frozen=True)
class PreferenceScore:
    y_general: float
    y_target_oriented: float
    y_blended: float


def score(user: int, target: int, enc: EncoderOutput, graph: BipartiteGraph, hp: HyperParams) -> PreferenceScore:
    """Blend of the general and target-oriented affinities for one (user,
    target item) pair; with attention disabled only the general term remains."""
    e_u = enc.fused_user[user]
    e_c = enc.fused_item[target]
    y_g = float(e_u @ e_c)
    if hp.attention == "off":
        return PreferenceScore(y_g, 0.0, y_g)
    items = graph.items_of(user)
    a = attention_weights(enc.fused_item, target, items)
    y_o = float(target_oriented_embedding(enc.fused_item, a, items) @ e_c)
    y = (1.0 - hp.beta) * y_g + hp.beta * y_o
    return PreferenceScore(y_g, y_o, y)


def score_all_items(user: int, candidates: np.ndarray, enc: EncoderOutput, graph: BipartiteGraph, hp: HyperParams) -> np.ndarray:
    """Blended scores for one user against many candidate items, float64.

    The target-oriented term reuses the attention identity: with logits
    s_j = e_c . e_h_j, the re-represented score is sum_j softmax(s)_j * s_j.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size == 0:
        return np.zeros(0, dtype=np.float64)
    e_u = enc.fused_user[user].astype(np.float64)
    e_c = enc.fused_item[candidates].astype(np.float64)
    y_g = e_c @ e_u
    if hp.attention == "off":
        return y_g
    hist = enc.fused_item[graph.items_of(user)].astype(np.float64)
    s = e_c @ hist.T                       # (C, H) logits
    s_shift = s - s.max(axis=1, keepdims=True)
    a = np.exp(s_shift)
    a /= a.sum(axis=1, keepdims=True)
    y_o = (a * s).sum(axis=1)
    return (1.0 - hp.beta) * y_g + hp.beta * y_o


_CHECKPOINT_MAGIC = "MONET-CHECKPOINT v1"
_HP_FIELDS = (
    "embedding_dim", "num_layers", "alpha", "beta", "reg_lambda",
    "propagation", "self_connection", "layer_aggregation", "attention",
)


def save_checkpoint(path, params: ModelParameters, hp: HyperParams, seed: int) -> None:
    """Text header (settings + group manifest) followed by one binary block
    per parameter group, in manifest order."""
    named = params.named_arrays()
    header = io.StringIO()
    header.write(_CHECKPOINT_MAGIC + "\n")
    for f in _HP_FIELDS:
        header.write(f"{f} = {getattr(hp, f)}\n")
    header.write(f"seed = {seed}\n")
    header.write("groups = " + ",".join(n for n, _ in named) + "\n")
    header.write("end_header\n")
    with open(path, "wb") as fh:
        fh.write(header.getvalue().encode("utf-8"))
        for _, arr in named:
            write_mmfv_block(fh, arr)


def _parse_hp_value(key, raw):
    try:
        if key in ("embedding_dim", "num_layers"):
            return int(raw)
        if key in ("alpha", "beta", "reg_lambda"):
            return float(raw)
        return raw
    except ValueError:
        raise CheckpointError(f"bad value for {key}: {raw!r}") from None


def load_checkpoint(path):
    """Returns (params, hyperparams, seed).  Validates the group manifest and
    cross-checks every shape against the stored settings."""
    with open(path, "rb") as fh:
        first = fh.readline().decode("utf-8", errors="replace").rstrip("\n")
        if first != _CHECKPOINT_MAGIC:
            raise CheckpointError(f"not a checkpoint file: bad magic {first!r}")
        fields, seed, groups = {}, None, None
        while True:
            line = fh.readline().decode("utf-8", errors="replace")
            if not line:
                raise CheckpointError("truncated header (no end_header line)")
            line = line.rstrip("\n")
            if line == "end_header":
                break
            key, sep, raw = line.partition(" = ")
            if not sep:
                raise CheckpointError(f"malformed header line: {line!r}")
            if key == "seed":
                seed = int(raw)
            elif key == "groups":
                groups = raw.split(",") if raw else []
            elif key in _HP_FIELDS:
                fields[key] = _parse_hp_value(key, raw)
            else:
                raise CheckpointError(f"unknown header key: {key!r}")
        missing = [f for f in _HP_FIELDS if f not in fields]
        if missing or seed is None or groups is None:
            missing_all = missing + (["seed"] if seed is None else []) + (["groups"] if groups is None else [])
            raise CheckpointError(f"header is missing keys: {', '.join(missing_all)}")
        try:
            hp = HyperParams(**fields)
        except ConfigError as exc:
            raise CheckpointError(f"invalid stored settings: {exc}") from None

        arrays = {}
        for name in groups:
            arrays[name] = read_mmfv_block(fh, name)
        if fh.read(1):
            raise CheckpointError("trailing bytes after the last parameter block")

    d = hp.embedding_dim
    n_layers = hp.num_layers if hp.propagation == "nonlinear" else 0
    expected = [f"user_emb0_{m}" for m in MODALITIES]
    for m in MODALITIES:
        expected += [f"proj_weight_{m}", f"proj_bias_{m}"]
    for m in MODALITIES:
        expected += [f"layer_weight_{m}_{l}" for l in range(n_layers)]
    if groups != expected:
        raise CheckpointError(f"unexpected group manifest: {groups}")

    num_users = arrays[f"user_emb0_{MODALITIES[0]}"].shape[0]
    for m in MODALITIES:
        if arrays[f"user_emb0_{m}"].shape != (num_users, d):
            raise CheckpointError(f"user_emb0_{m} has shape {arrays[f'user_emb0_{m}'].shape}, expected ({num_users}, {d})")
        if arrays[f"proj_weight_{m}"].shape[0] != d:
            raise CheckpointError(f"proj_weight_{m} has {arrays[f'proj_weight_{m}'].shape[0]} rows, expected {d}")
        if arrays[f"proj_bias_{m}"].shape != (1, d):
            raise CheckpointError(f"proj_bias_{m} has shape {arrays[f'proj_bias_{m}'].shape}, expected (1, {d})")
        for l in range(n_layers):
            if arrays[f"layer_weight_{m}_{l}"].shape != (d, d):
                raise CheckpointError(f"layer_weight_{m}_{l} has shape {arrays[f'layer_weight_{m}_{l}'].shape}, expected ({d}, {d})")

    params = ModelParameters(
        user_emb0={m: arrays[f"user_emb0_{m}"] for m in MODALITIES},
        proj_weight={m: arrays[f"proj_weight_{m}"] for m in MODALITIES},
        proj_bias={m: arrays[f"proj_bias_{m}"].reshape(-1) for m in MODALITIES},
        layer_weights={m: [arrays[f"layer_weight_{m}_{l}"] for l in range(n_layers)] for m in MODALITIES},
    )
    return params, hp, seed

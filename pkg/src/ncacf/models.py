"""Model variants: parameter containers, initialization, prediction paths,
and checkpoint serialization.

A model couples a user embedding matrix W (K x U), an optional free item
embedding matrix H (K x I), an optional content extractor mapping item
features to the embedding space, and an interaction head that is either a
plain dot product or a tower MLP applied to the combined embeddings.
"""

from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .data import ConfidenceScheme, FeatureTable
from .errors import ColdStartUnsupportedError, ConfigError
from .numerics import (AdamState, Layer, MLPParams, mlp_forward,
                       read_adam_blob, read_mlp_blob, write_adam_blob,
                       write_mlp_blob)
from .rng import rng_for

log = logging.getLogger(__name__)

FAMILIES = ("wmf", "dcb", "mf_hybrid", "mf_uni", "ncacf", "ncf")
COUPLINGS = ("relaxed", "strict", "content_free")
COMBINATIONS = ("multiplication", "concatenation")
INTERACTION_KINDS = ("dot_product", "deep")


@dataclass(frozen=True)
class ModelVariant:
    """Which estimator to build; validated against the family constraints."""

    family: str
    coupling: str
    interaction_kind: str = "dot_product"
    combination: str = "multiplication"
    q_hidden: int = 0
    # identity exists only so the dot-product reduction can be checked.
    output_activation: str = "sigmoid"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        if self.coupling not in COUPLINGS:
            raise ConfigError(f"unknown coupling {self.coupling!r}")
        if self.interaction_kind not in INTERACTION_KINDS:
            raise ConfigError(f"unknown interaction {self.interaction_kind!r}")
        if self.combination not in COMBINATIONS:
            raise ConfigError(f"unknown combination {self.combination!r}")
        if self.family in ("wmf", "ncf") and self.coupling != "content_free":
            raise ConfigError(f"{self.family} requires coupling=content_free")
        if self.family in ("dcb", "mf_hybrid", "mf_uni"):
            if self.coupling == "content_free":
                raise ConfigError(f"{self.family} requires relaxed or strict coupling")
            if self.interaction_kind != "dot_product":
                raise ConfigError(f"{self.family} uses a dot-product interaction")
        if self.family == "wmf" and self.interaction_kind != "dot_product":
            raise ConfigError("wmf uses a dot-product interaction")
        if self.family == "ncf" and self.interaction_kind != "deep":
            raise ConfigError("ncf uses a deep interaction")
        if self.q_hidden < 0:
            raise ConfigError("q_hidden must be >= 0")
        if self.output_activation not in ("sigmoid", "identity"):
            raise ConfigError(f"unknown output activation {self.output_activation!r}")

    @property
    def has_content(self) -> bool:
        return self.coupling != "content_free"

    @property
    def has_free_items(self) -> bool:
        """True when H is a free parameter (relaxed and content-free models)."""
        return self.coupling != "strict"


@dataclass(frozen=True)
class Hyperparams:
    """Training constants shared by every estimator.

    n_iters is the number of outer ALS(+GD) iterations; n_gd the gradient
    epochs per iteration; max_epochs the budget of a purely gradient-based
    run; pretrain/finetune split the budget of the deep-interaction models.
    """

    embed_dim: int = 16
    lambda_w: float = 1.0
    lambda_h: float = 10.0
    tau: float = 7.0
    alpha: float = 2.0
    epsilon: float = 1e-6
    eta: float = 1e-2
    batch_items: int = 64
    n_iters: int = 20
    n_gd: int = 5
    max_epochs: int = 50
    pretrain_epochs: int = 25
    finetune_epochs: int = 50
    eval_every: int = 5
    hidden_width: int = 64
    extractor_layers: int = 3

    def __post_init__(self):
        for name in ("lambda_w", "lambda_h", "alpha", "eta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.tau < 1:
            raise ConfigError("tau must be >= 1")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.batch_items < 1:
            raise ConfigError("batch_items must be >= 1")
        for name in ("embed_dim", "hidden_width", "extractor_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("n_iters", "n_gd", "max_epochs", "pretrain_epochs",
                     "finetune_epochs", "eval_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    def scheme(self) -> ConfidenceScheme:
        return ConfidenceScheme(self.tau, self.alpha, self.epsilon)


@dataclass
class Embeddings:
    """User matrix W (K x U) and item matrix H (K x I); column u/i layout.

    H is None for strict-coupling models, whose item vectors always come
    from the content extractor.
    """

    W: np.ndarray
    H: np.ndarray | None

    @property
    def dim(self) -> int:
        return self.W.shape[0]


def combine(w: np.ndarray, h: np.ndarray, mode: str) -> np.ndarray:
    """Elementwise product (length K) or stacked [w; h] (length 2K)."""
    w = np.asarray(w, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if w.shape != h.shape:
        raise ValueError("embedding lengths differ")
    if mode == "multiplication":
        return w * h
    if mode == "concatenation":
        return np.concatenate([w, h])
    raise ValueError(f"unknown combination {mode!r}")


def combined_dim(embed_dim: int, combination: str) -> int:
    return embed_dim if combination == "multiplication" else 2 * embed_dim


def tower_widths(combined: int, q_hidden: int) -> list[int]:
    """Hidden widths combined/2^(q-1), floored and clamped at 1."""
    widths = []
    for q in range(1, q_hidden + 1):
        w = combined // (2 ** (q - 1))
        if w < 1:
            w = 1
            log.warning("tower layer %d clamped to width 1 (combined dim %d)", q, combined)
        widths.append(w)
    return widths


def _lecun_layer(rng: np.random.Generator, out_dim: int, in_dim: int,
                 activation: str) -> Layer:
    limit = np.sqrt(3.0 / in_dim)
    w = rng.uniform(-limit, limit, size=(out_dim, in_dim))
    b = rng.uniform(-limit, limit, size=out_dim)
    return Layer(w, b, activation)


def build_extractor(feature_dim: int, embed_dim: int, hidden_width: int,
                    num_layers: int, rng: np.random.Generator) -> MLPParams:
    """Content extractor: relu hidden layers, identity output of size K."""
    if num_layers < 1:
        raise ConfigError("extractor needs at least one layer")
    layers = []
    in_dim = feature_dim
    for _ in range(num_layers - 1):
        layers.append(_lecun_layer(rng, hidden_width, in_dim, "relu"))
        in_dim = hidden_width
    layers.append(_lecun_layer(rng, embed_dim, in_dim, "identity"))
    return MLPParams(layers)


def build_tower(combined: int, q_hidden: int, rng: np.random.Generator,
                output_activation: str = "sigmoid") -> MLPParams:
    """Interaction tower: halving relu hidden layers, then a single-neuron
    bias-free output layer whose weights start at one."""
    layers = []
    in_dim = combined
    for width in tower_widths(combined, q_hidden):
        layers.append(_lecun_layer(rng, width, in_dim, "relu"))
        in_dim = width
    layers.append(Layer(np.ones((1, in_dim)), None, output_activation))
    return MLPParams(layers)


@dataclass
class Model:
    """A trainable/evaluable model instance."""

    variant: ModelVariant
    num_users: int
    num_items: int
    embed_dim: int
    feature_dim: int
    embeddings: Embeddings
    extractor: MLPParams | None
    interaction: MLPParams | None
    init_seed: int = 0
    extras: dict = field(default_factory=dict)

    def copy(self) -> "Model":
        return Model(
            variant=self.variant,
            num_users=self.num_users,
            num_items=self.num_items,
            embed_dim=self.embed_dim,
            feature_dim=self.feature_dim,
            embeddings=Embeddings(self.embeddings.W.copy(),
                                  None if self.embeddings.H is None else self.embeddings.H.copy()),
            extractor=None if self.extractor is None else self.extractor.copy(),
            interaction=None if self.interaction is None else self.interaction.copy(),
            init_seed=self.init_seed,
            extras=dict(self.extras),
        )


def init_model(variant: ModelVariant, num_users: int, num_items: int,
               embed_dim: int, feature_dim: int, seed: int,
               hidden_width: int = 64, extractor_layers: int = 3,
               with_interaction: bool = True) -> Model:
    """Draw a fresh model: embeddings ~ N(0, 1e-2^2), MLP weights/biases
    uniform on +-sqrt(3/fan_in), interaction output weights all ones.

    with_interaction=False leaves a deep variant's tower unbuilt (used by the
    dot-product pretraining phase, which attaches the tower later).
    """
    if min(num_users, num_items, embed_dim) < 1:
        raise ConfigError("model dimensions must be positive")
    if variant.has_content and feature_dim < 1:
        raise ConfigError("content-aware models need a positive feature dim")
    W = rng_for(seed, "init.embeddings.W").normal(0.0, 1e-2, size=(embed_dim, num_users))
    H = None
    if variant.has_free_items:
        H = rng_for(seed, "init.embeddings.H").normal(0.0, 1e-2, size=(embed_dim, num_items))
    extractor = None
    if variant.has_content:
        extractor = build_extractor(feature_dim, embed_dim, hidden_width,
                                    extractor_layers, rng_for(seed, "init.extractor"))
    interaction = None
    if variant.interaction_kind == "deep" and with_interaction:
        interaction = attach_tower(variant, embed_dim, seed)
    return Model(variant, num_users, num_items, embed_dim, feature_dim,
                 Embeddings(W, H), extractor, interaction, init_seed=seed)


def attach_tower(variant: ModelVariant, embed_dim: int, seed: int) -> MLPParams:
    return build_tower(combined_dim(embed_dim, variant.combination),
                       variant.q_hidden, rng_for(seed, "init.interaction"),
                       variant.output_activation)


def extract_item_embeddings(model: Model, features: FeatureTable,
                            items: np.ndarray | None = None) -> np.ndarray:
    """phi(x_i) for the given items (default: all), as a (K, n) matrix."""
    if model.extractor is None:
        raise ConfigError("model has no content extractor")
    rows = features.values if items is None else features.values[np.asarray(items)]
    out, _ = mlp_forward(model.extractor, rows)
    return out.T


def item_vectors(model: Model, items: np.ndarray, features: FeatureTable | None,
                 setting: str) -> np.ndarray:
    """Item embedding columns used for prediction, as a (K, n) matrix.

    Relaxed models use stored embeddings warm and the extractor cold; strict
    models always use the extractor; content-free models have no cold path.
    """
    if setting not in ("warm", "cold"):
        raise ValueError(f"unknown setting {setting!r}")
    items = np.asarray(items, dtype=np.int64)
    coupling = model.variant.coupling
    if coupling == "strict" or (coupling == "relaxed" and setting == "cold"):
        if features is None:
            raise ConfigError("this model/setting requires item features")
        return extract_item_embeddings(model, features, items)
    if coupling == "content_free" and setting == "cold":
        raise ColdStartUnsupportedError(
            f"{model.variant.family} has no content branch and cannot score cold items")
    return model.embeddings.H[:, items]


def item_vector(model: Model, item: int, features: FeatureTable | None,
                setting: str) -> np.ndarray:
    return item_vectors(model, np.array([item]), features, setting)[:, 0]


def predict(model: Model, user: int, item_vec: np.ndarray) -> float:
    """Score one (user, item-vector) pair.

    Deep variants fall back to the plain dot product while their tower is
    not attached (the pretraining configuration).
    """
    w = model.embeddings.W[:, user]
    if model.interaction is None:
        return float(w @ item_vec)
    v = combine(w, item_vec, model.variant.combination)
    out, _ = mlp_forward(model.interaction, v)
    return float(out[0])


def score_matrix(model: Model, item_vecs: np.ndarray) -> np.ndarray:
    """Scores for every user against the given item-vector columns: (U, n)."""
    W = model.embeddings.W
    if model.interaction is None:
        return W.T @ item_vecs
    V = combine_grid(W, item_vecs, model.variant.combination)
    out, _ = mlp_forward(model.interaction, V.reshape(-1, V.shape[2]))
    return out.reshape(V.shape[0], V.shape[1])


def combine_grid(W: np.ndarray, item_vecs: np.ndarray, combination: str) -> np.ndarray:
    """Combined vectors for the full user x item grid: (U, n, K')."""
    U = W.shape[1]
    n = item_vecs.shape[1]
    wu = W.T[:, None, :]  # (U, 1, K)
    hi = item_vecs.T[None, :, :]  # (1, n, K)
    if combination == "multiplication":
        return wu * hi
    k = W.shape[0]
    out = np.empty((U, n, 2 * k), dtype=np.float64)
    out[:, :, :k] = np.broadcast_to(wu, (U, n, k))
    out[:, :, k:] = np.broadcast_to(hi, (U, n, k))
    return out


def predict_all_items(model: Model, user: int, items: np.ndarray,
                      features: FeatureTable | None, setting: str) -> np.ndarray:
    """Scores for one user over an ordered item list."""
    iv = item_vectors(model, items, features, setting)
    if model.interaction is None:
        return model.embeddings.W[:, user] @ iv
    w = model.embeddings.W[:, user]
    V = np.stack([combine(w, iv[:, j], model.variant.combination)
                  for j in range(iv.shape[1])])
    out, _ = mlp_forward(model.interaction, V)
    return out[:, 0]


# ---------------------------------------------------------------------------
# Checkpoints
#
# Layout: magic b"NCKP", u32 version, u32 header_len, UTF-8 JSON header, then
# tagged sections until EOF. Section: u8 kind (0 array / 1 mlp / 2 adam),
# u16 name_len, name, u64 payload_len, payload. Array payload: u8 ndim,
# u32[ndim] dims, f64 little-endian data.
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"NCKP"
_CKPT_VERSION = 1
_KIND_ARRAY, _KIND_MLP, _KIND_ADAM = 0, 1, 2


def _array_payload(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def _read_array_payload(raw: bytes) -> np.ndarray:
    (ndim,) = struct.unpack_from("<B", raw, 0)
    shape = struct.unpack_from(f"<{ndim}I", raw, 1)
    data = np.frombuffer(raw, dtype="<f8", offset=1 + 4 * ndim)
    return data.reshape(shape).copy()


def write_checkpoint(path, header: dict, arrays: dict[str, np.ndarray] | None = None,
                     mlps: dict[str, MLPParams] | None = None,
                     adams: dict[str, AdamState] | None = None) -> None:
    raw_header = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(raw_header)))
        fh.write(raw_header)
        for kind, table, dump in (
            (_KIND_ARRAY, arrays or {}, _array_payload),
            (_KIND_MLP, mlps or {}, None),
            (_KIND_ADAM, adams or {}, None),
        ):
            for name in sorted(table):
                if kind == _KIND_ARRAY:
                    payload = dump(table[name])
                else:
                    buf = io.BytesIO()
                    (write_mlp_blob if kind == _KIND_MLP else write_adam_blob)(buf, table[name])
                    payload = buf.getvalue()
                raw_name = name.encode("utf-8")
                fh.write(struct.pack("<BH", kind, len(raw_name)))
                fh.write(raw_name)
                fh.write(struct.pack("<Q", len(payload)))
                fh.write(payload)


def read_checkpoint(path):
    """Returns (header, arrays, mlps, adams)."""
    arrays: dict[str, np.ndarray] = {}
    mlps: dict[str, MLPParams] = {}
    adams: dict[str, AdamState] = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (magic {magic!r})")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        while True:
            head = fh.read(3)
            if not head:
                break
            kind, name_len = struct.unpack("<BH", head)
            name = fh.read(name_len).decode("utf-8")
            (payload_len,) = struct.unpack("<Q", fh.read(8))
            payload = fh.read(payload_len)
            if kind == _KIND_ARRAY:
                arrays[name] = _read_array_payload(payload)
            elif kind == _KIND_MLP:
                mlps[name] = read_mlp_blob(io.BytesIO(payload))
            elif kind == _KIND_ADAM:
                adams[name] = read_adam_blob(io.BytesIO(payload))
            else:
                raise ValueError(f"{path}: unknown section kind {kind}")
    return header, arrays, mlps, adams


def save_model(path, model: Model, extra_header: dict | None = None,
               arrays: dict[str, np.ndarray] | None = None,
               adams: dict[str, AdamState] | None = None) -> None:
    """Persist a model (plus optional training state) to one checkpoint."""
    header = {
        "kind": "ncacf-model",
        "variant": {
            "family": model.variant.family,
            "coupling": model.variant.coupling,
            "interaction_kind": model.variant.interaction_kind,
            "combination": model.variant.combination,
            "q_hidden": model.variant.q_hidden,
            "output_activation": model.variant.output_activation,
        },
        "dims": {
            "num_users": model.num_users,
            "num_items": model.num_items,
            "embed_dim": model.embed_dim,
            "feature_dim": model.feature_dim,
        },
        "init_seed": model.init_seed,
        "extras": model.extras,
    }
    if extra_header:
        header.update(extra_header)
    all_arrays = {"W": model.embeddings.W}
    if model.embeddings.H is not None:
        all_arrays["H"] = model.embeddings.H
    if arrays:
        all_arrays.update(arrays)
    mlps = {}
    if model.extractor is not None:
        mlps["extractor"] = model.extractor
    if model.interaction is not None:
        mlps["interaction"] = model.interaction
    write_checkpoint(path, header, all_arrays, mlps, adams)


def load_model(path):
    """Returns (model, header, arrays, adams); arrays excludes W/H."""
    header, arrays, mlps, adams = read_checkpoint(path)
    if header.get("kind") != "ncacf-model":
        raise ValueError(f"{path}: not a model checkpoint")
    variant = ModelVariant(**header["variant"])
    dims = header["dims"]
    model = Model(
        variant=variant,
        num_users=dims["num_users"],
        num_items=dims["num_items"],
        embed_dim=dims["embed_dim"],
        feature_dim=dims["feature_dim"],
        embeddings=Embeddings(arrays.pop("W"), arrays.pop("H", None)),
        extractor=mlps.get("extractor"),
        interaction=mlps.get("interaction"),
        init_seed=header.get("init_seed", 0),
        extras=header.get("extras", {}),
    )
    return model, header, arrays, adams

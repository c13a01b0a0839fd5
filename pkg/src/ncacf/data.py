"""Interaction and content-feature data: ingestion, filtering, binarization,
confidence weighting, train/validation/test splitting, and a planted-model
synthetic generator.

File formats (UTF-8 text, tab-separated, `#` lines are comments):
  triplets:  user<TAB>item<TAB>count       one interaction per line
  features:  item<TAB>v1<TAB>...<TAB>vL    fixed L per file
  split plan: key = value header plus explicit membership sections (see
  write_split_plan).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParseError
from .rng import rng_for

# Fold id for warm-split triplets pinned to the training side of every fold
# rotation (orphan repair and single-interaction items land here).
TRAIN_ALWAYS = -1


# ---------------------------------------------------------------------------
# Core containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InteractionTriplets:
    """Densely indexed (user, item, playcount) records.

    user_labels / item_labels keep the original identifiers so reports can
    refer back to the source data.
    """

    users: np.ndarray  # int64 (n,)
    items: np.ndarray  # int64 (n,)
    counts: np.ndarray  # float64 (n,), all > 0
    num_users: int
    num_items: int
    user_labels: tuple[str, ...]
    item_labels: tuple[str, ...]

    @property
    def num_entries(self) -> int:
        return self.users.shape[0]

    @classmethod
    def create(cls, users, items, counts, num_users, num_items,
               user_labels=None, item_labels=None) -> "InteractionTriplets":
        users = np.ascontiguousarray(users, dtype=np.int64)
        items = np.ascontiguousarray(items, dtype=np.int64)
        counts = np.ascontiguousarray(counts, dtype=np.float64)
        if not (users.shape == items.shape == counts.shape):
            raise DataError("triplet arrays must have equal lengths")
        if users.size:
            if users.min() < 0 or users.max() >= num_users:
                raise DataError("user index out of range")
            if items.min() < 0 or items.max() >= num_items:
                raise DataError("item index out of range")
            if counts.min() <= 0:
                raise DataError("playcounts must be positive")
            keys = users * num_items + items
            if np.unique(keys).size != keys.size:
                raise DataError("duplicate (user, item) pair")
        if user_labels is None:
            user_labels = tuple(f"u{k}" for k in range(num_users))
        if item_labels is None:
            item_labels = tuple(f"i{k}" for k in range(num_items))
        return cls(users, items, counts, int(num_users), int(num_items),
                   tuple(user_labels), tuple(item_labels))

    def subset(self, idx: np.ndarray) -> "InteractionTriplets":
        """Same universe, restricted to the given entry indices."""
        idx = np.asarray(idx, dtype=np.int64)
        return InteractionTriplets(
            self.users[idx], self.items[idx], self.counts[idx],
            self.num_users, self.num_items, self.user_labels, self.item_labels)


@dataclass(frozen=True)
class SparsePlaycounts:
    """Row and column access to one triplet multiset.

    by_user[u] = (item indices, counts), by_item[i] = (user indices, counts),
    both sorted by index ascending. Binarized playcounts and confidences are
    computed on the fly from the counts; zero-count pairs are never stored
    (their confidence is the constant 1).
    """

    num_users: int
    num_items: int
    by_user: tuple[tuple[np.ndarray, np.ndarray], ...]
    by_item: tuple[tuple[np.ndarray, np.ndarray], ...]

    @classmethod
    def from_triplets(cls, t: InteractionTriplets) -> "SparsePlaycounts":
        by_user = _group(t.users, t.items, t.counts, t.num_users)
        by_item = _group(t.items, t.users, t.counts, t.num_items)
        return cls(t.num_users, t.num_items, by_user, by_item)

    def triplet_set(self) -> set[tuple[int, int, float]]:
        out = set()
        for u, (items, counts) in enumerate(self.by_user):
            for i, c in zip(items, counts):
                out.add((u, int(i), float(c)))
        return out


def _group(keys, values, counts, n):
    order = np.lexsort((values, keys))
    keys = keys[order]
    values = values[order]
    counts = counts[order]
    bounds = np.searchsorted(keys, np.arange(n + 1))
    return tuple(
        (values[bounds[k]:bounds[k + 1]].copy(), counts[bounds[k]:bounds[k + 1]].copy())
        for k in range(n)
    )


# ---------------------------------------------------------------------------
# Binarization and confidence
# ---------------------------------------------------------------------------

def binarize(playcount, tau: float):
    """1 where playcount >= tau, else 0. Works on scalars and arrays."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    return np.where(np.asarray(playcount, dtype=np.float64) >= tau, 1.0, 0.0)


def confidence(playcount, alpha: float, epsilon: float):
    """1 + alpha * log(1 + playcount / epsilon), natural logarithm."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    p = np.asarray(playcount, dtype=np.float64)
    return 1.0 + alpha * np.log1p(p / epsilon)


@dataclass(frozen=True)
class ConfidenceScheme:
    """Threshold and confidence constants applied to raw playcounts."""

    tau: float = 7.0
    alpha: float = 2.0
    epsilon: float = 1e-6

    def r(self, counts):
        return binarize(counts, self.tau)

    def c(self, counts):
        return confidence(counts, self.alpha, self.epsilon)


# ---------------------------------------------------------------------------
# File ingestion
# ---------------------------------------------------------------------------

def load_triplets(path) -> InteractionTriplets:
    """Parse a triplet file; ids are densely re-indexed in first-seen order."""
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    seen: dict[tuple[int, int], int] = {}
    users, items, counts = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected user<TAB>item<TAB>count")
            raw_u, raw_i, raw_c = parts
            try:
                count = int(raw_c)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: count {raw_c!r} is not an integer")
            if count <= 0:
                raise ParseError(f"{path}:{lineno}: count must be positive")
            u = user_index.setdefault(raw_u, len(user_index))
            i = item_index.setdefault(raw_i, len(item_index))
            if (u, i) in seen:
                raise ParseError(
                    f"{path}:{lineno}: duplicate pair ({raw_u!r}, {raw_i!r}), "
                    f"first seen on line {seen[(u, i)]}")
            seen[(u, i)] = lineno
            users.append(u)
            items.append(i)
            counts.append(count)
    return InteractionTriplets.create(
        np.array(users, dtype=np.int64), np.array(items, dtype=np.int64),
        np.array(counts, dtype=np.float64),
        len(user_index), len(item_index),
        tuple(user_index), tuple(item_index))


def write_triplets(path, triplets: InteractionTriplets) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# user\titem\tcount\n")
        for u, i, c in zip(triplets.users, triplets.items, triplets.counts):
            fh.write(f"{triplets.user_labels[u]}\t{triplets.item_labels[i]}\t{int(c)}\n")


def load_features(path):
    """Parse a feature file into (labels, I x L matrix)."""
    labels = []
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ParseError(f"{path}:{lineno}: expected item<TAB>v1<TAB>...")
            if width is None:
                width = len(parts) - 1
            elif len(parts) - 1 != width:
                raise ParseError(
                    f"{path}:{lineno}: expected {width} values, got {len(parts) - 1}")
            try:
                vec = [float(v) for v in parts[1:]]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric feature value")
            labels.append(parts[0])
            rows.append(vec)
    return labels, np.array(rows, dtype=np.float64)


def write_features(path, labels, values: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# item\tfeatures...\n")
        for label, row in zip(labels, values):
            fh.write(label + "\t" + "\t".join(repr(float(v)) for v in row) + "\n")


@dataclass(frozen=True)
class FeatureTable:
    """Per-item feature rows plus (optional) standardization statistics."""

    values: np.ndarray  # (I, L)
    means: np.ndarray | None = None
    stds: np.ndarray | None = None
    standardized: bool = False

    @property
    def num_items(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.values[i]


def align_features(labels, values: np.ndarray, item_labels) -> FeatureTable:
    """Reorder raw feature rows to match the dataset's item indexing."""
    index = {label: k for k, label in enumerate(labels)}
    rows = np.empty((len(item_labels), values.shape[1]), dtype=np.float64)
    for i, label in enumerate(item_labels):
        if label not in index:
            raise DataError(f"no feature vector for item {label!r}")
        rows[i] = values[index[label]]
    return FeatureTable(rows)


def standardize_features(table: FeatureTable, training_items) -> FeatureTable:
    """Center/scale every column using statistics of the training items only.

    Population variance; the transform is applied to all items so cold items
    are expressed in the training items' units.
    """
    training_items = np.asarray(training_items, dtype=np.int64)
    if training_items.size == 0:
        raise DataError("training item set is empty")
    sub = table.values[training_items]
    means = sub.mean(axis=0)
    stds = sub.std(axis=0)  # population (ddof=0)
    bad = np.flatnonzero(stds <= 0)
    if bad.size:
        raise DataError(f"feature dimension {int(bad[0])} is constant over training items")
    return FeatureTable((table.values - means) / stds, means, stds, standardized=True)


# ---------------------------------------------------------------------------
# Activity filtering
# ---------------------------------------------------------------------------

def filter_activity(triplets: InteractionTriplets, min_user_songs: int,
                    min_item_users: int) -> InteractionTriplets:
    """Drop inactive users/items, iterating to a fixpoint, then re-densify.

    A user survives with >= min_user_songs surviving items; an item survives
    with >= min_item_users surviving users. Counted on raw playcounts.
    """
    if min_user_songs < 1 or min_item_users < 1:
        raise ValueError("activity thresholds must be >= 1")
    keep = np.ones(triplets.num_entries, dtype=bool)
    while True:
        u_deg = np.bincount(triplets.users[keep], minlength=triplets.num_users)
        i_deg = np.bincount(triplets.items[keep], minlength=triplets.num_items)
        drop = (u_deg[triplets.users] < min_user_songs) | \
               (i_deg[triplets.items] < min_item_users)
        drop &= keep
        if not drop.any():
            break
        keep &= ~drop
    if not keep.any():
        raise DataError("activity filtering removed every interaction")
    users = triplets.users[keep]
    items = triplets.items[keep]
    counts = triplets.counts[keep]
    u_ids = np.unique(users)
    i_ids = np.unique(items)
    u_map = np.full(triplets.num_users, -1, dtype=np.int64)
    i_map = np.full(triplets.num_items, -1, dtype=np.int64)
    u_map[u_ids] = np.arange(u_ids.size)
    i_map[i_ids] = np.arange(i_ids.size)
    return InteractionTriplets(
        u_map[users], i_map[items], counts.copy(), int(u_ids.size), int(i_ids.size),
        tuple(triplets.user_labels[u] for u in u_ids),
        tuple(triplets.item_labels[i] for i in i_ids))


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    """Partition of split units (items in cold mode, triplet indices in warm
    mode) into a validation set and num_folds cross-validation folds.

    Warm mode adds train_always: triplets pinned to the training side under
    every fold rotation (single-interaction items and orphan repairs).
    """

    mode: str  # "cold" | "warm"
    seed: int
    num_folds: int
    val_fraction: float
    validation: np.ndarray
    folds: tuple[np.ndarray, ...]
    train_always: np.ndarray

    @property
    def num_units(self) -> int:
        return int(self.validation.size + self.train_always.size
                   + sum(f.size for f in self.folds))

    def fold_assignment(self) -> dict:
        """Unit -> fold index; validation units map to the string 'val' and
        pinned warm units to TRAIN_ALWAYS."""
        out: dict = {}
        for unit in self.validation:
            out[int(unit)] = "val"
        for unit in self.train_always:
            out[int(unit)] = TRAIN_ALWAYS
        for k, fold in enumerate(self.folds):
            for unit in fold:
                out[int(unit)] = k
        return out


def _partition_units(num_units: int, num_folds: int, val_fraction: float,
                     rng: np.random.Generator):
    if not (0.0 < val_fraction < 1.0):
        raise ValueError("val_fraction must lie in (0, 1)")
    if num_folds < 1:
        raise ValueError("num_folds must be >= 1")
    n_val = math.ceil(val_fraction * num_units)
    remaining = num_units - n_val
    if remaining < num_folds:
        raise DataError(
            f"cannot split {num_units} units into {n_val} validation units "
            f"plus {num_folds} non-empty folds")
    perm = rng.permutation(num_units)
    validation = np.sort(perm[:n_val])
    rest = perm[n_val:]
    base = remaining // num_folds
    extra = remaining % num_folds
    folds = []
    start = 0
    for k in range(num_folds):
        size = base + (1 if k < extra else 0)
        folds.append(np.sort(rest[start:start + size]))
        start += size
    return validation, tuple(folds)


def split_cold(num_items: int, num_folds: int, val_fraction: float, seed: int) -> SplitPlan:
    """Item-level split: ceil(val_fraction * I) validation items, the rest in
    near-equal folds (sizes differ by at most one)."""
    rng = rng_for(seed, "split.cold")
    validation, folds = _partition_units(num_items, num_folds, val_fraction, rng)
    return SplitPlan("cold", seed, num_folds, val_fraction, validation, folds,
                     np.empty(0, dtype=np.int64))


def split_warm(triplets: InteractionTriplets, num_folds: int, val_fraction: float,
               seed: int) -> SplitPlan:
    """Triplet-level split with orphan repair.

    After the random partition, a repair pass guarantees that under every
    fold rotation each item appearing in an evaluation bucket (validation or
    the held-out fold) keeps at least one training triplet. Items whose
    triplets would not cover two distinct folds get one triplet moved to the
    train_always pool; an item with a single triplet is dropped from
    evaluation entirely (its triplet is pinned to training).
    """
    rng = rng_for(seed, "split.warm")
    validation, folds = _partition_units(triplets.num_entries, num_folds,
                                         val_fraction, rng)
    fold_of = np.full(triplets.num_entries, -2, dtype=np.int64)
    in_val = np.zeros(triplets.num_entries, dtype=bool)
    in_val[validation] = True
    for k, fold in enumerate(folds):
        fold_of[fold] = k

    always = np.zeros(triplets.num_entries, dtype=bool)
    order = np.argsort(triplets.items, kind="stable")
    item_bounds = np.searchsorted(triplets.items[order], np.arange(triplets.num_items + 1))
    for i in range(triplets.num_items):
        idx = order[item_bounds[i]:item_bounds[i + 1]]
        if idx.size == 0:
            continue
        if idx.size == 1:
            always[idx[0]] = True
            in_val[idx[0]] = False
            continue
        covered = np.unique(fold_of[idx][~in_val[idx]])
        covered = covered[covered >= 0]
        if covered.size >= 2:
            continue
        # Prefer pulling a validation triplet so fold sizes stay balanced.
        val_members = idx[in_val[idx]]
        pool = val_members if val_members.size else idx
        pick = int(pool[rng.integers(pool.size)])
        always[pick] = True
        in_val[pick] = False

    always_idx = np.flatnonzero(always)
    validation = np.flatnonzero(in_val)
    new_folds = tuple(np.array([e for e in fold if not always[e]], dtype=np.int64)
                      for fold in folds)
    return SplitPlan("warm", seed, num_folds, val_fraction, validation,
                     new_folds, always_idx)


def scan_warm_orphans(plan: SplitPlan, triplets: InteractionTriplets) -> list[tuple[int, int]]:
    """Brute-force membership scan of the warm orphan invariant.

    Returns (fold, item) pairs where an item appears in an evaluation bucket
    of that fold rotation without any training triplet. Empty means the plan
    is sound.
    """
    if plan.mode != "warm":
        raise ValueError("orphan scan applies to warm plans")
    violations = []
    for k in range(plan.num_folds):
        train_items = set(triplets.items[plan.train_always])
        for j, fold in enumerate(plan.folds):
            if j != k:
                train_items.update(triplets.items[fold])
        eval_items = set(triplets.items[plan.validation])
        eval_items.update(triplets.items[plan.folds[k]])
        for item in sorted(eval_items - train_items):
            violations.append((k, int(item)))
    return violations


@dataclass(frozen=True)
class FoldMembership:
    """One materialized rotation of a SplitPlan.

    fold may be None (no held-out test bucket: all folds train). Cold mode
    carries item sets; warm mode carries triplet-index sets.
    """

    mode: str
    fold: int | None
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def train_entry_idx(self, triplets: InteractionTriplets) -> np.ndarray:
        """Indices of training triplets in the base triplet array."""
        if self.mode == "warm":
            return self.train
        mask = np.zeros(triplets.num_items, dtype=bool)
        mask[self.train] = True
        return np.flatnonzero(mask[triplets.items])

    def bucket_units(self, bucket: str) -> np.ndarray:
        if bucket == "validation":
            return self.validation
        if bucket == "test":
            return self.test
        raise ValueError(f"unknown bucket {bucket!r}")


def materialize_fold(plan: SplitPlan, fold: int | None) -> FoldMembership:
    """Instantiate a rotation: test = the given fold, train = the others."""
    if fold is not None and not (0 <= fold < plan.num_folds):
        raise ValueError(f"fold {fold} out of range")
    parts = [plan.train_always]
    parts.extend(f for k, f in enumerate(plan.folds) if k != fold)
    train = np.sort(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)
    test = plan.folds[fold] if fold is not None else np.empty(0, dtype=np.int64)
    return FoldMembership(plan.mode, fold, train, plan.validation.copy(), test.copy())


def write_split_plan(path, plan: SplitPlan) -> None:
    """Text manifest; warm-mode units are row indices into the triplet file
    this plan was built from."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# split plan; units are item ids (cold) or triplet row indices (warm)\n")
        fh.write(f"mode = {plan.mode}\n")
        fh.write(f"seed = {plan.seed}\n")
        fh.write(f"num_folds = {plan.num_folds}\n")
        fh.write(f"val_fraction = {plan.val_fraction!r}\n")
        fh.write(f"num_units = {plan.num_units}\n")
        fh.write("[validation]\n")
        fh.write(" ".join(str(int(x)) for x in plan.validation) + "\n")
        for k, fold in enumerate(plan.folds):
            fh.write(f"[fold {k}]\n")
            fh.write(" ".join(str(int(x)) for x in fold) + "\n")
        fh.write("[train_always]\n")
        fh.write(" ".join(str(int(x)) for x in plan.train_always) + "\n")


def read_split_plan(path) -> SplitPlan:
    header: dict[str, str] = {}
    sections: dict[str, np.ndarray] = {}
    current = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                sections[current] = np.empty(0, dtype=np.int64)
            elif current is not None:
                sections[current] = np.array([int(x) for x in line.split()], dtype=np.int64)
            elif "=" in line:
                key, _, value = line.partition("=")
                header[key.strip()] = value.strip()
            else:
                raise ParseError(f"{path}:{lineno}: unparseable line")
    try:
        num_folds = int(header["num_folds"])
        plan = SplitPlan(
            mode=header["mode"],
            seed=int(header["seed"]),
            num_folds=num_folds,
            val_fraction=float(header["val_fraction"]),
            validation=sections["validation"],
            folds=tuple(sections[f"fold {k}"] for k in range(num_folds)),
            train_always=sections.get("train_always", np.empty(0, dtype=np.int64)),
        )
    except KeyError as exc:
        raise ParseError(f"{path}: missing split-plan field {exc}")
    if plan.num_units != int(header["num_units"]):
        raise ParseError(f"{path}: unit count mismatch")
    return plan


# ---------------------------------------------------------------------------
# Synthetic planted-model generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlantedModel:
    """Ground-truth parameters behind a synthetic dataset."""

    W: np.ndarray  # (K, U)
    H: np.ndarray  # (K, I)
    feature_map: np.ndarray  # (K, L); H ~= feature_map @ features.T
    affinity_median: float


@dataclass(frozen=True)
class SyntheticData:
    triplets: InteractionTriplets
    features: FeatureTable
    planted: PlantedModel


def generate_synthetic(num_users: int, num_items: int, k_true: int, num_features: int,
                       noise: float, density: float, seed: int,
                       tau: float = 7.0) -> SyntheticData:
    """Draw a dataset from a planted low-rank model with feature-predictable
    item embeddings.

    A pair's observation probability grows exponentially with its planted
    affinity (normalized so the expected density matches `density`), the way
    listening data concentrates on liked items. An observed pair whose
    (noisy) affinity exceeds the median affinity gets a playcount at or
    above `tau`; other observed pairs get a sub-threshold count. The
    binarized matrix is therefore a noisy indicator of above-median affinity
    among observed pairs, exact when noise=0.
    """
    if min(num_users, num_items, k_true, num_features) < 1:
        raise DataError("synthetic dimensions must be positive")
    if not (0.0 < density <= 1.0):
        raise DataError("density must lie in (0, 1]")
    if noise < 0:
        raise DataError("noise must be >= 0")
    rng = rng_for(seed, "synthetic")
    W = rng.normal(0.0, 1.0, size=(k_true, num_users)) / math.sqrt(k_true)
    X = rng.normal(0.0, 1.0, size=(num_items, num_features))
    M = rng.normal(0.0, 1.0, size=(k_true, num_features)) / math.sqrt(num_features)
    H = M @ X.T + noise * rng.normal(0.0, 1.0, size=(k_true, num_items))
    affinity = W.T @ H  # (U, I)
    med = float(np.median(affinity))

    z = (affinity - affinity.mean()) / max(affinity.std(), 1e-12)
    weight = np.exp(z)
    p_obs = np.minimum(1.0, density * weight / weight.mean())
    observed = rng.random(size=(num_users, num_items)) < p_obs
    decision = affinity + noise * rng.normal(0.0, 1.0, size=affinity.shape)
    positive = decision >= med

    upos, ipos = np.nonzero(observed & positive)
    uneg, ineg = np.nonzero(observed & ~positive)
    # Positives land at tau or above, negatives strictly below.
    cpos = tau + rng.geometric(0.5, size=upos.size) - 1.0
    cneg = rng.integers(1, int(max(2, tau)), size=uneg.size).astype(np.float64)
    users = np.concatenate([upos, uneg])
    items = np.concatenate([ipos, ineg])
    counts = np.concatenate([cpos, cneg])
    order = np.lexsort((items, users))
    triplets = InteractionTriplets.create(
        users[order], items[order], counts[order], num_users, num_items)
    return SyntheticData(
        triplets=triplets,
        features=FeatureTable(X),
        planted=PlantedModel(W=W, H=H, feature_map=M, affinity_median=med),
    )

"""Datasets, seeded randomness, subset sampling and pathway mappings."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError, ShapeError


@dataclass(frozen=True)
class RandomSource:
    """Seeded PCG64 generator factory with named, independent streams.

    ``stream(purpose)`` always returns a fresh generator positioned at the
    start of the stream for ``(seed, purpose)``.
    """

    seed: int

    def stream(self, purpose: str) -> np.random.Generator:
        key = zlib.crc32(purpose.encode("utf-8"))
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(self.seed), key])))

    def child(self, purpose: str) -> "RandomSource":
        return RandomSource(int(self.stream(purpose).integers(0, 2**63 - 1)))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RandomSource):
        return rng.stream("default")
    return np.random.default_rng(rng)


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray = None
    property_flags: np.ndarray = None
    n_classes: int = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-d, got shape {self.features.shape}")
        n = self.features.shape[0]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.ids is None:
            self.ids = np.arange(n, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.property_flags is not None:
            self.property_flags = np.asarray(self.property_flags, dtype=np.int64)
        for name in ("labels", "ids", "property_flags"):
            arr = getattr(self, name)
            if arr is not None and arr.shape != (n,):
                raise ShapeError(f"{name} has shape {arr.shape}, expected ({n},)")
        if np.unique(self.ids).size != n:
            raise InputError("dataset ids must be unique")
        if n and self.labels.min() < 0:
            raise InputError("labels must be non-negative")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1 if n else 0
        elif n and self.labels.max() >= self.n_classes:
            raise InputError(f"label {self.labels.max()} outside [0, {self.n_classes})")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def take(self, positions) -> "Dataset":
        positions = np.asarray(positions, dtype=np.int64)
        flags = None if self.property_flags is None else self.property_flags[positions]
        return Dataset(self.features[positions], self.labels[positions], self.ids[positions],
                       flags, self.n_classes)

    def positions_of(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        order = np.argsort(self.ids)
        pos = np.searchsorted(self.ids, ids, sorter=order)
        pos = np.clip(pos, 0, len(self) - 1)
        found = order[pos]
        if ids.size and not np.array_equal(self.ids[found], ids):
            missing = np.setdiff1d(ids, self.ids)
            raise InputError(f"unknown ids: {missing[:5].tolist()}")
        return found

    def select(self, ids) -> "Dataset":
        return self.take(self.positions_of(ids))

    def exclude(self, ids) -> "Dataset":
        return self.take(np.flatnonzero(~np.isin(self.ids, ids)))

    def concat(self, other: "Dataset") -> "Dataset":
        flags = None
        if self.property_flags is not None and other.property_flags is not None:
            flags = np.concatenate([self.property_flags, other.property_flags])
        return Dataset(np.vstack([self.features, other.features]),
                       np.concatenate([self.labels, other.labels]),
                       np.concatenate([self.ids, other.ids]), flags,
                       max(self.n_classes, other.n_classes))

    def equals(self, other: "Dataset") -> bool:
        def same(a, b):
            if a is None or b is None:
                return a is b
            return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()

        return (self.n_classes == other.n_classes and same(self.features, other.features)
                and same(self.labels, other.labels) and same(self.ids, other.ids)
                and same(self.property_flags, other.property_flags))


def gen_blobs(seed, n_per_class: int, n_classes: int, dim: int, spread: float) -> Dataset:
    """Gaussian class clusters with means drawn uniformly on the unit sphere."""
    if n_classes < 2 or dim < 1 or spread < 0:
        raise InputError("need n_classes >= 2, dim >= 1, spread >= 0")
    rng = RandomSource(seed).stream("blobs")
    means = rng.standard_normal((n_classes, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    x = means[labels] + spread * rng.standard_normal((labels.size, dim))
    order = rng.permutation(labels.size)
    return Dataset(x[order], labels[order], n_classes=n_classes)


def blob_means(seed, n_classes: int, dim: int) -> np.ndarray:
    """The class means :func:`gen_blobs` uses for ``seed``."""
    rng = RandomSource(seed).stream("blobs")
    means = rng.standard_normal((n_classes, dim))
    return means / np.linalg.norm(means, axis=1, keepdims=True)


def gen_property_tabular(seed, n: int, dim: int, ratio: float, shift: float = 1.5,
                         task_seed: int = 0, id_offset: int = 0, label_bias: float = 3.0) -> Dataset:
    """Binary tabular task whose rows carry a property flag.

    Exactly ``round(ratio * n)`` rows are flagged. Flagged rows have their
    first feature shifted by ``shift`` and their label logit raised by
    ``label_bias``. Because the flag is only partly recoverable from the
    features, the flag ratio moves a fitted model's class-1 confidence.
    The linear label rule is shared by every dataset with the same ``task_seed``.
    """
    if not 0.0 <= ratio <= 1.0:
        raise InputError(f"property ratio must lie in [0, 1], got {ratio}")
    if dim < 1:
        raise InputError("dim must be >= 1")
    task = RandomSource(task_seed).stream("property-task")
    w = task.standard_normal(dim)
    w[0] = 2.0 * np.linalg.norm(w[1:]) if dim > 1 else 1.0
    rng = RandomSource(seed).stream("property-data")
    k = int(round(ratio * n))
    flags = np.zeros(n, dtype=np.int64)
    flags[rng.permutation(n)[:k]] = 1
    x = rng.standard_normal((n, dim))
    x[:, 0] += shift * flags
    logits = (x - np.r_[shift / 2, np.zeros(dim - 1)]) @ w / np.linalg.norm(w) + label_bias * flags
    labels = (logits + 0.5 * rng.standard_normal(n) > 0).astype(np.int64)
    return Dataset(x, labels, np.arange(id_offset, id_offset + n), flags, n_classes=2)


@dataclass
class SplitPlan:
    seed: int
    subsets: list
    policy: str = "with-replacement"

    def __len__(self):
        return len(self.subsets)


def split_auxiliary(dataset: Dataset, s: int, subset_size: int, rng, policy: str = "with-replacement",
                    seed: int = None) -> SplitPlan:
    """Draw ``s`` subsets of ids, each sampled without replacement.

    With ``policy="with-replacement"`` subsets are drawn independently and may
    overlap; ``"disjoint"`` carves them from one permutation.
    """
    if s < 1:
        raise InputError("s must be >= 1")
    if subset_size > len(dataset):
        raise InputError(f"subset_size {subset_size} exceeds dataset size {len(dataset)}")
    gen = as_generator(rng)
    if policy == "with-replacement":
        subsets = [np.sort(gen.choice(dataset.ids, size=subset_size, replace=False)) for _ in range(s)]
    elif policy == "disjoint":
        if s * subset_size > len(dataset):
            raise InputError(f"{s} disjoint subsets of {subset_size} exceed {len(dataset)} examples")
        perm = gen.permutation(dataset.ids)
        subsets = [np.sort(perm[i * subset_size:(i + 1) * subset_size]) for i in range(s)]
    else:
        raise InputError(f"unknown overlap policy {policy!r}")
    return SplitPlan(seed, subsets, policy)


def pathway_digits(index, n_experts: int, n_layers: int) -> np.ndarray:
    """Expert choice per layer for pathway ``index`` (lexicographic, layer 0 most significant)."""
    index = np.asarray(index, dtype=np.int64)
    powers = n_experts ** np.arange(n_layers - 1, -1, -1, dtype=np.int64)
    return (index[..., None] // powers) % n_experts


@dataclass
class MappingMatrix:
    """Fixed assignment of each training id to exactly one pathway.

    Stored as one pathway index per id; :meth:`to_dense` gives the one-hot
    binary matrix view.
    """

    ids: np.ndarray
    assignment: np.ndarray
    n_pathways: int
    _lookup: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if self.ids.shape != self.assignment.shape:
            raise ShapeError("ids and assignment lengths differ")
        if self.assignment.size and (self.assignment.min() < 0 or self.assignment.max() >= self.n_pathways):
            raise InputError("assignment outside pathway range")

    @property
    def n_examples(self) -> int:
        return self.ids.size

    def _table(self):
        if self._lookup is None:
            self._lookup = dict(zip(self.ids.tolist(), self.assignment.tolist()))
        return self._lookup

    def __contains__(self, example_id) -> bool:
        return int(example_id) in self._table()

    def pathway_of(self, example_id) -> int:
        try:
            return self._table()[int(example_id)]
        except KeyError:
            raise InputError(f"id {example_id} is not in the mapping") from None

    def subset(self, pathway: int) -> np.ndarray:
        return self.ids[self.assignment == pathway]

    def subset_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_pathways)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n_examples, self.n_pathways), dtype=np.int8)
        dense[np.arange(self.n_examples), self.assignment] = 1
        return dense

    def expert_ids(self, layer: int, expert: int, n_experts: int, n_layers: int) -> np.ndarray:
        """Ids routed through expert ``(layer, expert)`` by their assigned pathway."""
        digits = pathway_digits(self.assignment, n_experts, n_layers)
        return self.ids[digits[:, layer] == expert]


def build_mapping(dataset, n_experts: int, n_layers: int, rng) -> MappingMatrix:
    """Uniformly random near-equal partition of the ids over ``M**L`` pathways."""
    ids = dataset.ids if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=np.int64)
    n_pathways = n_experts ** n_layers
    if ids.size < n_pathways:
        raise InputError(f"{ids.size} examples cannot fill {n_pathways} pathways")
    gen = as_generator(rng)
    perm = gen.permutation(ids.size)
    assignment = np.empty(ids.size, dtype=np.int64)
    assignment[perm] = np.arange(ids.size) % n_pathways
    return MappingMatrix(ids.copy(), assignment, n_pathways)


def sample_dq(dataset: Dataset, fraction: float, rng) -> Dataset:
    """Uniform subsample of ``round(fraction * N)`` rows without replacement."""
    if not 0.0 < fraction <= 1.0:
        raise InputError(f"fraction must lie in (0, 1], got {fraction}")
    k = max(1, int(round(fraction * len(dataset))))
    gen = as_generator(rng)
    return dataset.take(np.sort(gen.choice(len(dataset), size=k, replace=False)))


def sample_with_property(dataset: Dataset, size: int, ratio: float, rng) -> Dataset:
    """``size`` rows without replacement, exactly ``round(ratio * size)`` of them flagged."""
    if dataset.property_flags is None:
        raise InputError("dataset has no property flags")
    if not 0.0 <= ratio <= 1.0:
        raise InputError(f"property ratio must lie in [0, 1], got {ratio}")
    k = int(round(ratio * size))
    flagged = np.flatnonzero(dataset.property_flags == 1)
    plain = np.flatnonzero(dataset.property_flags == 0)
    if k > flagged.size or size - k > plain.size:
        raise InputError(f"cannot draw {size} rows at ratio {ratio} from "
                         f"{flagged.size} flagged and {plain.size} unflagged rows")
    gen = as_generator(rng)
    pos = np.concatenate([gen.choice(flagged, k, replace=False),
                          gen.choice(plain, size - k, replace=False)])
    return dataset.take(np.sort(pos))
